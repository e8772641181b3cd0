#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <srdl/gradcheck.hpp>
#include <srdl/tensor.hpp>

using namespace srdl;

namespace {

Tensor random_tensor(Shape s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("matmul forward hand cases") {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor c = matmul(eye, a);
  CHECK(c.data == std::vector<double>{1, 2, 3, 4});

  Tensor r = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  CHECK(r.data[0] == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({3, 4});
  Tensor b({3, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[3x4]"), shape_error);
  try {
    matmul(a, b);
  } catch (const shape_error& e) {
    CHECK(std::string(e.what()).find("[3x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  auto rep = gradcheck({a, b}, [](Tape&, std::vector<Tensor>& p) { return sum_all(matmul(p[0], p[1])); });
  CHECK(rep.max_rel <= 1e-6);
}

TEST_CASE("relu forward and gradient mask") {
  Tensor x = Tensor::from({1, 3}, {-1, 0, 2});
  Tensor y = relu(x);
  CHECK(y.data == std::vector<double>{0, 0, 2});

  Tensor neg = Tensor::from({2, 2}, {-1, -2, -3, -4});
  CHECK(relu(neg).data == std::vector<double>{0, 0, 0, 0});

  // away from 0 the gradient is exactly the indicator(x > 0)
  Tape tape;
  Tensor xt = tape.leaf(Tensor::from({1, 4}, {-2, -0.5, 0.5, 3}), true);
  tape.backward(sum_all(relu(xt)));
  CHECK(tape.grad(xt).data == std::vector<double>{0, 0, 1, 1});

  Rng rng(3);
  Tensor r(Shape{4, 4});
  for (double& v : r.data) v = rng.normal() + (rng.uniform() < 0.5 ? -0.5 : 0.5);  // keep away from 0
  for (double& v : r.data)
    if (std::fabs(v) < 0.1) v = 0.2;
  auto rep = gradcheck({r}, [](Tape&, std::vector<Tensor>& p) { return sum_all(relu(p[0])); });
  CHECK(rep.max_rel <= 1e-6);
}

TEST_CASE("sigmoid forward properties and gradient") {
  CHECK(sigmoid(Tensor::scalar(0.0)).data[0] == doctest::Approx(0.5).epsilon(1e-15));

  // strictly inside (0,1) even under saturation
  for (double v : {-800.0, -40.0, -5.0, 0.0, 5.0, 40.0, 800.0}) {
    const double s = sigmoid(Tensor::scalar(v)).data[0];
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  // monotone, approaching 1 as x grows
  double prev = 0.0;
  for (double v : {-20.0, -5.0, -1.0, 0.0, 1.0, 5.0, 20.0}) {
    const double s = sigmoid(Tensor::scalar(v)).data[0];
    CHECK(s > prev);
    prev = s;
  }
  CHECK(prev > 1.0 - 1e-8);

  Rng rng(11);
  Tensor x = random_tensor({3, 5}, rng);
  auto rep = gradcheck({x}, [](Tape&, std::vector<Tensor>& p) { return sum_all(sigmoid(p[0])); });
  CHECK(rep.max_rel <= 1e-6);
}

TEST_CASE("batch_norm normalization identity and guards") {
  Tensor gamma = Tensor::from({3}, {1, 1, 1});
  Tensor beta = Tensor::from({3}, {0, 0, 0});

  // constant column -> zero column, variance guarded by eps
  Tensor x = Tensor::from({4, 3}, {5, 1, 0, 5, 2, 1, 5, 3, 2, 5, 4, 3});
  Tensor y = batch_norm(x, gamma, beta, 1e-5);
  for (int i = 0; i < 4; ++i) CHECK(y.at(i, 0) == doctest::Approx(0.0).epsilon(1e-12));

  // per-channel mean ~ beta, std ~ gamma
  Rng rng(5);
  Tensor big = random_tensor({64, 4}, rng);
  Tensor g2 = Tensor::from({4}, {2, 2, 2, 2});
  Tensor b2 = Tensor::from({4}, {0.5, 0.5, 0.5, 0.5});
  Tensor z = batch_norm(big, g2, b2, 1e-8);
  for (int j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (int i = 0; i < 64; ++i) mean += z.at(i, j);
    mean /= 64.0;
    double var = 0.0;
    for (int i = 0; i < 64; ++i) var += (z.at(i, j) - mean) * (z.at(i, j) - mean);
    var /= 64.0;
    CHECK(mean == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(std::sqrt(var) == doctest::Approx(2.0).epsilon(1e-4));
  }

  Tensor one_row({1, 3});
  CHECK_THROWS_AS(batch_norm(one_row, gamma, beta), shape_error);
}

TEST_CASE("batch_norm gradient vs finite differences") {
  Rng rng(9);
  Tensor x = random_tensor({8, 4}, rng);
  Tensor gamma = Tensor::from({4}, {1.1, 0.9, 1.3, 0.7});
  Tensor beta = Tensor::from({4}, {0.1, -0.2, 0.0, 0.4});
  auto rep = gradcheck({x, gamma, beta}, [](Tape&, std::vector<Tensor>& p) {
    // square so the loss actually depends on the normalized values
    Tensor y = batch_norm(p[0], p[1], p[2], 1e-5);
    return mean_all(mul(y, y));
  });
  CHECK(rep.max_rel <= 1e-5);
}

TEST_CASE("batch_norm forward is row-permutation invariant bitwise") {
  Rng rng(21);
  Tensor x = random_tensor({7, 3}, rng);
  Tensor gamma = Tensor::from({3}, {1.2, 0.8, 1.0});
  Tensor beta = Tensor::from({3}, {0.0, 0.3, -0.1});
  Tensor y = batch_norm(x, gamma, beta);

  std::vector<std::int64_t> perm = {3, 0, 6, 1, 5, 2, 4};
  Tensor xp(Shape{7, 3});
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 3; ++j) xp.at(i, j) = x.at(perm[i], j);
  Tensor yp = batch_norm(xp, gamma, beta);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 3; ++j) CHECK(yp.at(i, j) == y.at(perm[i], j));
}

TEST_CASE("max_pool_points forward and one-hot backward") {
  Tensor x = Tensor::from({2, 2}, {1, 5, 3, 2});
  Tensor y = max_pool_points(x);
  CHECK(y.data == std::vector<double>{3, 5});

  Tensor single = Tensor::from({1, 3}, {4, -1, 2});
  CHECK(max_pool_points(single).data == std::vector<double>{4, -1, 2});

  Tape tape;
  Tensor xt = tape.leaf(Tensor::from({3, 2}, {1, 9, 7, 2, 3, 4}), true);
  tape.backward(sum_all(max_pool_points(xt)));
  Tensor g = tape.grad(xt);
  // exactly one nonzero entry per column
  for (int j = 0; j < 2; ++j) {
    int nonzero = 0;
    for (int i = 0; i < 3; ++i) nonzero += g.at(i, j) != 0.0;
    CHECK(nonzero == 1);
  }
  CHECK(g.at(1, 0) == 1.0);
  CHECK(g.at(0, 1) == 1.0);

  Rng rng(13);
  Tensor r = random_tensor({6, 3}, rng);  // distinct w.p. 1
  auto rep = gradcheck({r}, [](Tape&, std::vector<Tensor>& p) { return sum_all(max_pool_points(p[0])); });
  CHECK(rep.max_rel <= 1e-6);
}

TEST_CASE("max_pool ties resolve to the lowest index") {
  Tape tape;
  Tensor xt = tape.leaf(Tensor::from({3, 1}, {5, 5, 5}), true);
  tape.backward(sum_all(max_pool_points(xt)));
  Tensor g = tape.grad(xt);
  CHECK(g.data == std::vector<double>{1, 0, 0});
}

TEST_CASE("elementwise ops") {
  Rng rng(17);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor b = random_tensor({3, 3}, rng);

  // mean2 idempotence and symmetry hold exactly
  Tensor m = mean2(a, a);
  CHECK(m.data == a.data);
  CHECK(mean2(a, b).data == mean2(b, a).data);

  Tensor ones(Shape{3, 3}, 1.0);
  CHECK(mul(ones, b).data == b.data);

  CHECK_THROWS_AS(add(a, Tensor({2, 3})), shape_error);

  auto rep = gradcheck({a, b}, [](Tape&, std::vector<Tensor>& p) {
    Tensor s = add(p[0], p[1]);
    s = sub(s, mul(p[0], p[1]));
    s = mean2(s, p[0]);
    return sum_all(s);
  });
  CHECK(rep.max_rel <= 1e-6);
}

TEST_CASE("concat shape law and exact slice round-trip") {
  Rng rng(19);
  Tensor a = random_tensor({4, 2}, rng);
  Tensor b = random_tensor({4, 3}, rng);

  Tensor one = concat({a}, 1);
  CHECK(one.data == a.data);

  Tensor c = concat({a, b}, 1);
  CHECK(c.shape == Shape{4, 5});
  Tensor back_a = slice_cols(c, 0, 2);
  Tensor back_b = slice_cols(c, 2, 5);
  CHECK(back_a.data == a.data);
  CHECK(back_b.data == b.data);

  CHECK_THROWS_AS(concat({a, b}, 0), shape_error);
  CHECK_THROWS_AS(concat({a, b}, 2), shape_error);

  auto rep = gradcheck({a, b}, [](Tape&, std::vector<Tensor>& p) {
    return sum_all(mul(concat({p[0], p[1]}, 1), concat({p[1], p[0]}, 1)));
  });
  CHECK(rep.max_rel <= 1e-6);
}

TEST_CASE("concat along axis 0") {
  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  Tensor c = concat({a, b}, 0);
  CHECK(c.shape == Shape{3, 2});
  CHECK(c.data == std::vector<double>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("backward basics") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}), true);
  Tensor loss = sum_all(x);
  tape.backward(loss);
  CHECK(tape.grad(x).data == std::vector<double>{1, 1, 1, 1});

  // non-scalar loss rejected
  Tape t2;
  Tensor y = t2.leaf(Tensor::from({2, 1}, {1, 2}), true);
  CHECK_THROWS_AS(t2.backward(y), shape_error);

  // unreachable leaf gets a zero gradient
  Tape t3;
  Tensor used = t3.leaf(Tensor::scalar(2.0), true);
  Tensor unused = t3.leaf(Tensor::scalar(5.0), true);
  t3.backward(sum_all(used));
  CHECK_FALSE(t3.has_grad(unused));
  CHECK(t3.grad(unused).data == std::vector<double>{0});
}

TEST_CASE("backward through composite MLP vs finite differences") {
  Rng rng(23);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor w1 = random_tensor({3, 5}, rng);
  Tensor b1 = random_tensor({5}, rng);
  Tensor w2 = random_tensor({5, 2}, rng);
  auto rep = gradcheck({x, w1, b1, w2}, [](Tape&, std::vector<Tensor>& p) {
    Tensor h = relu(add_rowvec(matmul(p[0], p[1]), p[2]));
    return sum_all(matmul(h, p[3]));
  });
  CHECK(rep.max_rel <= 1e-5);
}

TEST_CASE("forward is deterministic bitwise") {
  auto run = [] {
    Rng rng(101);
    Tensor x = random_tensor({6, 4}, rng);
    Tensor w = random_tensor({4, 4}, rng);
    Tensor g = Tensor::from({4}, {1, 1, 1, 1});
    Tensor b = Tensor::from({4}, {0, 0, 0, 0});
    return batch_norm(relu(matmul(x, w)), g, b).data;
  };
  CHECK(run() == run());
}

TEST_CASE("NaN propagation is an error, never silent") {
  Tensor x = Tensor::from({1, 2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  Tensor ok(Shape{1, 2}, 1.0);
  CHECK_THROWS_AS(add(x, ok), numeric_error);
  Tensor inf = Tensor::from({1, 1}, {1e308});
  CHECK_THROWS_AS(mul(inf, Tensor::from({1, 1}, {1e308})), numeric_error);
}

TEST_CASE("sgd_step") {
  // lr = 0 leaves parameters bit-identical
  Tensor p = Tensor::from({2}, {1.5, -2.25});
  Tensor g = Tensor::from({2}, {10.0, 3.0});
  Tensor before = p;
  sgd_step({&p}, {g}, 0.0);
  CHECK(p.data == before.data);

  // one step on f(w) = w^2 from w=1 with lr 0.1: gradient 2w -> w = 0.8
  Tensor w = Tensor::scalar(1.0);
  Tape tape;
  Tensor wt = tape.leaf(w, true);
  Tensor loss = mul(wt, wt);
  tape.backward(loss);
  sgd_step({&w}, {tape.grad(wt)}, 0.1);
  CHECK(w.data[0] == doctest::Approx(0.8).epsilon(1e-15));

  CHECK_THROWS_AS(sgd_step({&p}, {Tensor({3})}, 0.1), shape_error);
}

TEST_CASE("sgd converges on a convex quadratic") {
  // f(w) = 0.5 * sum(a_i * (w_i - c_i)^2), analytic minimum at w = c
  const std::vector<double> a = {1.0, 2.0, 0.5, 3.0};
  const std::vector<double> c = {0.3, -1.2, 2.0, 0.7};
  Tensor w(Shape{4}, 0.0);
  for (int step = 0; step < 200; ++step) {
    Tape tape;
    Tensor wt = tape.leaf(w, true);
    Tensor ct = Tensor::from({4}, c);
    Tensor at = Tensor::from({4}, a);
    Tensor d = sub(wt, ct);
    Tensor loss = affine(sum_all(mul(at, mul(d, d))), 0.5, 0.0);
    tape.backward(loss);
    sgd_step({&w}, {tape.grad(wt)}, 0.2);
  }
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(w.data[i] - c[i]) < 1e-4);
}

TEST_CASE("gradient suite over many seeds stays within tolerance") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 7919 + 1);
    Tensor x = random_tensor({5, 3}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    Tensor gamma = Tensor::from({4}, {1.0, 1.1, 0.9, 1.2});
    Tensor beta = Tensor::from({4}, {0.0, 0.1, -0.1, 0.2});
    auto rep = gradcheck({x, w, gamma, beta}, [](Tape&, std::vector<Tensor>& p) {
      Tensor h = batch_norm(matmul(p[0], p[1]), p[2], p[3]);
      return mean_all(mul(sigmoid(h), h));
    });
    worst = std::max(worst, rep.max_rel);
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("structural ops gradients") {
  Rng rng(31);
  Tensor x = random_tensor({6, 3}, rng);
  std::vector<std::int64_t> idx = {0, 2, 2, 5, 1, 3, 3, 3};
  auto rep = gradcheck({x}, [&](Tape&, std::vector<Tensor>& p) {
    Tensor g = gather_rows(p[0], idx);
    Tensor m = group_max_rows(g, 2);
    Tensor pm = pair_max_rows(m);
    Tensor up = repeat_pairs_rows(pm, 4);
    Tensor tiled = tile_rows(max_pool_points(up), 4);
    Tensor t = transpose2d(concat({up, tiled}, 1));
    return mean_all(mul(t, t));
  });
  CHECK(rep.max_rel <= 1e-5);

  CHECK_THROWS_AS(gather_rows(x, {7}), shape_error);
  CHECK_THROWS_AS(group_max_rows(x, 4), shape_error);
}

TEST_CASE("pointwise helper gradients") {
  Rng rng(37);
  Tensor x(Shape{4, 2});
  for (double& v : x.data) v = rng.uniform(0.1, 0.9);
  auto rep = gradcheck({x}, [](Tape&, std::vector<Tensor>& p) {
    Tensor c = clamp(p[0], 0.05, 0.95);
    Tensor l = log_op(c);
    Tensor pw = pow_const(affine(c, -1.0, 1.0), 2.0);
    return mean_all(add(mul(l, pw), affine(c, 3.0, -1.0)));
  });
  CHECK(rep.max_rel <= 1e-5);
}
