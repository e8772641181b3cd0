#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <srdl/gradcheck.hpp>
#include <srdl/losses.hpp>

using namespace srdl;

TEST_CASE("bce hand values") {
  Tensor p = Tensor::scalar(0.5);
  Tensor y = Tensor::scalar(1.0);
  CHECK(bce(p, y).value() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // p == y exactly: clamp-limited, effectively zero
  Tensor perfect = Tensor::from({1, 2}, {1.0, 0.0});
  Tensor target = Tensor::from({1, 2}, {1.0, 0.0});
  CHECK(bce(perfect, target).value() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce(perfect, target).value() >= 0.0);
}

TEST_CASE("bce gradient vs finite differences") {
  Rng rng(3);
  Tensor p(Shape{2, 4});
  for (double& v : p.data) v = rng.uniform(0.05, 0.95);
  Tensor y(Shape{2, 4});
  for (double& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  auto rep = gradcheck({p}, [&](Tape&, std::vector<Tensor>& ps) { return bce(ps[0], y); });
  CHECK(rep.max_rel <= 1e-6);
}

TEST_CASE("focal loss hand value") {
  // alpha=0.25, gamma=2, p=0.9, y=1: 0.25 * 0.1^2 * (-ln 0.9)
  Tensor p = Tensor::scalar(0.9);
  Tensor y = Tensor::scalar(1.0);
  const double expected = 0.25 * 0.01 * (-std::log(0.9));
  CHECK(focal_loss(p, y, 0.25, 2.0).value() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(2.6341e-4).epsilon(1e-3));
}

TEST_CASE("focal loss with gamma=0 and alpha=0.5 is half of bce") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor p(Shape{3, 3});
    for (double& v : p.data) v = rng.uniform(0.01, 0.99);
    Tensor y(Shape{3, 3});
    for (double& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const double f = focal_loss(p, y, 0.5, 0.0).value();
    const double b = bce(p, y).value();
    CHECK(std::fabs(f - 0.5 * b) <= 1e-12);
  }
}

TEST_CASE("focal loss downweights well-classified examples") {
  Tensor y = Tensor::scalar(1.0);
  const double good = focal_loss(Tensor::scalar(0.9), y, 0.25, 2.0).value();
  const double bad = focal_loss(Tensor::scalar(0.1), y, 0.25, 2.0).value();
  CHECK(good < bad);
}

TEST_CASE("focal loss rejects negative gamma") {
  CHECK_THROWS_AS(focal_loss(Tensor::scalar(0.5), Tensor::scalar(1.0), 0.25, -1.0), error);
}

TEST_CASE("focal gradient vs finite differences") {
  Rng rng(7);
  Tensor p(Shape{2, 3});
  for (double& v : p.data) v = rng.uniform(0.05, 0.95);
  Tensor y(Shape{2, 3});
  for (double& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  auto rep = gradcheck({p}, [&](Tape&, std::vector<Tensor>& ps) { return focal_loss(ps[0], y, 0.25, 2.0); });
  CHECK(rep.max_rel <= 1e-5);
}

TEST_CASE("smooth_l1 hand values") {
  Tensor z = Tensor::scalar(0.0);
  CHECK(smooth_l1(z, z).value() == 0.0);
  CHECK(smooth_l1(Tensor::scalar(0.5), Tensor::scalar(0.0)).value() == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(smooth_l1(Tensor::scalar(2.0), Tensor::scalar(0.0)).value() == doctest::Approx(1.5).epsilon(1e-15));
  CHECK_THROWS_AS(smooth_l1(z, z, 0.0), error);
  CHECK_THROWS_AS(smooth_l1(z, z, -1.0), error);
  CHECK_THROWS_AS(smooth_l1(Tensor({2}), Tensor({3})), shape_error);
}

TEST_CASE("smooth_l1 is continuous and C1 at the transition") {
  const double beta = 1.0;
  const double eps = 1e-7;
  auto f = [&](double d) { return smooth_l1(Tensor::scalar(d), Tensor::scalar(0.0), beta).value(); };
  // value continuity at |d| = beta
  CHECK(std::fabs(f(beta - eps) - f(beta + eps)) < 1e-6);
  // derivative from both sides equals sign(d)
  const double dl = (f(beta) - f(beta - eps)) / eps;
  const double dr = (f(beta + eps) - f(beta)) / eps;
  CHECK(dl == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(dr == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("smooth_l1 gradient vs finite differences (both branches)") {
  Tensor pred = Tensor::from({1, 4}, {0.2, -0.7, 2.5, -3.1});
  Tensor target = Tensor::from({1, 4}, {0.0, 0.0, 0.0, 0.0});
  auto rep = gradcheck({pred}, [&](Tape&, std::vector<Tensor>& ps) { return smooth_l1(ps[0], target, 1.0); });
  CHECK(rep.max_rel <= 1e-6);
}

TEST_CASE("total_loss weighted sum") {
  LossWeights w;  // defaults 1, 4, 2
  Tensor one = Tensor::scalar(1.0);
  CHECK(total_loss(one, one, one, one, one, w).value() == doctest::Approx(10.0).epsilon(1e-15));

  LossWeights zero{0.0, 0.0, 0.0};
  CHECK(total_loss(one, one, one, one, one, zero).value() == 0.0);

  LossWeights bad{-1.0, 4.0, 2.0};
  CHECK_THROWS_AS(total_loss(one, one, one, one, one, bad), config_error);

  Tensor nan = Tensor::scalar(1.0);
  nan.data[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(total_loss(nan, one, one, one, one, w), numeric_error);
}

TEST_CASE("total_loss distributes weights to parts exactly") {
  LossWeights w{1.0, 4.0, 2.0};
  auto rep = gradcheck({Tensor::scalar(0.3), Tensor::scalar(0.5), Tensor::scalar(0.7), Tensor::scalar(0.9),
                        Tensor::scalar(1.1)},
                       [&](Tape&, std::vector<Tensor>& p) {
                         return total_loss(p[0], p[1], p[2], p[3], p[4], w);
                       });
  CHECK(rep.max_rel <= 1e-9);

  // gradients are the weights themselves (linearity)
  Tape tape;
  std::vector<Tensor> parts;
  for (int i = 0; i < 5; ++i) parts.push_back(tape.leaf(Tensor::scalar(1.0 + i), true));
  tape.backward(total_loss(parts[0], parts[1], parts[2], parts[3], parts[4], w));
  CHECK(tape.grad(parts[0]).data[0] == 1.0);
  CHECK(tape.grad(parts[1]).data[0] == 1.0);
  CHECK(tape.grad(parts[2]).data[0] == 4.0);
  CHECK(tape.grad(parts[3]).data[0] == 2.0);
  CHECK(tape.grad(parts[4]).data[0] == 2.0);
}

TEST_CASE("losses are non-negative") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p(Shape{2, 2});
    for (double& v : p.data) v = rng.uniform(0.01, 0.99);
    Tensor y(Shape{2, 2});
    for (double& v : y.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    CHECK(bce(p, y).value() >= 0.0);
    CHECK(focal_loss(p, y, 0.25, 2.0).value() >= 0.0);
    Tensor q(Shape{2, 2});
    for (double& v : q.data) v = rng.normal();
    CHECK(smooth_l1(p, q).value() >= 0.0);
  }
}
