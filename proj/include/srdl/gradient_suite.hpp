#pragma once

#include <string>
#include <vector>

#include "srdl/gradcheck.hpp"
#include "srdl/losses.hpp"
#include "srdl/segnet.hpp"

namespace srdl {

// Central finite-difference sweep over every differentiable operation plus
// the full two-layer network, repeated across seeds. Shared by the CLI
// `gradcheck` subcommand and the acceptance suite.

struct GradSuiteEntry {
  std::string name;
  double max_rel = 0.0;
  double tol = 1e-4;
  bool pass() const { return max_rel <= tol; }
};

namespace detail_suite {

inline std::vector<Tensor> flatten_attention_module(const AttentionModuleParams& m) {
  std::vector<Tensor> out;
  AttentionModuleParams& p = const_cast<AttentionModuleParams&>(m);
  for (ResidualUnitParams* ru : {&p.ru_down, &p.ru_mid, &p.ru_up}) {
    out.push_back(ru->bn1.gamma);
    out.push_back(ru->bn1.beta);
    out.push_back(ru->lin1.weight);
    out.push_back(ru->bn2.gamma);
    out.push_back(ru->bn2.beta);
    out.push_back(ru->lin2.weight);
    out.push_back(*ru->lin2.bias);
  }
  out.push_back(p.head1.weight);
  out.push_back(*p.head1.bias);
  out.push_back(p.head2.weight);
  out.push_back(*p.head2.bias);
  return out;
}

inline AttentionModuleParams unflatten_attention_module(const AttentionModuleParams& base,
                                                        const std::vector<Tensor>& flat, std::size_t start) {
  AttentionModuleParams m = base;
  std::size_t i = start;
  for (ResidualUnitParams* ru : {&m.ru_down, &m.ru_mid, &m.ru_up}) {
    ru->bn1.gamma = flat[i++];
    ru->bn1.beta = flat[i++];
    ru->lin1.weight = flat[i++];
    ru->bn2.gamma = flat[i++];
    ru->bn2.beta = flat[i++];
    ru->lin2.weight = flat[i++];
    ru->lin2.bias = flat[i++];
  }
  m.head1.weight = flat[i++];
  m.head1.bias = flat[i++];
  m.head2.weight = flat[i++];
  m.head2.bias = flat[i++];
  return m;
}

}  // namespace detail_suite

inline std::vector<GradSuiteEntry> run_gradient_suite(int n_seeds = 20) {
  std::vector<GradSuiteEntry> entries;
  auto entry = [&](const std::string& name) -> GradSuiteEntry& {
    for (auto& e : entries)
      if (e.name == name) return e;
    entries.push_back({name, 0.0, 1e-4});
    return entries.back();
  };
  auto run = [&](const std::string& name, std::vector<Tensor> params,
                 const std::function<Tensor(Tape&, std::vector<Tensor>&)>& build) {
    const auto rep = gradcheck(std::move(params), build);
    auto& e = entry(name);
    e.max_rel = std::max(e.max_rel, rep.max_rel);
  };

  for (int seed = 0; seed < n_seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) * 6151 + 13);
    auto rand_t = [&](Shape s) {
      Tensor t(std::move(s));
      for (double& v : t.data) v = rng.normal();
      return t;
    };
    auto rand_away_from_zero = [&](Shape s) {
      Tensor t = rand_t(std::move(s));
      for (double& v : t.data)
        if (std::fabs(v) < 0.1) v = v < 0.0 ? v - 0.2 : v + 0.2;
      return t;
    };
    auto rand_prob = [&](Shape s) {
      Tensor t(std::move(s));
      for (double& v : t.data) v = rng.uniform(0.05, 0.95);
      return t;
    };

    run("matmul", {rand_t({3, 4}), rand_t({4, 2})},
        [](Tape&, std::vector<Tensor>& p) { return sum_all(mul(matmul(p[0], p[1]), matmul(p[0], p[1]))); });
    run("relu", {rand_away_from_zero({4, 4})},
        [](Tape&, std::vector<Tensor>& p) { return sum_all(relu(p[0])); });
    run("sigmoid", {rand_t({4, 4})},
        [](Tape&, std::vector<Tensor>& p) { return sum_all(mul(sigmoid(p[0]), p[0])); });
    run("batch_norm", {rand_t({8, 4}), rand_t({4}), rand_t({4})}, [](Tape&, std::vector<Tensor>& p) {
      Tensor y = batch_norm(p[0], p[1], p[2], 1e-5);
      return mean_all(mul(y, y));
    });
    run("max_pool_points", {rand_t({6, 3})},
        [](Tape&, std::vector<Tensor>& p) { return sum_all(max_pool_points(p[0])); });
    run("elementwise", {rand_t({3, 3}), rand_t({3, 3})}, [](Tape&, std::vector<Tensor>& p) {
      Tensor s = add(p[0], p[1]);
      s = mul(s, sub(p[0], p[1]));
      return sum_all(mean2(s, p[0]));
    });
    run("concat", {rand_t({4, 2}), rand_t({4, 3})}, [](Tape&, std::vector<Tensor>& p) {
      Tensor c = concat({p[0], p[1]}, 1);
      return sum_all(mul(c, c));
    });
    run("structural", {rand_t({6, 3})}, [](Tape&, std::vector<Tensor>& p) {
      const std::vector<std::int64_t> idx = {0, 2, 2, 5, 1, 3};
      Tensor g = gather_rows(p[0], idx);
      Tensor m = group_max_rows(g, 2);
      Tensor pm = repeat_pairs_rows(pair_max_rows(m), 3);
      Tensor tiled = tile_rows(max_pool_points(pm), 3);
      Tensor cat = concat({pm, tiled}, 1);
      return mean_all(mul(transpose2d(cat), transpose2d(cat)));
    });
    run("pointwise", {rand_prob({4, 2})}, [](Tape&, std::vector<Tensor>& p) {
      Tensor c = clamp(p[0], 0.03, 0.97);
      return mean_all(add(mul(log_op(c), pow_const(affine(c, -1.0, 1.0), 2.0)), affine(c, 2.0, 0.5)));
    });

    {
      Tensor target(Shape{3, 3});
      for (double& v : target.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      run("bce", {rand_prob({3, 3})},
          [target](Tape&, std::vector<Tensor>& p) { return bce(p[0], target); });
      run("focal_loss", {rand_prob({3, 3})},
          [target](Tape&, std::vector<Tensor>& p) { return focal_loss(p[0], target, 0.25, 2.0); });
    }
    {
      Tensor target = rand_t({1, 6});
      run("smooth_l1", {rand_away_from_zero({1, 6})},
          [target](Tape&, std::vector<Tensor>& p) { return smooth_l1(p[0], target, 1.0); });
    }
    run("total_loss",
        {Tensor::scalar(rng.uniform(0.1, 2.0)), Tensor::scalar(rng.uniform(0.1, 2.0)),
         Tensor::scalar(rng.uniform(0.1, 2.0)), Tensor::scalar(rng.uniform(0.1, 2.0)),
         Tensor::scalar(rng.uniform(0.1, 2.0))},
        [](Tape&, std::vector<Tensor>& p) {
          return total_loss(p[0], p[1], p[2], p[3], p[4], LossWeights{});
        });

    // the attention gate in isolation
    {
      AttentionModuleParams att = detail_net::make_attention_module(rng, 4);
      std::vector<Tensor> params;
      params.push_back(rand_t({8, 4}));
      for (Tensor& t : detail_suite::flatten_attention_module(att)) params.push_back(t);
      run("residual_attention", params, [att](Tape&, std::vector<Tensor>& p) {
        const AttentionModuleParams m = detail_suite::unflatten_attention_module(att, p, 1);
        Tensor r = residual_attention(p[0], m, 1e-5);
        return sum_all(mul(r, r));
      });
    }

    // the full two-layer network, 16 points, width 8, every parameter tensor
    {
      SegNetConfig cfg;
      cfg.k = 3;
      cfg.num_layers = 2;
      cfg.layer_dims = {8, 8};
      cfg.tnet_hidden = 8;
      cfg.head_hidden = 8;
      cfg.seed = static_cast<std::uint64_t>(seed);
      SegNetParams base = init_segnet_params(cfg);
      Tensor pts(Shape{16, 3});
      for (double& v : pts.data) v = rng.uniform(-2.0, 2.0);
      Tensor target(Shape{16, 2});
      for (std::int64_t i = 0; i < 16; ++i) target.at(i, rng.uniform() < 0.5 ? 0 : 1) = 1.0;
      run("segnet_full", flatten_params(base), [base, pts, target](Tape&, std::vector<Tensor>& p) {
        SegNetParams net = base;
        unflatten_params(net, p);
        Tensor probs = sigmoid(segnet_forward(pts, net));
        return focal_loss(probs, target, 0.25, 2.0);
      });
    }
  }
  return entries;
}

inline std::string format_gradient_suite(const std::vector<GradSuiteEntry>& entries) {
  std::string out;
  for (const auto& e : entries)
    out += str_printf("[%s] %-20s max_rel=%.3e tol=%.0e\n", e.pass() ? "PASS" : "FAIL", e.name.c_str(),
                      e.max_rel, e.tol);
  return out;
}

}  // namespace srdl
