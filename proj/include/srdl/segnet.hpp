#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "srdl/losses.hpp"
#include "srdl/tensor.hpp"

namespace srdl {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SegNetConfig {
  std::int64_t k = 8;                         // neighbors per point
  std::int64_t num_layers = 3;                // stacked dual-branch layers
  std::vector<std::int64_t> layer_dims = {64, 64, 64};
  std::int64_t tnet_hidden = 32;
  std::int64_t head_hidden = 64;
  std::int64_t num_classes = 2;               // per-point classes (object / background)
  std::uint64_t seed = 0;
  bool use_local = true;
  bool use_global = true;
  bool use_attention = true;
  double bn_eps = 1e-5;

  void validate() const {
    if (k < 1) throw config_error("SegNetConfig: k must be >= 1");
    if (num_layers < 1) throw config_error("SegNetConfig: need at least one layer");
    if (static_cast<std::int64_t>(layer_dims.size()) != num_layers)
      throw config_error("SegNetConfig: layer_dims must have num_layers entries");
    for (std::int64_t d : layer_dims)
      if (d < 1) throw config_error("SegNetConfig: layer dims must be positive");
    // same-branch residual additions need equal widths between layers
    for (std::size_t i = 1; i < layer_dims.size(); ++i)
      if (layer_dims[i] != layer_dims[i - 1])
        throw config_error("SegNetConfig: residual connections require equal layer dims");
    if (tnet_hidden < 1 || head_hidden < 1) throw config_error("SegNetConfig: hidden dims must be positive");
    if (num_classes < 1) throw config_error("SegNetConfig: need at least one class");
    if (!use_local && !use_global) throw config_error("SegNetConfig: at least one branch must be active");
  }

  std::int64_t fused_width(std::size_t layer) const {
    return (static_cast<std::int64_t>(use_local) + static_cast<std::int64_t>(use_global)) *
           layer_dims[layer];
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct LinearParams {
  Tensor weight;             // in x out
  std::optional<Tensor> bias;  // out
};

struct BatchNormParams {
  Tensor gamma;  // C
  Tensor beta;   // C
};

// Pre-activation residual unit: x + lin2(relu(bn2(lin1(relu(bn1(x)))))).
struct ResidualUnitParams {
  BatchNormParams bn1, bn2;
  LinearParams lin1, lin2;
};

// Bottom-up / top-down gate producing a (0,1) mask per point and channel.
struct AttentionModuleParams {
  ResidualUnitParams ru_down, ru_mid, ru_up;
  LinearParams head1, head2;  // head2 zero-initialized so gates start at 0.5
};

struct EdgeConvParams {
  LinearParams w1;  // 2*C_in -> C_out
  BatchNormParams bn1;
  LinearParams w2;  // C_out -> C_out
  BatchNormParams bn2;
};

struct MlpBranchParams {
  LinearParams w1;  // C_in -> C_out
  BatchNormParams bn1;
  LinearParams w2;
  BatchNormParams bn2;
};

struct AttentionLayerParams {
  EdgeConvParams edge;
  MlpBranchParams mlp;
  // attention gates consume the previous layer's branch outputs; the first
  // layer has no previous layer and carries none
  std::optional<AttentionModuleParams> att_local, att_global;
};

struct TNetParams {
  LinearParams mlp1, mlp2;  // 3 -> h -> h
  LinearParams head;        // h -> 16, zero weights + identity bias
};

struct ScoreHeadParams {
  LinearParams w1;  // feature -> hidden (no bias, BN follows)
  BatchNormParams bn;
  LinearParams w2;  // hidden -> num_classes
};

struct SegNetParams {
  SegNetConfig config;
  TNetParams tnet;
  std::vector<AttentionLayerParams> layers;
  ScoreHeadParams head;
};

namespace detail_net {

inline Tensor he_weights(Rng& rng, std::int64_t in, std::int64_t out) {
  Tensor w(Shape{in, out});
  const double scale = std::sqrt(2.0 / static_cast<double>(in));
  for (double& v : w.data) v = rng.normal() * scale;
  return w;
}

inline LinearParams make_linear(Rng& rng, std::int64_t in, std::int64_t out, bool bias) {
  LinearParams p;
  p.weight = he_weights(rng, in, out);
  if (bias) p.bias = Tensor(Shape{out}, 0.0);
  return p;
}

inline BatchNormParams make_bn(std::int64_t c) {
  BatchNormParams p;
  p.gamma = Tensor(Shape{c}, 1.0);
  p.beta = Tensor(Shape{c}, 0.0);
  return p;
}

inline ResidualUnitParams make_residual_unit(Rng& rng, std::int64_t c) {
  ResidualUnitParams p;
  p.bn1 = make_bn(c);
  p.lin1 = make_linear(rng, c, c, false);
  p.bn2 = make_bn(c);
  p.lin2 = make_linear(rng, c, c, true);
  return p;
}

inline AttentionModuleParams make_attention_module(Rng& rng, std::int64_t c) {
  AttentionModuleParams p;
  p.ru_down = make_residual_unit(rng, c);
  p.ru_mid = make_residual_unit(rng, c);
  p.ru_up = make_residual_unit(rng, c);
  p.head1 = make_linear(rng, c, c, true);
  p.head2.weight = Tensor(Shape{c, c}, 0.0);
  p.head2.bias = Tensor(Shape{c}, 0.0);
  return p;
}

}  // namespace detail_net

inline SegNetParams init_segnet_params(const SegNetConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SegNetParams p;
  p.config = cfg;

  p.tnet.mlp1 = detail_net::make_linear(rng, 3, cfg.tnet_hidden, true);
  p.tnet.mlp2 = detail_net::make_linear(rng, cfg.tnet_hidden, cfg.tnet_hidden, true);
  p.tnet.head.weight = Tensor(Shape{cfg.tnet_hidden, 16}, 0.0);
  Tensor identity_bias(Shape{16}, 0.0);
  identity_bias.data[0] = identity_bias.data[5] = identity_bias.data[10] = identity_bias.data[15] = 1.0;
  p.tnet.head.bias = identity_bias;

  std::int64_t c_in = 3;
  for (std::int64_t li = 0; li < cfg.num_layers; ++li) {
    const std::int64_t c_out = cfg.layer_dims[static_cast<std::size_t>(li)];
    AttentionLayerParams layer;
    layer.edge.w1 = detail_net::make_linear(rng, 2 * c_in, c_out, false);
    layer.edge.bn1 = detail_net::make_bn(c_out);
    layer.edge.w2 = detail_net::make_linear(rng, c_out, c_out, false);
    layer.edge.bn2 = detail_net::make_bn(c_out);
    layer.mlp.w1 = detail_net::make_linear(rng, c_in, c_out, false);
    layer.mlp.bn1 = detail_net::make_bn(c_out);
    layer.mlp.w2 = detail_net::make_linear(rng, c_out, c_out, false);
    layer.mlp.bn2 = detail_net::make_bn(c_out);
    if (li > 0) {
      layer.att_local = detail_net::make_attention_module(rng, c_out);
      layer.att_global = detail_net::make_attention_module(rng, c_out);
    }
    p.layers.push_back(std::move(layer));
    c_in = cfg.fused_width(static_cast<std::size_t>(li));
  }

  std::int64_t feat = 0;
  for (std::int64_t li = 0; li < cfg.num_layers; ++li) feat += cfg.fused_width(static_cast<std::size_t>(li));
  p.head.w1 = detail_net::make_linear(rng, 2 * feat, cfg.head_hidden, false);
  p.head.bn = detail_net::make_bn(cfg.head_hidden);
  p.head.w2 = detail_net::make_linear(rng, cfg.head_hidden, cfg.num_classes, true);
  return p;
}

// Fixed-order traversal of every parameter tensor; the order defines the
// checkpoint layout and the SGD update order.
inline void visit_params(SegNetParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
  auto linear = [&](const std::string& name, LinearParams& lp) {
    fn(name + ".weight", lp.weight);
    if (lp.bias) fn(name + ".bias", *lp.bias);
  };
  auto bn = [&](const std::string& name, BatchNormParams& bp) {
    fn(name + ".gamma", bp.gamma);
    fn(name + ".beta", bp.beta);
  };
  auto ru = [&](const std::string& name, ResidualUnitParams& rp) {
    bn(name + ".bn1", rp.bn1);
    linear(name + ".lin1", rp.lin1);
    bn(name + ".bn2", rp.bn2);
    linear(name + ".lin2", rp.lin2);
  };
  auto att = [&](const std::string& name, AttentionModuleParams& ap) {
    ru(name + ".ru_down", ap.ru_down);
    ru(name + ".ru_mid", ap.ru_mid);
    ru(name + ".ru_up", ap.ru_up);
    linear(name + ".head1", ap.head1);
    linear(name + ".head2", ap.head2);
  };

  linear("tnet.mlp1", p.tnet.mlp1);
  linear("tnet.mlp2", p.tnet.mlp2);
  linear("tnet.head", p.tnet.head);
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const std::string base = "layer" + std::to_string(li);
    AttentionLayerParams& lp = p.layers[li];
    linear(base + ".edge.w1", lp.edge.w1);
    bn(base + ".edge.bn1", lp.edge.bn1);
    linear(base + ".edge.w2", lp.edge.w2);
    bn(base + ".edge.bn2", lp.edge.bn2);
    linear(base + ".mlp.w1", lp.mlp.w1);
    bn(base + ".mlp.bn1", lp.mlp.bn1);
    linear(base + ".mlp.w2", lp.mlp.w2);
    bn(base + ".mlp.bn2", lp.mlp.bn2);
    if (lp.att_local) att(base + ".att_local", *lp.att_local);
    if (lp.att_global) att(base + ".att_global", *lp.att_global);
  }
  linear("head.w1", p.head.w1);
  bn("head.bn", p.head.bn);
  linear("head.w2", p.head.w2);
}

inline std::vector<Tensor> flatten_params(const SegNetParams& p) {
  std::vector<Tensor> out;
  visit_params(const_cast<SegNetParams&>(p), [&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

inline void unflatten_params(SegNetParams& p, const std::vector<Tensor>& flat) {
  std::size_t i = 0;
  visit_params(p, [&](const std::string&, Tensor& t) {
    if (i >= flat.size()) throw shape_error("unflatten_params: too few tensors");
    t = flat[i++];
  });
  if (i != flat.size()) throw shape_error("unflatten_params: too many tensors");
}

// Tracked copy of the whole parameter set on a tape.
inline SegNetParams track_params(Tape& tape, const SegNetParams& p, bool requires_grad = true) {
  SegNetParams out = p;
  visit_params(out, [&](const std::string&, Tensor& t) { t = tape.leaf(t, requires_grad); });
  return out;
}

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

// Exact brute-force Euclidean k nearest neighbors in feature space, self
// excluded, ties broken by lower index. Returns row-major N x k indices.
inline std::vector<std::int64_t> knn_graph(const Tensor& features, std::int64_t k) {
  const std::int64_t n = features.rows(), c = features.cols();
  if (k >= n) throw error("knn_graph: k=" + std::to_string(k) + " must be < N=" + std::to_string(n));
  std::vector<std::int64_t> out(static_cast<std::size_t>(n * k));
  std::vector<std::pair<double, std::int64_t>> dist(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double d2 = 0.0;
      for (std::int64_t f = 0; f < c; ++f) {
        const double d = features.data[static_cast<std::size_t>(i * c + f)] -
                         features.data[static_cast<std::size_t>(j * c + f)];
        d2 += d * d;
      }
      dist[static_cast<std::size_t>(j)] = {d2, j};
    }
    dist[static_cast<std::size_t>(i)].first = std::numeric_limits<double>::infinity();  // exclude self
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (std::int64_t r = 0; r < k; ++r) out[static_cast<std::size_t>(i * k + r)] = dist[static_cast<std::size_t>(r)].second;
  }
  return out;
}

namespace detail_net {

inline Tensor linear(const Tensor& x, const LinearParams& p) {
  Tensor y = matmul(x, p.weight);
  if (p.bias) y = add_rowvec(y, *p.bias);
  return y;
}

inline Tensor residual_unit(const Tensor& x, const ResidualUnitParams& p, double eps) {
  Tensor h = relu(batch_norm(x, p.bn1.gamma, p.bn1.beta, eps));
  h = linear(h, p.lin1);
  h = relu(batch_norm(h, p.bn2.gamma, p.bn2.beta, eps));
  h = linear(h, p.lin2);
  return add(x, h);
}

// Lexicographic row order; permutation-invariant for distinct rows, so the
// pair pooling below commutes with input permutations.
inline std::vector<std::int64_t> canonical_row_order(const Tensor& x) {
  const std::int64_t n = x.rows(), c = x.cols();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    for (std::int64_t j = 0; j < c; ++j) {
      const double va = x.data[static_cast<std::size_t>(a * c + j)];
      const double vb = x.data[static_cast<std::size_t>(b * c + j)];
      if (va != vb) return va < vb;
    }
    return a < b;
  });
  return order;
}

}  // namespace detail_net

// Bottom-up / top-down attention over point features. Block 1 pools
// canonically ordered row pairs 2:1 after a residual unit, block 2 runs the
// top-down residual unit with a skip back onto the pooled map, block 3
// upsamples by nearest duplication and gates through two shared linear
// layers and a sigmoid. Output entries are strictly inside (0,1).
inline Tensor residual_attention(const Tensor& features, const AttentionModuleParams& p, double eps = 1e-5) {
  const std::int64_t n = features.rows();
  if (n < 2) throw shape_error("residual_attention: need at least 2 points");

  const std::vector<std::int64_t> canon = detail_net::canonical_row_order(features);
  std::vector<std::int64_t> inverse(canon.size());
  for (std::size_t i = 0; i < canon.size(); ++i) inverse[static_cast<std::size_t>(canon[i])] = static_cast<std::int64_t>(i);

  Tensor xc = gather_rows(features, canon);
  Tensor b1 = detail_net::residual_unit(xc, p.ru_down, eps);
  Tensor up;
  if (n >= 4) {
    Tensor d = pair_max_rows(b1);
    Tensor m = add(detail_net::residual_unit(d, p.ru_mid, eps), d);
    up = repeat_pairs_rows(detail_net::residual_unit(m, p.ru_up, eps), n);
  } else {
    // too few rows to pool without starving the pooled batch norm
    Tensor m = add(detail_net::residual_unit(b1, p.ru_mid, eps), b1);
    up = detail_net::residual_unit(m, p.ru_up, eps);
  }
  Tensor z = detail_net::linear(relu(detail_net::linear(up, p.head1)), p.head2);
  return gather_rows(sigmoid(z), inverse);
}

// Local branch: edge features concat(x_i, x_j - x_i) over the kNN graph,
// two shared weight layers with batch norm (ReLU after the first), max over
// the k neighbors, then (1 + R) modulation when an attention map is given.
inline Tensor edgeconv_branch(const Tensor& features, const std::vector<std::int64_t>& graph, std::int64_t k,
                              const EdgeConvParams& p, const Tensor* attention, double eps = 1e-5) {
  const std::int64_t n = features.rows();
  if (static_cast<std::int64_t>(graph.size()) != n * k)
    throw shape_error("edgeconv_branch: graph size does not match N*k");
  std::vector<std::int64_t> self_idx(static_cast<std::size_t>(n * k));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t r = 0; r < k; ++r) self_idx[static_cast<std::size_t>(i * k + r)] = i;

  Tensor xi = gather_rows(features, self_idx);
  Tensor xj = gather_rows(features, graph);
  Tensor edge = concat({xi, sub(xj, xi)}, 1);
  Tensor e1 = relu(batch_norm(matmul(edge, p.w1.weight), p.bn1.gamma, p.bn1.beta, eps));
  Tensor e2 = batch_norm(matmul(e1, p.w2.weight), p.bn2.gamma, p.bn2.beta, eps);
  Tensor pooled = group_max_rows(e2, k);
  if (!attention) return pooled;
  return mul(affine(*attention, 1.0, 1.0), pooled);
}

// Global branch: per-point shared MLP, batch norm on both layers, ReLU
// after the first, then the same (1 + R) modulation.
inline Tensor mlp_branch(const Tensor& features, const MlpBranchParams& p, const Tensor* attention,
                         double eps = 1e-5) {
  Tensor m1 = relu(batch_norm(matmul(features, p.w1.weight), p.bn1.gamma, p.bn1.beta, eps));
  Tensor m2 = batch_norm(matmul(m1, p.w2.weight), p.bn2.gamma, p.bn2.beta, eps);
  if (!attention) return m2;
  return mul(affine(*attention, 1.0, 1.0), m2);
}

struct LayerOutputs {
  std::optional<Tensor> local;
  std::optional<Tensor> global_feat;
  Tensor fused;
};

// One stacked layer. The first layer (prev == nullptr) runs the plain
// branches; later layers gate each branch with attention computed from the
// previous layer's same-branch output and add the same-branch residual.
inline LayerOutputs attention_layer(const LayerOutputs* prev, const Tensor& layer_input,
                                    const std::vector<std::int64_t>& graph, const AttentionLayerParams& p,
                                    const SegNetConfig& cfg) {
  LayerOutputs out;
  std::vector<Tensor> fused_parts;
  if (cfg.use_local) {
    std::optional<Tensor> gate;
    if (prev && cfg.use_attention && p.att_local) {
      if (!prev->local) throw error("attention_layer: previous layer lacks a local output");
      gate = residual_attention(*prev->local, *p.att_local, cfg.bn_eps);
    }
    Tensor l = edgeconv_branch(layer_input, graph, cfg.k, p.edge, gate ? &*gate : nullptr, cfg.bn_eps);
    if (prev && prev->local) l = add(l, *prev->local);
    out.local = l;
    fused_parts.push_back(l);
  }
  if (cfg.use_global) {
    std::optional<Tensor> gate;
    if (prev && cfg.use_attention && p.att_global) {
      if (!prev->global_feat) throw error("attention_layer: previous layer lacks a global output");
      gate = residual_attention(*prev->global_feat, *p.att_global, cfg.bn_eps);
    }
    Tensor g = mlp_branch(layer_input, p.mlp, gate ? &*gate : nullptr, cfg.bn_eps);
    if (prev && prev->global_feat) g = add(g, *prev->global_feat);
    out.global_feat = g;
    fused_parts.push_back(g);
  }
  out.fused = fused_parts.size() == 1 ? fused_parts[0] : concat(fused_parts, 1);
  return out;
}

// Mini point network regressing a 4x4 affine alignment applied to the
// homogeneous coordinates. The head starts at the identity.
inline Tensor tnet_align(const Tensor& points, const TNetParams& p) {
  const std::int64_t n = points.rows();
  Tensor h = relu(detail_net::linear(points, p.mlp1));
  h = relu(detail_net::linear(h, p.mlp2));
  Tensor t = detail_net::linear(max_pool_points(h), p.head);
  Tensor transform = reshape(t, Shape{4, 4});
  Tensor homo = concat({points, Tensor(Shape{n, 1}, 1.0)}, 1);
  Tensor aligned_h = matmul(homo, transpose2d(transform));
  return slice_cols(aligned_h, 0, 3);
}

// Per-layer instrumentation for tests and debug dumps.
struct SegNetTrace {
  std::vector<std::vector<std::int64_t>> graphs;
  std::vector<Tensor> layer_inputs;
};

// Full forward: T-Net alignment, stacked layers over a per-layer dynamic
// graph, concatenation of every layer's fused output, global max pooling,
// and the shared per-point scoring head. Returns N x num_classes logits.
inline Tensor segnet_forward(const Tensor& points, const SegNetParams& params, SegNetTrace* trace = nullptr) {
  const SegNetConfig& cfg = params.config;
  cfg.validate();
  const std::int64_t n = points.rows();
  if (points.cols() != 3) throw shape_error("segnet_forward: points must be N x 3");
  if (n <= cfg.k) throw error("segnet_forward: need more than k=" + std::to_string(cfg.k) + " points, got " +
                              std::to_string(n));

  Tensor aligned = tnet_align(points, params.tnet);
  Tensor layer_input = aligned;
  std::optional<LayerOutputs> prev;
  std::vector<Tensor> fused_all;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    // dynamic graph: recomputed from the current feature space
    const std::vector<std::int64_t> graph = knn_graph(layer_input, cfg.k);
    if (trace) {
      trace->graphs.push_back(graph);
      trace->layer_inputs.push_back(layer_input);
    }
    LayerOutputs out = attention_layer(prev ? &*prev : nullptr, layer_input, graph, params.layers[li], cfg);
    fused_all.push_back(out.fused);
    layer_input = out.fused;
    prev = std::move(out);
  }
  Tensor allcat = fused_all.size() == 1 ? fused_all[0] : concat(fused_all, 1);
  Tensor global_vec = max_pool_points(allcat);
  Tensor feat = concat({allcat, tile_rows(global_vec, n)}, 1);
  Tensor h = relu(batch_norm(matmul(feat, params.head.w1.weight), params.head.bn.gamma, params.head.bn.beta,
                             cfg.bn_eps));
  return detail_net::linear(h, params.head.w2);
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

struct TrainStepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

// One SGD step of the focal segmentation objective on a single point set.
inline TrainStepResult segnet_train_step(const Tensor& points, const std::vector<int>& labels,
                                         SegNetParams& params, double lr, double focal_alpha = 0.25,
                                         double focal_gamma = 2.0) {
  const std::int64_t n = points.rows();
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw shape_error("segnet_train_step: labels/points count mismatch");
  const std::int64_t p = params.config.num_classes;
  Tensor target(Shape{n, p});
  for (std::int64_t i = 0; i < n; ++i) {
    const int cls = labels[static_cast<std::size_t>(i)];
    if (cls < 0 || cls >= p) throw error("segnet_train_step: label out of range");
    target.data[static_cast<std::size_t>(i * p + cls)] = 1.0;
  }

  Tape tape;
  SegNetParams tracked = track_params(tape, params, true);
  Tensor scores = segnet_forward(tape.leaf(points, false), tracked);
  Tensor probs = sigmoid(scores);
  Tensor loss = focal_loss(probs, target, focal_alpha, focal_gamma);
  if (!std::isfinite(loss.value()))
    throw numeric_error("segnet_train_step: non-finite loss " + fmt_double(loss.value()));
  tape.backward(loss);

  std::vector<Tensor*> param_ptrs;
  visit_params(params, [&](const std::string&, Tensor& t) { param_ptrs.push_back(&t); });
  std::vector<Tensor> grads;
  grads.reserve(param_ptrs.size());
  double norm2 = 0.0;
  visit_params(tracked, [&](const std::string&, Tensor& t) {
    grads.push_back(tape.grad(t));
    for (double v : grads.back().data) norm2 += v * v;
  });
  sgd_step(param_ptrs, grads, lr);
  return {loss.value(), std::sqrt(norm2)};
}

// Argmax class per point from logits.
inline std::vector<int> predict_classes(const Tensor& scores) {
  const std::int64_t n = scores.rows(), p = scores.cols();
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (std::int64_t j = 1; j < p; ++j)
      if (scores.at(i, j) > scores.at(i, best)) best = static_cast<int>(j);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace srdl
