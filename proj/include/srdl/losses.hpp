#pragma once

#include "srdl/tensor.hpp"

namespace srdl {

// Multi-task weights: total = alpha*(cls1+reg1) + beta*seg + chi*(cls2+reg2).
struct LossWeights {
  double alpha = 1.0;
  double beta = 4.0;
  double chi = 2.0;

  void validate() const {
    if (alpha < 0.0 || beta < 0.0 || chi < 0.0) throw config_error("LossWeights: weights must be non-negative");
  }
};

inline constexpr double kProbClamp = 1e-7;

namespace detail {
inline void check_targets(const Tensor& prob, const Tensor& target, const char* op) {
  if (prob.shape != target.shape)
    throw shape_error(std::string(op) + ": prob " + shape_str(prob.shape) + " vs target " + shape_str(target.shape));
  for (double y : target.data)
    if (y != 0.0 && y != 1.0) throw error(std::string(op) + ": targets must be 0/1, got " + fmt_double(y));
}
}  // namespace detail

// Mean binary cross entropy; probabilities clamped to [1e-7, 1-1e-7].
inline Tensor bce(const Tensor& prob, const Tensor& target) {
  detail::check_targets(prob, target, "bce");
  Tensor p = clamp(prob, kProbClamp, 1.0 - kProbClamp);
  Tensor one_minus_t = affine(target, -1.0, 1.0);
  Tensor term = add(mul(target, log_op(p)), mul(one_minus_t, log_op(affine(p, -1.0, 1.0))));
  return affine(mean_all(term), -1.0, 0.0);
}

// Mean focal loss: -alpha_t * (1-p_t)^gamma * log(p_t).
inline Tensor focal_loss(const Tensor& prob, const Tensor& target, double alpha_f, double gamma) {
  detail::check_targets(prob, target, "focal_loss");
  if (gamma < 0.0) throw error("focal_loss: gamma must be non-negative");
  Tensor p = clamp(prob, kProbClamp, 1.0 - kProbClamp);
  Tensor one_minus_t = affine(target, -1.0, 1.0);
  // p_t = y*p + (1-y)*(1-p)
  Tensor pt = add(mul(target, p), mul(one_minus_t, affine(p, -1.0, 1.0)));
  // alpha_t is a constant tensor: alpha for positives, 1-alpha for negatives
  Tensor alpha_t(target.shape);
  for (std::size_t i = 0; i < alpha_t.data.size(); ++i)
    alpha_t.data[i] = target.data[i] == 1.0 ? alpha_f : 1.0 - alpha_f;
  Tensor weighted = mul(alpha_t, mul(pow_const(affine(pt, -1.0, 1.0), gamma), log_op(pt)));
  return affine(mean_all(weighted), -1.0, 0.0);
}

// Mean smooth L1 (Huber with transition beta_s).
inline Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta_s = 1.0) {
  if (pred.shape != target.shape)
    throw shape_error("smooth_l1: pred " + shape_str(pred.shape) + " vs target " + shape_str(target.shape));
  if (beta_s <= 0.0) throw error("smooth_l1: beta_s must be positive");
  Tensor d = sub(pred, target);

  const std::size_t count = d.data.size();
  double total = 0.0;
  for (double v : d.data) {
    const double a = std::fabs(v);
    total += a < beta_s ? 0.5 * v * v / beta_s : a - 0.5 * beta_s;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(count));
  detail::record(out, "smooth_l1", {&d}, [&]() {
    auto ddata = d.data;
    const std::int64_t dn = d.node;
    return [ddata = std::move(ddata), dn, beta_s, count](Tape& t, const std::vector<double>& g) {
      if (!t.needs(dn)) return;
      auto& dd = t.grad_buf(dn);
      const double scale = g[0] / static_cast<double>(count);
      for (std::size_t i = 0; i < count; ++i) {
        const double v = ddata[i];
        dd[i] += scale * (std::fabs(v) < beta_s ? v / beta_s : (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0)));
      }
    };
  });
  return out;
}

// Weighted multi-task total over five scalar parts.
inline Tensor total_loss(const Tensor& l_cls1, const Tensor& l_reg1, const Tensor& l_seg,
                         const Tensor& l_cls2, const Tensor& l_reg2, const LossWeights& w) {
  w.validate();
  for (const Tensor* t : {&l_cls1, &l_reg1, &l_seg, &l_cls2, &l_reg2}) {
    if (t->numel() != 1) throw shape_error("total_loss: parts must be scalars");
    if (!std::isfinite(t->data[0])) throw numeric_error("total_loss: non-finite part " + fmt_double(t->data[0]));
  }
  Tensor fuse = affine(add(l_cls1, l_reg1), w.alpha, 0.0);
  Tensor seg = affine(l_seg, w.beta, 0.0);
  Tensor box = affine(add(l_cls2, l_reg2), w.chi, 0.0);
  return add(add(fuse, seg), box);
}

}  // namespace srdl
