#pragma once

#include <functional>
#include <string>
#include <vector>

#include "srdl/tensor.hpp"

namespace srdl {

// Central finite differences against tape gradients. The oracle side only
// ever evaluates the forward pass on perturbed inputs, so it stays
// independent of the backward implementation it is checking.

struct GradCheckReport {
  double max_rel = 0.0;
  std::string worst;  // "param 2, entry 17: tape=... fd=..."
  bool pass(double tol) const { return max_rel <= tol; }
};

inline double gradcheck_rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-3});
  return std::fabs(a - b) / denom;
}

// `build` receives the tape plus tracked copies of `params` (same order) and
// returns a scalar loss.
inline GradCheckReport gradcheck(std::vector<Tensor> params,
                                 const std::function<Tensor(Tape&, std::vector<Tensor>&)>& build,
                                 double fd_eps = 1e-5) {
  // forward-only evaluations skip gradient bookkeeping entirely, keeping the
  // difference oracle cheap and independent of the backward machinery
  auto eval = [&](std::vector<Tensor>& ps, std::vector<Tensor>* grads_out) -> double {
    Tape tape;
    std::vector<Tensor> tracked;
    tracked.reserve(ps.size());
    for (auto& p : ps) tracked.push_back(tape.leaf(p, grads_out != nullptr));
    Tensor loss = build(tape, tracked);
    if (grads_out) {
      tape.backward(loss);
      grads_out->clear();
      for (auto& t : tracked) grads_out->push_back(tape.grad(t));
    }
    return loss.value();
  };

  std::vector<Tensor> analytic;
  eval(params, &analytic);

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t j = 0; j < params[pi].data.size(); ++j) {
      const double saved = params[pi].data[j];
      params[pi].data[j] = saved + fd_eps;
      const double fp = eval(params, nullptr);
      params[pi].data[j] = saved - fd_eps;
      const double fm = eval(params, nullptr);
      params[pi].data[j] = saved;
      const double fd = (fp - fm) / (2.0 * fd_eps);
      const double an = analytic[pi].data[j];
      const double rel = gradcheck_rel_err(an, fd);
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = "param " + std::to_string(pi) + ", entry " + std::to_string(j) +
                    ": tape=" + fmt_double(an) + " fd=" + fmt_double(fd);
      }
    }
  }
  return rep;
}

}  // namespace srdl
