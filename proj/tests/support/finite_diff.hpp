#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "taskfuse/core/tape.hpp"
#include "taskfuse/core/tensor.hpp"

namespace taskfuse::test {

// Central-difference gradient checker. `build` reconstructs the scalar graph
// from leaf vars on a fresh tape each call, so perturbed evaluations see the
// exact same computation.
//
// Error convention: per-element |a-n| / denom with
//   denom = max(|a|, |n|, 1e-3 * ||g_analytic||_inf, 1e-10)
// The scale floor keeps exact-zero entries from amplifying FD roundoff.
struct FdReport {
  double max_rel_err = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_elem = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using BuildFn = std::function<ad::Var(ad::Tape&, std::vector<ad::Var>&)>;

inline double eval_scalar(const std::vector<Tensor>& inputs, const BuildFn& build) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) leaves.push_back(ad::leaf(tape, t, false));
  ad::Var root = build(tape, leaves);
  return root.val().item();
}

inline FdReport check_gradients(std::vector<Tensor> inputs, const BuildFn& build, double h = 1e-6) {
  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(ad::leaf(tape, t, true));
    ad::Var root = build(tape, leaves);
    tape.backward(root.id);
    for (const ad::Var& l : leaves) analytic.push_back(tape.grad(l.id));
  }

  double gmax = 0.0;
  for (const Tensor& g : analytic)
    for (double x : g.v) gmax = std::max(gmax, std::abs(x));

  FdReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].v.size(); ++i) {
      const double orig = inputs[k].v[i];
      inputs[k].v[i] = orig + h;
      const double fp = eval_scalar(inputs, build);
      inputs[k].v[i] = orig - h;
      const double fm = eval_scalar(inputs, build);
      inputs[k].v[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[k].v[i];
      const double denom = std::max({std::abs(ana), std::abs(num), 1e-3 * gmax, 1e-10});
      const double err = std::abs(ana - num) / denom;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_input = k;
        rep.worst_elem = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  return rep;
}

}  // namespace taskfuse::test
