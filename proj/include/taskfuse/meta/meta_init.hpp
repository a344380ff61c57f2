#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "taskfuse/search/ias.hpp"

namespace taskfuse {

// Shared-initialization training across several fusion tasks. Each task gets
// a few adaptation steps from the shared start point; the outer loop then
// moves the start point so the post-adaptation validation loss drops across
// all tasks at once. The result is an initialization that specializes fast.

struct MetaTask {
  std::string id;
  std::string kind;  // free-form tag, e.g. "infrared-visible"
  std::vector<ImagePair> train;
  std::vector<ImagePair> val;
};

inline void check_meta_task(const MetaTask& t) {
  if (t.train.empty() || t.val.empty())
    throw std::invalid_argument("task " + t.id + ": both splits must be nonempty");
  std::unordered_set<std::string> seen;
  for (const ImagePair& p : t.train) seen.insert(p.id);
  for (const ImagePair& p : t.val)
    if (seen.count(p.id))
      throw std::invalid_argument("task " + t.id + ": pair " + p.id + " appears in both splits");
}

// A task reduced to its two objectives: the adaptation loss on the train
// split and the measurement loss on the validation split.
struct AdaptTask {
  std::string id;
  ThetaObjective train;
  ThetaObjective val;
};

struct MetaConfig {
  int inner_steps = 4;       // adaptation steps per task
  double inner_lr = 1e-3;    // adaptation step size
  double outer_lr = 1e-4;    // shared-initialization step size
  int outer_iters = 8;
  bool first_order = true;   // stop gradients at the adapted parameters
  double hvp_step = 1e-5;    // probe size for curvature products

  void validate() const {
    if (inner_steps < 0) throw std::invalid_argument("inner_steps must be >= 0");
    if (!(inner_lr > 0.0)) throw std::invalid_argument("inner_lr must be positive");
    if (!(outer_lr > 0.0)) throw std::invalid_argument("outer_lr must be positive");
    if (outer_iters < 0) throw std::invalid_argument("outer_iters must be >= 0");
    if (!(hvp_step > 0.0)) throw std::invalid_argument("hvp_step must be positive");
  }
};

namespace meta_detail {

inline double eval_value(const ParamStore& store, const ThetaObjective& obj) {
  ad::Tape tape;
  BoundParams bp = bind_params(tape, store, false);
  return obj(tape, bp).val().item();
}

inline VecD eval_grad(const ParamStore& store, const ThetaObjective& obj,
                      double* value = nullptr) {
  ad::Tape tape;
  BoundParams bp = bind_params(tape, store, true);
  ad::Var loss = obj(tape, bp);
  if (value) *value = loss.val().item();
  tape.backward(loss.id);
  return collect_param_grads(tape, bp);
}

// Curvature-vector product of the objective at the store's parameters by
// central differencing of the gradient. Exact for quadratics.
inline VecD hvp(const ParamStore& at, const ThetaObjective& obj, const VecD& v, double step) {
  const double norm = nrm2(v);
  if (norm == 0.0) return VecD(v.size(), 0.0);
  const double h = step / norm;
  ParamStore scratch = at;
  VecD base = at.flatten();

  VecD shifted = base;
  axpy(h, v, shifted);
  scratch.unflatten(shifted);
  VecD plus = eval_grad(scratch, obj);

  shifted = base;
  axpy(-h, v, shifted);
  scratch.unflatten(shifted);
  VecD minus = eval_grad(scratch, obj);

  axpy(-1.0, minus, plus);
  scal(1.0 / (2.0 * h), plus);
  return plus;
}

// Tasks are reduced in id order so the sum never depends on scheduling.
template <typename T>
std::vector<std::size_t> sorted_order(const std::vector<T>& tasks) {
  std::vector<std::size_t> order(tasks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return tasks[i].id < tasks[j].id; });
  return order;
}

// Runs the adaptation steps; when trace is given, records the flat
// parameters entering each step for the later backward sweep.
inline ParamStore adapt_with_trace(const ParamStore& omega, const AdaptTask& task, int steps,
                                   double lr, std::vector<VecD>* trace) {
  if (steps < 0) throw std::invalid_argument("inner_adapt: steps must be >= 0");
  if (!task.train) throw std::invalid_argument("inner_adapt: task " + task.id + " has no train objective");
  ParamStore theta = omega;
  for (int k = 0; k < steps; ++k) {
    if (trace) trace->push_back(theta.flatten());
    double value = 0.0;
    VecD g = eval_grad(theta, task.train, &value);
    if (!std::isfinite(value))
      throw std::runtime_error("inner_adapt: non-finite loss " + std::to_string(value) +
                               " for task " + task.id + " at step " + std::to_string(k));
    sgd_step(theta, g, lr);
  }
  return theta;
}

}  // namespace meta_detail

// Adaptation from the shared start point: `steps` gradient steps on the
// task's train objective. Zero steps return the start point unchanged.
inline ParamStore inner_adapt(const ParamStore& omega, const AdaptTask& task, int steps,
                              double lr) {
  return meta_detail::adapt_with_trace(omega, task, steps, lr, nullptr);
}

// Sum over tasks of the validation loss at each task's adapted parameters.
inline double meta_objective(const ParamStore& omega, const std::vector<AdaptTask>& tasks,
                             int steps, double lr) {
  if (tasks.empty()) throw std::invalid_argument("meta_objective: no tasks");
  double total = 0.0;
  for (std::size_t idx : meta_detail::sorted_order(tasks)) {
    const AdaptTask& task = tasks[idx];
    if (!task.val) throw std::invalid_argument("meta_objective: task " + task.id + " has no val objective");
    ParamStore theta = inner_adapt(omega, task, steps, lr);
    total += meta_detail::eval_value(theta, task.val);
  }
  return total;
}

struct MetaStepRecord {
  double objective = 0.0;
  VecD task_losses;  // indexed like the tasks argument
};

// Gradient of the meta objective with respect to the shared start point.
// First order evaluates the validation gradient at the adapted parameters
// and stops there; full order pushes it back through every adaptation step
// with curvature products along the recorded trajectory.
inline VecD outer_gradient(const ParamStore& omega, const std::vector<AdaptTask>& tasks,
                           const MetaConfig& cfg, MetaStepRecord* rec = nullptr) {
  cfg.validate();
  if (tasks.empty()) throw std::invalid_argument("outer_gradient: no tasks");
  if (rec) {
    rec->objective = 0.0;
    rec->task_losses.assign(tasks.size(), 0.0);
  }
  VecD total(static_cast<std::size_t>(omega.total_elements()), 0.0);
  for (std::size_t idx : meta_detail::sorted_order(tasks)) {
    const AdaptTask& task = tasks[idx];
    if (!task.val) throw std::invalid_argument("outer_gradient: task " + task.id + " has no val objective");

    std::vector<VecD> trace;
    ParamStore theta = meta_detail::adapt_with_trace(omega, task, cfg.inner_steps, cfg.inner_lr,
                                                     cfg.first_order ? nullptr : &trace);
    double value = 0.0;
    VecD v = meta_detail::eval_grad(theta, task.val, &value);
    if (!std::isfinite(value))
      throw std::runtime_error("outer_gradient: non-finite validation loss for task " + task.id);

    if (!cfg.first_order) {
      ParamStore scratch = omega;
      for (std::size_t k = trace.size(); k-- > 0;) {
        scratch.unflatten(trace[k]);
        VecD hv = meta_detail::hvp(scratch, task.train, v, cfg.hvp_step);
        axpy(-cfg.inner_lr, hv, v);
      }
    }
    for (double x : v)
      if (!std::isfinite(x))
        throw std::runtime_error("outer_gradient: non-finite gradient for task " + task.id);

    axpy(1.0, v, total);
    if (rec) {
      rec->objective += value;
      rec->task_losses[idx] = value;
    }
  }
  return total;
}

// One step on the shared start point. Returns the pre-step objective.
inline MetaStepRecord meta_update(ParamStore& omega, const std::vector<AdaptTask>& tasks,
                                  const MetaConfig& cfg) {
  MetaStepRecord rec;
  VecD g = outer_gradient(omega, tasks, cfg, &rec);
  sgd_step(omega, g, cfg.outer_lr);
  return rec;
}

struct PretrainRow {
  int iter = 0;
  double objective = 0.0;
  VecD task_losses;
};

struct PretrainResult {
  std::vector<PretrainRow> history;
};

// Full outer loop; omega holds the trained initialization afterwards.
inline PretrainResult pretrain(ParamStore& omega, const std::vector<AdaptTask>& tasks,
                               const MetaConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  if (tasks.empty()) throw std::invalid_argument("pretrain: no tasks");
  PretrainResult out;
  out.history.reserve(static_cast<std::size_t>(cfg.outer_iters));
  for (int it = 0; it < cfg.outer_iters; ++it) {
    MetaStepRecord rec = meta_update(omega, tasks, cfg);
    PretrainRow row;
    row.iter = it;
    row.objective = rec.objective;
    row.task_losses = std::move(rec.task_losses);
    if (log) *log << "[meta] iter " << it << ": objective=" << row.objective << "\n";
    out.history.push_back(std::move(row));
  }
  return out;
}

// Binds a data-level task to the fusion network under a fixed architecture.
// The returned closures keep a reference to the network; keep it alive.
inline AdaptTask fusion_adapt_task(const MetaTask& t, const FusionNetwork& net,
                                   const DiscreteArchitecture& arch,
                                   const LossWeights& lw = {}) {
  check_meta_task(t);
  AdaptTask out;
  out.id = t.id;
  auto objective = [&net, arch, lw](const std::vector<ImagePair>& pairs) {
    ias_detail::HalfBatch h = ias_detail::make_half(pairs);
    return [h, &net, arch, lw](ad::Tape& tape, BoundParams& bp) {
      ad::Var x = ad::leaf(tape, h.input);
      ad::Var fused = net.forward(tape, bp, arch, x);
      return weighted_task_loss(fused, ad::leaf(tape, h.a), ad::leaf(tape, h.b), h.map_a,
                                h.map_b, lw);
    };
  };
  out.train = objective(t.train);
  out.val = objective(t.val);
  return out;
}

}  // namespace taskfuse
