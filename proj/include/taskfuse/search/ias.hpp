#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/arch/network.hpp"
#include "taskfuse/arch/params.hpp"
#include "taskfuse/core/tape.hpp"
#include "taskfuse/core/vecops.hpp"
#include "taskfuse/data/dataset.hpp"
#include "taskfuse/loss/losses.hpp"

namespace taskfuse {

struct SearchConfig {
  int inner_steps = 20;    // parameter updates per outer iteration
  double lambda = 0.0;     // latency trade-off
  int epochs = 8;
  double inner_lr = 1e-3;
  double alpha_lr = 3e-4;
  double epsilon = 1e-12;  // ridge safeguard for the correction denominator
  bool wall_clock = true;  // false writes 0 timings for reproducible histories
  void validate() const {
    if (inner_steps < 1) throw std::invalid_argument("inner_steps must be at least 1");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
    if (epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
    if (inner_lr <= 0.0 || alpha_lr <= 0.0)
      throw std::invalid_argument("learning rates must be positive");
    if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
  }
};

// The four flat gradients feeding the architecture update: the training loss
// and the search loss, each differentiated against parameters and against
// architecture weights.
struct GradientBundle {
  VecD theta_loss;
  VecD theta_search;
  VecD alpha_loss;
  VecD alpha_search;
  void check() const {
    if (theta_loss.size() != theta_search.size())
      throw std::invalid_argument("gradient bundle: parameter-space sizes disagree");
    if (alpha_loss.size() != alpha_search.size())
      throw std::invalid_argument("gradient bundle: architecture-space sizes disagree");
  }
};

// Rank-one implicit hypergradient: the search-loss gradient minus the
// training-loss direction scaled by how far the search loss moves along the
// inner descent direction. The epsilon ridge keeps the ratio finite when the
// inner gradient vanishes; `ill_conditioned` reports that regime.
inline VecD implicit_alpha_gradient(const GradientBundle& b, double epsilon,
                                    bool* ill_conditioned = nullptr) {
  if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
  b.check();
  const double gg = dot(b.theta_loss, b.theta_loss);
  const double coef = dot(b.theta_loss, b.theta_search) / (gg + epsilon);
  if (ill_conditioned) *ill_conditioned = gg < epsilon;
  VecD g = b.alpha_search;
  axpy(-coef, b.alpha_loss, g);
  return g;
}

// Scalar objective over bound parameter leaves; the builder sees the same
// ParamStore ordering every call.
using ThetaObjective = std::function<ad::Var(ad::Tape&, BoundParams&)>;

struct InnerTrainRecord {
  std::vector<double> losses;  // objective value observed before each step
};

// Plain gradient descent on the parameters, architecture held fixed by the
// objective closure.
inline InnerTrainRecord inner_train(ParamStore& theta, const ThetaObjective& objective,
                                    int steps, double lr) {
  if (steps < 1) throw std::invalid_argument("inner_train: steps must be at least 1");
  InnerTrainRecord rec;
  rec.losses.reserve(static_cast<std::size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    ad::Tape tape;
    BoundParams bound = bind_params(tape, theta);
    ad::Var loss = objective(tape, bound);
    const double value = loss.val().item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "inner_train: non-finite loss " << value << " at step " << step;
      throw std::runtime_error(msg.str());
    }
    rec.losses.push_back(value);
    tape.backward(loss.id);
    sgd_step(theta, collect_param_grads(tape, bound), lr);
  }
  return rec;
}

// A search instance: parameters, architecture weights, the training/search
// loss on either data half, and the architecture-only latency term.
struct SearchProblem {
  ParamStore* theta = nullptr;
  ArchitectureWeights* alpha = nullptr;
  // half 0 is the parameter-update split, half 1 the architecture split.
  std::function<ad::Var(ad::Tape&, BoundParams&, BoundAlpha&, int half, int epoch)> loss;
  // May be empty when lambda is 0 and no regularizer reporting is wanted.
  std::function<ad::Var(ad::Tape&, BoundAlpha&)> reg;
};

struct SearchHistoryRow {
  int epoch = 0;
  double loss_f = 0.0;      // training loss after the inner steps
  double loss_alpha = 0.0;  // search loss on the architecture half
  double reg = 0.0;
  double wall_time = 0.0;   // seconds since the search started
};

struct SearchResult {
  std::vector<SearchHistoryRow> history;
  DiscreteArchitecture derived;
  bool ill_conditioned_seen = false;
};

inline SearchResult run_search(SearchProblem& problem, const SearchConfig& cfg,
                               std::ostream* log = nullptr) {
  cfg.validate();
  if (!problem.theta || !problem.alpha || !problem.loss)
    throw std::invalid_argument("run_search: problem is incomplete");
  if (cfg.lambda > 0.0 && !problem.reg)
    throw std::invalid_argument("run_search: lambda > 0 needs a regularizer");

  SearchResult result;
  const auto started = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto frozen_alpha_objective = [&](ad::Tape& tape, BoundParams& bp) {
      BoundAlpha ba = bind_alpha(tape, *problem.alpha, false);
      return problem.loss(tape, bp, ba, 0, epoch);
    };
    InnerTrainRecord inner = inner_train(*problem.theta, frozen_alpha_objective,
                                         cfg.inner_steps, cfg.inner_lr);

    // Training-loss gradients on the parameter half.
    ad::Tape t_train;
    BoundParams bp1 = bind_params(t_train, *problem.theta);
    BoundAlpha ba1 = bind_alpha(t_train, *problem.alpha);
    ad::Var l_train = problem.loss(t_train, bp1, ba1, 0, epoch);
    t_train.backward(l_train.id);

    // Search-loss gradients on the architecture half; the latency term only
    // touches the architecture leaves, so one tape covers both gradients.
    ad::Tape t_search;
    BoundParams bp2 = bind_params(t_search, *problem.theta);
    BoundAlpha ba2 = bind_alpha(t_search, *problem.alpha);
    ad::Var l_fuse = problem.loss(t_search, bp2, ba2, 1, epoch);
    double reg_value = 0.0;
    ad::Var l_search = l_fuse;
    if (problem.reg) {
      ad::Var r = problem.reg(t_search, ba2);
      reg_value = r.val().item();
      if (cfg.lambda > 0.0) l_search = ad::add(l_fuse, ad::scale(r, cfg.lambda));
    }
    t_search.backward(l_search.id);

    GradientBundle bundle;
    bundle.theta_loss = collect_param_grads(t_train, bp1);
    bundle.theta_search = collect_param_grads(t_search, bp2);
    bundle.alpha_loss = collect_alpha_grads(t_train, ba1);
    bundle.alpha_search = collect_alpha_grads(t_search, ba2);
    bool ill = false;
    VecD g_alpha = implicit_alpha_gradient(bundle, cfg.epsilon, &ill);
    if (ill) {
      result.ill_conditioned_seen = true;
      if (log)
        *log << "[search] epoch " << epoch
             << ": inner gradient norm below epsilon; correction ill-conditioned\n";
    }
    for (double g : g_alpha)
      if (!std::isfinite(g)) {
        std::ostringstream msg;
        msg << "run_search: non-finite architecture gradient at epoch " << epoch
            << " (|g_theta_loss|=" << nrm2(bundle.theta_loss)
            << " |g_theta_search|=" << nrm2(bundle.theta_search)
            << " |g_alpha_loss|=" << nrm2(bundle.alpha_loss)
            << " |g_alpha_search|=" << nrm2(bundle.alpha_search) << ")";
        throw std::runtime_error(msg.str());
      }
    VecD flat = problem.alpha->flatten();
    axpy(-cfg.alpha_lr, g_alpha, flat);
    problem.alpha->unflatten(flat);

    SearchHistoryRow row;
    row.epoch = epoch;
    row.loss_f = inner.losses.back();
    row.loss_alpha = l_search.val().item();
    row.reg = reg_value;
    row.wall_time =
        cfg.wall_clock
            ? std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()
            : 0.0;
    result.history.push_back(row);
    if (log)
      *log << "[search] epoch " << epoch << " loss_f " << row.loss_f << " loss_alpha "
           << row.loss_alpha << " reg " << row.reg << "\n";
  }
  result.derived = derive_architecture(*problem.alpha);
  return result;
}

// --- fusion-network adapters ---

namespace ias_detail {

struct HalfBatch {
  Tensor input{{1, 2, 1, 1}};
  Tensor a{{1, 1, 1, 1}};
  Tensor b{{1, 1, 1, 1}};
  Tensor map_a{{1, 1, 1, 1}};
  Tensor map_b{{1, 1, 1, 1}};
};

inline HalfBatch make_half(const std::vector<ImagePair>& pairs) {
  HalfBatch h;
  h.input = stack_pair_inputs(pairs);
  h.a = stack_sources(pairs, true);
  h.b = stack_sources(pairs, false);
  auto maps = saliency_weights(h.a, h.b);
  h.map_a = maps.first;
  h.map_b = maps.second;
  return h;
}

inline ad::Var half_loss(ad::Tape& tape, const FusionNetwork& net, BoundParams& bp,
                         BoundAlpha& ba, const HalfBatch& h, const LossWeights& lw) {
  ad::Var x = ad::leaf(tape, h.input);
  ad::Var fused = net.forward(tape, bp, ba, x);
  return weighted_task_loss(fused, ad::leaf(tape, h.a), ad::leaf(tape, h.b), h.map_a, h.map_b,
                            lw);
}

}  // namespace ias_detail

// Relaxed search objective value at the current parameters and the given
// architecture: fusion loss on the batch plus lambda times expected cost.
inline double search_objective(const FusionNetwork& net, const ArchitectureWeights& alpha,
                               const std::vector<ImagePair>& batch, double lambda,
                               const LatencyTable& table, const LossWeights& lw = {}) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
  ias_detail::HalfBatch h = ias_detail::make_half(batch);
  ad::Tape tape;
  BoundParams bp = bind_params(tape, net.params, false);
  BoundAlpha ba = bind_alpha(tape, alpha, false);
  const double loss = ias_detail::half_loss(tape, net, bp, ba, h, lw).val().item();
  if (lambda == 0.0) return loss;
  return loss + lambda * latency_regularizer_value(alpha, net.edge_candidate_ids(), table);
}

// Architecture search over the fusion supernet. Each task dataset is split
// into parameter/architecture halves; epochs visit the tasks round-robin.
inline SearchResult search_fusion(FusionNetwork& net, ArchitectureWeights& alpha,
                                  const std::vector<std::vector<ImagePair>>& tasks,
                                  const SearchConfig& cfg, const LossWeights& lw = {},
                                  std::ostream* log = nullptr) {
  cfg.validate();
  if (tasks.empty()) throw std::invalid_argument("search_fusion: no task datasets");
  std::vector<ias_detail::HalfBatch> param_halves, arch_halves;
  for (const auto& data : tasks) {
    auto [first, second] = split_halves(data);
    param_halves.push_back(ias_detail::make_half(first));
    arch_halves.push_back(ias_detail::make_half(second));
  }
  const LatencyTable table = net.config().latency;
  SearchProblem problem;
  problem.theta = &net.params;
  problem.alpha = &alpha;
  problem.loss = [&](ad::Tape& tape, BoundParams& bp, BoundAlpha& ba, int half, int epoch) {
    const std::size_t task = static_cast<std::size_t>(epoch) % tasks.size();
    const ias_detail::HalfBatch& h = half == 0 ? param_halves[task] : arch_halves[task];
    return ias_detail::half_loss(tape, net, bp, ba, h, lw);
  };
  problem.reg = [&](ad::Tape& tape, BoundAlpha& ba) {
    return latency_regularizer(tape, ba, net.edge_candidate_ids(), table);
  };
  return run_search(problem, cfg, log);
}

}  // namespace taskfuse
