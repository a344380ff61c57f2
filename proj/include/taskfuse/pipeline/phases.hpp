#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/arch/network.hpp"
#include "taskfuse/arch/params.hpp"
#include "taskfuse/core/csv.hpp"
#include "taskfuse/core/rng.hpp"
#include "taskfuse/data/dataset.hpp"
#include "taskfuse/loss/losses.hpp"
#include "taskfuse/meta/meta_init.hpp"
#include "taskfuse/pipeline/checkpoint.hpp"
#include "taskfuse/pipeline/config.hpp"
#include "taskfuse/search/ias.hpp"

namespace taskfuse {

// Prior-phase state handed to a later phase. A null slot means that phase's
// artifact is unavailable; whether that is an error or a documented fallback
// depends on the config's phase toggles.
struct PhaseInputs {
  const Checkpoint* search = nullptr;
  const Checkpoint* meta = nullptr;
};

namespace phase_detail {

inline void note(std::ostream* log, const std::string& line) {
  if (log) *log << line << "\n";
}

inline void ensure_dirs(const std::string& run_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir + "/checkpoints");
  fs::create_directories(run_dir + "/history");
}

// Adaptive-moment steps for the joint phase; the search and adaptation loops
// stay on plain gradient descent.
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  VecD m, v;
  long t = 0;

  void step(ParamStore& store, const VecD& grad, double lr) {
    if (m.empty()) {
      m.assign(grad.size(), 0.0);
      v.assign(grad.size(), 0.0);
    }
    if (grad.size() != m.size()) throw std::invalid_argument("adam: gradient size changed");
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    VecD update(grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      update[i] = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
    sgd_step(store, update, lr);
  }
};

}  // namespace phase_detail

// The enhancement target: the union of source intensities, contrast-stretched
// to the unit range. Flat unions are left alone rather than amplified.
inline Tensor enhance_target(const ImagePair& pair) {
  Tensor m = pair.a;
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = std::max(m.v[i], pair.b.v[i]);
  double lo = m.v[0], hi = m.v[0];
  for (double x : m.v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi - lo < 1e-6) return m;
  for (double& x : m.v) x = (x - lo) / (hi - lo);
  return m;
}

namespace phase_detail {

inline Tensor stack_targets(const std::vector<ImagePair>& pairs, const std::string& task) {
  if (pairs.empty()) throw std::invalid_argument("stack_targets: empty batch");
  const int h = pairs[0].a.dim(2), w = pairs[0].a.dim(3);
  Tensor out({static_cast<int>(pairs.size()), 1, h, w});
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    Tensor t;
    if (task == "enhance") {
      t = enhance_target(pairs[n]);
    } else {
      if (!pairs[n].has_mask)
        throw std::runtime_error("pair " + pairs[n].id +
                                 " has no object mask; the mask task needs one");
      t = pairs[n].mask;
    }
    std::copy(t.v.begin(), t.v.end(),
              out.v.begin() + static_cast<long>(n) * static_cast<long>(h) * w);
  }
  return out;
}

}  // namespace phase_detail

// ---------------------------------------------------------------------------
// Phase 1: architecture search on the relaxed network.

inline Checkpoint run_phase_search(const ExperimentConfig& cfg,
                                   const std::vector<ImagePair>& data,
                                   const std::string& run_dir, std::ostream* log = nullptr) {
  cfg.validate();
  phase_detail::ensure_dirs(run_dir);
  Rng rng = Rng(cfg.seed).derive("search-net");
  FusionNetwork net(cfg.space, rng);
  ArchitectureWeights alpha = ArchitectureWeights::uniform_for(net.edge_sizes());
  SearchResult result = search_fusion(net, alpha, {data}, cfg.search, cfg.loss, log);

  CsvWriter csv(run_dir + "/history/search.csv",
                {"epoch", "loss_F", "loss_alpha", "reg", "wall_time"});
  for (const auto& row : result.history)
    csv.row({std::to_string(row.epoch), csv_num(row.loss_f), csv_num(row.loss_alpha),
             csv_num(row.reg), csv_num(row.wall_time)});

  save_architecture_manifest(run_dir + "/architecture.txt", net, result.derived);

  Checkpoint ckpt;
  ckpt.phase = "search";
  ckpt.seed = cfg.seed;
  ckpt.config_hash = config_hash(cfg);
  put_alpha(ckpt, "alpha", alpha);
  put_params(ckpt, "theta_f", net.params);
  save_checkpoint(run_dir + "/checkpoints/search.ckpt", ckpt);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Phase 2: shared-initialization pretraining across fusion tasks.

namespace phase_detail {

// Architecture weights for the meta and joint phases: read them from the
// search artifact when there is one; if the search phase was deliberately
// skipped, substitute randomly drawn weights (and say so); otherwise the
// prerequisite is simply missing.
inline ArchitectureWeights resolve_alpha(const ExperimentConfig& cfg, const PhaseInputs& inputs,
                                         const FusionNetwork& net, const char* phase,
                                         std::ostream* log) {
  ArchitectureWeights alpha = ArchitectureWeights::uniform_for(net.edge_sizes());
  const Checkpoint* source = nullptr;
  if (inputs.search && inputs.search->arrays.count("alpha/edge0")) source = inputs.search;
  else if (inputs.meta && inputs.meta->arrays.count("alpha/edge0")) source = inputs.meta;
  if (source) {
    take_alpha(*source, "alpha", alpha);
    return alpha;
  }
  if (cfg.phases.search)
    throw std::runtime_error(std::string("the ") + phase +
                             " phase is missing its search-phase checkpoint (architecture "
                             "weights); run the search phase first or disable it");
  Rng rng = Rng(cfg.seed).derive("alpha-fallback");
  for (Tensor& t : alpha.logits)
    for (double& x : t.v) x = 0.1 * rng.normal();
  note(log, std::string("[") + phase +
                "] substituting randomly drawn architecture weights (search phase disabled)");
  return alpha;
}

}  // namespace phase_detail

// Splits a patch set into task datasets for pretraining: round-robin into two
// groups, then every fourth patch of a group becomes validation.
inline std::vector<MetaTask> build_meta_tasks(const std::vector<ImagePair>& patches) {
  if (patches.size() < 4)
    throw std::invalid_argument("pretraining needs at least 4 patches, got " +
                                std::to_string(patches.size()));
  std::vector<MetaTask> tasks(2);
  tasks[0].id = "t0";
  tasks[1].id = "t1";
  for (auto& t : tasks) t.kind = "fusion";
  for (std::size_t i = 0; i < patches.size(); ++i) {
    MetaTask& t = tasks[i % 2];
    if ((i / 2) % 4 == 3)
      t.val.push_back(patches[i]);
    else
      t.train.push_back(patches[i]);
  }
  for (auto& t : tasks) {
    if (t.val.empty() && t.train.size() > 1) {
      t.val.push_back(t.train.back());
      t.train.pop_back();
    }
    check_meta_task(t);
  }
  return tasks;
}

inline Checkpoint run_phase_meta(const ExperimentConfig& cfg, const std::vector<MetaTask>& tasks,
                                 const PhaseInputs& inputs, const std::string& run_dir,
                                 std::ostream* log = nullptr) {
  cfg.validate();
  phase_detail::ensure_dirs(run_dir);
  Rng rng = Rng(cfg.seed).derive("meta-net");
  FusionNetwork net(cfg.space, rng);
  ArchitectureWeights alpha = phase_detail::resolve_alpha(cfg, inputs, net, "meta", log);
  const DiscreteArchitecture arch = derive_architecture(alpha);

  std::vector<AdaptTask> adapt;
  adapt.reserve(tasks.size());
  for (const MetaTask& t : tasks) adapt.push_back(fusion_adapt_task(t, net, arch, cfg.loss));

  ParamStore omega = net.params;
  PretrainResult result = pretrain(omega, adapt, cfg.meta, log);

  std::vector<std::string> header = {"iter", "objective"};
  for (const MetaTask& t : tasks) header.push_back("loss_" + t.id);
  CsvWriter csv(run_dir + "/history/meta.csv", header);
  for (const auto& row : result.history) {
    std::vector<std::string> cells = {std::to_string(row.iter), csv_num(row.objective)};
    for (double v : row.task_losses) cells.push_back(csv_num(v));
    csv.row(cells);
  }

  Checkpoint ckpt;
  ckpt.phase = "meta";
  ckpt.seed = cfg.seed;
  ckpt.config_hash = config_hash(cfg);
  put_alpha(ckpt, "alpha", alpha);
  put_params(ckpt, "theta_f0", omega);
  save_checkpoint(run_dir + "/checkpoints/meta.ckpt", ckpt);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Phase 3: joint training of the derived fusion network and the task head.

struct JointHistoryRow {
  int epoch = 0;
  double loss_task = 0.0;
  double loss_fusion = 0.0;
  double objective = 0.0;
};

struct JointResult {
  Checkpoint ckpt;
  std::vector<JointHistoryRow> history;
};

inline JointResult run_phase_joint(const ExperimentConfig& cfg,
                                   const std::vector<ImagePair>& data, const PhaseInputs& inputs,
                                   const std::string& run_dir, std::ostream* log = nullptr) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("joint phase: empty dataset");
  phase_detail::ensure_dirs(run_dir);

  Rng rng = Rng(cfg.seed).derive("joint-net");
  FusionNetwork net(cfg.space, rng);
  ArchitectureWeights alpha = phase_detail::resolve_alpha(cfg, inputs, net, "joint", log);
  const DiscreteArchitecture arch = derive_architecture(alpha);

  if (inputs.meta && inputs.meta->arrays.count("theta_f0/stem")) {
    take_params(*inputs.meta, "theta_f0", net.params);
  } else if (cfg.phases.meta) {
    throw std::runtime_error(
        "the joint phase is missing its meta-phase checkpoint (pretrained fusion "
        "initialization); run the meta phase first or disable it");
  } else {
    phase_detail::note(
        log, "[joint] substituting a randomly initialized fusion network (meta phase disabled)");
  }

  Rng head_rng = Rng(cfg.seed).derive("task-head");
  TaskHead head(cfg.space, head_rng);
  const DiscreteArchitecture task_arch{std::vector<int>(
      static_cast<std::size_t>(head.edge_count()), 0)};

  phase_detail::Adam adam_f, adam_t;
  const bool use_adam = cfg.joint.optimizer == "adam";
  const bool train_fusion = !cfg.joint.freeze_fusion;

  JointResult result;
  CsvWriter csv(run_dir + "/history/joint.csv",
                {"epoch", "loss_T", "loss_F", "objective"});
  for (int epoch = 0; epoch < cfg.joint.epochs; ++epoch) {
    double sum_t = 0.0, sum_f = 0.0, sum_obj = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < data.size();
         start += static_cast<std::size_t>(cfg.joint.batch)) {
      const std::size_t stop = std::min(data.size(), start + static_cast<std::size_t>(cfg.joint.batch));
      const std::vector<ImagePair> batch(data.begin() + static_cast<long>(start),
                                         data.begin() + static_cast<long>(stop));
      ias_detail::HalfBatch h = ias_detail::make_half(batch);
      const Tensor target = phase_detail::stack_targets(batch, cfg.task);

      ad::Tape tape;
      BoundParams bf = bind_params(tape, net.params, train_fusion);
      BoundParams bt = bind_params(tape, head.params, true);
      ad::Var fused = net.forward(tape, bf, arch, ad::leaf(tape, h.input));
      ad::Var loss_f = weighted_task_loss(fused, ad::leaf(tape, h.a), ad::leaf(tape, h.b),
                                          h.map_a, h.map_b, cfg.loss);
      ad::Var pred = head.forward(tape, bt, task_arch, fused);
      ad::Var loss_t = cfg.task == "mask" ? ad::bce_with_logits(pred, target)
                                          : intensity_loss(pred, ad::leaf(tape, target));
      ad::Var objective = joint_objective(loss_t, loss_f, cfg.joint.eta);

      const double vt = loss_t.val().item(), vf = loss_f.val().item(),
                   vo = objective.val().item();
      if (!std::isfinite(vo))
        throw std::runtime_error("joint phase diverged (non-finite objective at epoch " +
                                 std::to_string(epoch) + ")");
      sum_t += vt;
      sum_f += vf;
      sum_obj += vo;
      ++batches;

      tape.backward(objective.id);
      if (train_fusion) {
        const VecD gf = collect_param_grads(tape, bf);
        if (use_adam)
          adam_f.step(net.params, gf, cfg.joint.lr);
        else
          sgd_step(net.params, gf, cfg.joint.lr);
      }
      const VecD gt = collect_param_grads(tape, bt);
      if (use_adam)
        adam_t.step(head.params, gt, cfg.joint.lr);
      else
        sgd_step(head.params, gt, cfg.joint.lr);
    }
    JointHistoryRow row;
    row.epoch = epoch;
    row.loss_task = sum_t / batches;
    row.loss_fusion = sum_f / batches;
    row.objective = sum_obj / batches;
    result.history.push_back(row);
    csv.row({std::to_string(row.epoch), csv_num(row.loss_task), csv_num(row.loss_fusion),
             csv_num(row.objective)});
    phase_detail::note(log, "[joint] epoch " + std::to_string(epoch) +
                                ": objective=" + csv_num(row.objective));
  }

  result.ckpt.phase = "joint";
  result.ckpt.seed = cfg.seed;
  result.ckpt.config_hash = config_hash(cfg);
  put_alpha(result.ckpt, "alpha", alpha);
  put_params(result.ckpt, "theta_f", net.params);
  put_params(result.ckpt, "theta_t", head.params);
  save_checkpoint(run_dir + "/checkpoints/joint.ckpt", result.ckpt);
  return result;
}

// ---------------------------------------------------------------------------
// Inference: fused luminance for one pair, clamped to the unit range.

inline Tensor fuse_pair(const FusionNetwork& net, const DiscreteArchitecture& arch,
                        const ImagePair& pair) {
  const int h = pair.a.dim(2), w = pair.a.dim(3);
  const int needed = std::max(8, net.config().sa_kernel);
  if (h < needed || w < needed)
    throw std::runtime_error("fuse: image " + std::to_string(h) + "x" + std::to_string(w) +
                             " is smaller than the network's receptive field (needs at least " +
                             std::to_string(needed) + " per side)");
  ad::Tape tape;
  BoundParams bp = bind_params(tape, net.params, false);
  ad::Var fused = net.forward(tape, bp, arch, ad::leaf(tape, stack_pair_inputs({pair})));
  Tensor out = fused.val();
  for (double& x : out.v) x = std::clamp(x, 0.0, 1.0);
  return out;
}

// Rebuilds the trained fusion network + architecture from a joint (or search)
// checkpoint. The param layout comes from the config, so the checkpoint must
// match it; the stored hash enforces that unless overridden.
struct FusionModel {
  Rng init_rng;  // consumed by the network constructor; the weights it draws
                 // are immediately replaced from the checkpoint
  FusionNetwork net;
  DiscreteArchitecture arch;

  FusionModel(const ExperimentConfig& cfg, const Checkpoint& ckpt, bool allow_mismatch = false,
              std::vector<std::string>* warnings = nullptr)
      : init_rng(Rng(cfg.seed).derive("fuse-model")), net(cfg.space, init_rng) {
    check_checkpoint_config(ckpt, config_hash(cfg), allow_mismatch, warnings);
    ArchitectureWeights alpha = ArchitectureWeights::uniform_for(net.edge_sizes());
    take_alpha(ckpt, "alpha", alpha);
    arch = derive_architecture(alpha);
    const std::string prefix = ckpt.arrays.count("theta_f/stem") ? "theta_f" : "theta_f0";
    take_params(ckpt, prefix, net.params);
  }
};

}  // namespace taskfuse
