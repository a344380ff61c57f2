#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "taskfuse/arch/network.hpp"
#include "taskfuse/core/rng.hpp"
#include "taskfuse/loss/losses.hpp"
#include "taskfuse/meta/meta_init.hpp"
#include "taskfuse/search/ias.hpp"

namespace taskfuse {

struct JointConfig {
  int epochs = 12;
  int batch = 4;
  double lr = 1e-4;
  std::string optimizer = "adam";  // adam | sgd
  double eta = 0.5;                // fusion-quality weight inside the joint objective
  bool freeze_fusion = false;      // keep fusion weights fixed, train the task head alone

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("joint epochs must be >= 0");
    if (batch < 1) throw std::invalid_argument("joint batch must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("joint lr must be positive");
    if (optimizer != "adam" && optimizer != "sgd")
      throw std::invalid_argument("joint optimizer must be adam or sgd");
    if (eta < 0.0) throw std::invalid_argument("joint eta must be >= 0");
  }
};

struct PhaseToggles {
  bool search = true;
  bool meta = true;
  bool joint = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  PhaseToggles phases;
  int patch = 64;
  bool augment_flip = true;
  bool augment_rotate = true;
  std::string task = "enhance";  // enhance | mask
  SearchSpaceConfig space;
  SearchConfig search;
  MetaConfig meta;
  LossWeights loss;
  JointConfig joint;

  void validate() const {
    if (patch < 8) throw std::invalid_argument("patch must be >= 8");
    if (task != "enhance" && task != "mask")
      throw std::invalid_argument("task must be enhance or mask");
    search.validate();
    meta.validate();
    loss.validate();
    joint.validate();
  }
};

namespace config_detail {

using nlohmann::json;

template <class T>
void pick(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

inline void parse_space(const json& j, SearchSpaceConfig* s) {
  pick(j, "width", &s->width);
  pick(j, "fusion_cells", &s->fusion_cells);
  pick(j, "edges_per_cell", &s->edges_per_cell);
  pick(j, "candidates", &s->candidates);
  pick(j, "task_branch_cells", &s->task_branch_cells);
  pick(j, "task_edges_per_cell", &s->task_edges_per_cell);
  pick(j, "task_candidates", &s->task_candidates);
  pick(j, "activation", &s->activation);
  pick(j, "leaky_slope", &s->leaky_slope);
  pick(j, "ca_reduction", &s->ca_reduction);
  pick(j, "sa_kernel", &s->sa_kernel);
  if (j.contains("latency"))
    for (const auto& [op, cost] : j.at("latency").items())
      s->latency.cost[op] = cost.get<double>();
}

inline json dump_space(const SearchSpaceConfig& s) {
  json j;
  j["width"] = s.width;
  j["fusion_cells"] = s.fusion_cells;
  j["edges_per_cell"] = s.edges_per_cell;
  j["candidates"] = s.candidates;
  j["task_branch_cells"] = s.task_branch_cells;
  j["task_edges_per_cell"] = s.task_edges_per_cell;
  j["task_candidates"] = s.task_candidates;
  j["activation"] = s.activation;
  j["leaky_slope"] = s.leaky_slope;
  j["ca_reduction"] = s.ca_reduction;
  j["sa_kernel"] = s.sa_kernel;
  json lat;
  for (const auto& [op, cost] : std::map<std::string, double>(s.latency.cost.begin(),
                                                             s.latency.cost.end()))
    lat[op] = cost;
  j["latency"] = lat;
  return j;
}

}  // namespace config_detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using config_detail::pick;
  ExperimentConfig c;
  pick(j, "seed", &c.seed);
  if (j.contains("phases")) {
    const auto& p = j.at("phases");
    pick(p, "search", &c.phases.search);
    pick(p, "meta", &c.phases.meta);
    pick(p, "joint", &c.phases.joint);
  }
  pick(j, "patch", &c.patch);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    pick(a, "flip", &c.augment_flip);
    pick(a, "rotate", &c.augment_rotate);
  }
  pick(j, "task", &c.task);
  if (j.contains("space")) config_detail::parse_space(j.at("space"), &c.space);
  if (j.contains("search")) {
    const auto& s = j.at("search");
    pick(s, "inner_steps", &c.search.inner_steps);
    pick(s, "lambda", &c.search.lambda);
    pick(s, "epochs", &c.search.epochs);
    pick(s, "inner_lr", &c.search.inner_lr);
    pick(s, "alpha_lr", &c.search.alpha_lr);
    pick(s, "epsilon", &c.search.epsilon);
    pick(s, "wall_clock", &c.search.wall_clock);
  }
  if (j.contains("meta")) {
    const auto& m = j.at("meta");
    pick(m, "inner_steps", &c.meta.inner_steps);
    pick(m, "inner_lr", &c.meta.inner_lr);
    pick(m, "outer_lr", &c.meta.outer_lr);
    pick(m, "outer_iters", &c.meta.outer_iters);
    pick(m, "first_order", &c.meta.first_order);
    pick(m, "hvp_step", &c.meta.hvp_step);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    pick(l, "mu", &c.loss.mu);
    pick(l, "eta", &c.loss.eta);
    pick(l, "ssim_window", &c.loss.ssim_window);
    pick(l, "ssim_sigma", &c.loss.ssim_sigma);
    pick(l, "c1", &c.loss.c1);
    pick(l, "c2", &c.loss.c2);
    pick(l, "feature_window", &c.loss.feature_window);
    pick(l, "feature_weights", &c.loss.feature_weights);
  }
  if (j.contains("joint")) {
    const auto& jo = j.at("joint");
    pick(jo, "epochs", &c.joint.epochs);
    pick(jo, "batch", &c.joint.batch);
    pick(jo, "lr", &c.joint.lr);
    pick(jo, "optimizer", &c.joint.optimizer);
    pick(jo, "eta", &c.joint.eta);
    pick(jo, "freeze_fusion", &c.joint.freeze_fusion);
  }
  c.validate();
  return c;
}

// Canonical serialization: every field is written, keys are sorted by the json
// object itself, so equal configurations always produce equal text (and equal
// hashes) regardless of which keys the source file spelled out.
inline nlohmann::json dump_experiment_config(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["phases"] = {{"search", c.phases.search}, {"meta", c.phases.meta}, {"joint", c.phases.joint}};
  j["patch"] = c.patch;
  j["augment"] = {{"flip", c.augment_flip}, {"rotate", c.augment_rotate}};
  j["task"] = c.task;
  j["space"] = config_detail::dump_space(c.space);
  j["search"] = {{"inner_steps", c.search.inner_steps}, {"lambda", c.search.lambda},
                 {"epochs", c.search.epochs},           {"inner_lr", c.search.inner_lr},
                 {"alpha_lr", c.search.alpha_lr},       {"epsilon", c.search.epsilon},
                 {"wall_clock", c.search.wall_clock}};
  j["meta"] = {{"inner_steps", c.meta.inner_steps}, {"inner_lr", c.meta.inner_lr},
               {"outer_lr", c.meta.outer_lr},       {"outer_iters", c.meta.outer_iters},
               {"first_order", c.meta.first_order}, {"hvp_step", c.meta.hvp_step}};
  j["loss"] = {{"mu", c.loss.mu},
               {"eta", c.loss.eta},
               {"ssim_window", c.loss.ssim_window},
               {"ssim_sigma", c.loss.ssim_sigma},
               {"c1", c.loss.c1},
               {"c2", c.loss.c2},
               {"feature_window", c.loss.feature_window},
               {"feature_weights", c.loss.feature_weights}};
  j["joint"] = {{"epochs", c.joint.epochs}, {"batch", c.joint.batch},
                {"lr", c.joint.lr},         {"optimizer", c.joint.optimizer},
                {"eta", c.joint.eta},       {"freeze_fusion", c.joint.freeze_fusion}};
  return j;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
  return fnv1a64(dump_experiment_config(c).dump());
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("bad config " + path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

// A space file is the "space" section on its own (the full experiment file
// also works; its other sections are ignored here).
inline SearchSpaceConfig load_space_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open space config " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("bad space config " + path + ": " + e.what());
  }
  SearchSpaceConfig s;
  config_detail::parse_space(j.contains("space") ? j.at("space") : j, &s);
  return s;
}

}  // namespace taskfuse
