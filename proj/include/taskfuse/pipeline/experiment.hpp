#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/pipeline/evaluate.hpp"
#include "taskfuse/pipeline/ingest.hpp"
#include "taskfuse/pipeline/phases.hpp"

namespace taskfuse {

struct ExperimentResult {
  bool ran_search = false, ran_meta = false, ran_joint = false;
  Checkpoint search, meta;
  JointResult joint;
  MetricReport metrics;
};

namespace exp_detail {

// Every artifact below the run directory, relative path + content hash, in
// sorted order. Two runs agree exactly when their manifests agree.
inline void write_manifest(const std::string& run_dir, const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), run_dir).generic_string();
    if (rel == "manifest.txt") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  std::ofstream out(run_dir + "/manifest.txt", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest in " + run_dir);
  char hex[24];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  out << "seed " << cfg.seed << "\n";
  out << "config_hash " << hex << "\n";
  out << "phases search=" << cfg.phases.search << " meta=" << cfg.phases.meta
      << " joint=" << cfg.phases.joint << "\n";
  for (const std::string& rel : files) {
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(file_hash(run_dir + "/" + rel)));
    out << "file " << hex << " " << rel << "\n";
  }
}

}  // namespace exp_detail

// The whole procedure over an in-memory dataset: patch extraction, the
// enabled phases in order, fused outputs from the last trained state, metric
// evaluation, report, and a hashed artifact manifest.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::vector<ImagePair>& pairs,
                                       const std::string& run_dir, std::ostream* log = nullptr) {
  cfg.validate();
  if (pairs.empty()) throw std::invalid_argument("run_experiment: empty dataset");
  if (!cfg.phases.search && !cfg.phases.meta && !cfg.phases.joint)
    throw std::invalid_argument("run_experiment: every phase is disabled");
  for (const ImagePair& p : pairs)
    if (p.a.dim(2) < cfg.patch || p.a.dim(3) < cfg.patch)
      throw std::invalid_argument("patch size " + std::to_string(cfg.patch) +
                                  " exceeds the dimensions of pair " + p.id);

  std::filesystem::create_directories(run_dir);
  {
    std::ofstream out(run_dir + "/config.json", std::ios::binary);
    out << dump_experiment_config(cfg).dump(2) << "\n";
  }

  PatchifyOptions popt;
  popt.patch = cfg.patch;
  popt.augment_flip = cfg.augment_flip;
  popt.augment_rotate = cfg.augment_rotate;
  const std::vector<ImagePair> patches = patchify(pairs, popt, Rng(cfg.seed).derive("patchify"));

  ExperimentResult result;
  PhaseInputs inputs;
  if (cfg.phases.search) {
    result.search = run_phase_search(cfg, patches, run_dir, log);
    result.ran_search = true;
    inputs.search = &result.search;
  }
  if (cfg.phases.meta) {
    result.meta = run_phase_meta(cfg, build_meta_tasks(patches), inputs, run_dir, log);
    result.ran_meta = true;
    inputs.meta = &result.meta;
  }
  if (cfg.phases.joint) {
    result.joint = run_phase_joint(cfg, patches, inputs, run_dir, log);
    result.ran_joint = true;
  }

  const Checkpoint& last = result.ran_joint  ? result.joint.ckpt
                           : result.ran_meta ? result.meta
                                             : result.search;
  FusionModel model(cfg, last);
  std::filesystem::create_directories(run_dir + "/fused");
  for (const ImagePair& pair : pairs) {
    const Tensor fused = fuse_pair(model.net, model.arch, pair);
    if (pair.has_color)
      write_ppm(run_dir + "/fused/" + pair.id + ".ppm", fused, pair.cb, pair.cr);
    else
      write_pgm(run_dir + "/fused/" + pair.id + ".pgm", fused);
    result.metrics.pairs.push_back(evaluate_pair(pair.id, fused, pair.a, pair.b));
  }
  write_metrics_csv(run_dir + "/metrics.csv", result.metrics);
  make_report(run_dir);
  exp_detail::write_manifest(run_dir, cfg);
  return result;
}

}  // namespace taskfuse
