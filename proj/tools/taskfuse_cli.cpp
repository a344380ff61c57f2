#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "taskfuse/pipeline/experiment.hpp"
#include "taskfuse/pipeline/synth.hpp"

namespace fs = std::filesystem;
using namespace taskfuse;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string run_dir = "run";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ExperimentConfig load_config(const GlobalArgs& g) {
  ExperimentConfig cfg;
  if (!g.config_path.empty()) cfg = load_experiment_config(g.config_path);
  if (g.seed_set) cfg.seed = g.seed;
  return cfg;
}

std::vector<ImagePair> load_pairs(const std::string& dir) {
  IngestReport report = ingest_directory(dir);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  return report.pairs;
}

std::vector<ImagePair> load_patches(const ExperimentConfig& cfg, const std::string& dir) {
  PatchifyOptions opt;
  opt.patch = cfg.patch;
  opt.augment_flip = cfg.augment_flip;
  opt.augment_rotate = cfg.augment_rotate;
  const auto pairs = load_pairs(dir);
  for (const ImagePair& p : pairs)
    if (p.a.dim(2) < cfg.patch || p.a.dim(3) < cfg.patch)
      throw std::runtime_error("patch size " + std::to_string(cfg.patch) +
                               " exceeds the dimensions of pair " + p.id);
  return patchify(pairs, opt, Rng(cfg.seed).derive("patchify"));
}

// Task manifest: one task per line, "<id> <train_dir> <val_dir> <kind>",
// blank lines and #-comments ignored.
std::vector<MetaTask> load_task_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open task manifest " + path);
  std::vector<MetaTask> tasks;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    MetaTask t;
    std::string train_dir, val_dir;
    if (!(row >> t.id)) continue;  // blank line
    if (!(row >> train_dir >> val_dir >> t.kind))
      throw std::runtime_error("task manifest " + path + " line " + std::to_string(lineno) +
                               ": want <id> <train_dir> <val_dir> <kind>");
    t.train = load_pairs(train_dir);
    t.val = load_pairs(val_dir);
    check_meta_task(t);
    tasks.push_back(std::move(t));
  }
  if (tasks.empty()) throw std::runtime_error("task manifest " + path + " lists no tasks");
  return tasks;
}

const Checkpoint* maybe_load(const std::string& path, Checkpoint& slot) {
  if (!fs::exists(path)) return nullptr;
  slot = load_checkpoint(path);
  return &slot;
}

void copy_artifact(const std::string& from, const std::string& to) {
  if (to.empty() || fs::weakly_canonical(to) == fs::weakly_canonical(from)) return;
  if (const fs::path parent = fs::path(to).parent_path(); !parent.empty())
    fs::create_directories(parent);
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

void finish_run(const std::string& run_dir, const ExperimentConfig& cfg) {
  std::ofstream out(run_dir + "/config.json", std::ios::binary);
  out << dump_experiment_config(cfg).dump(2) << "\n";
  out.close();
  exp_detail::write_manifest(run_dir, cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"task-guided multi-modal image fusion: search, pretrain, train, fuse, score"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path, "experiment configuration (JSON)")
      ->check(CLI::ExistingFile);
  app.add_option("--out", g.run_dir, "run directory for artifacts (default: run)");
  app.add_option("--seed", g.seed, "seed override")->each([&g](const std::string&) {
    g.seed_set = true;
  });

  // ---- search ----
  auto* search = app.add_subcommand("search", "architecture search on the relaxed network");
  std::string search_space, search_data, search_ckpt_out;
  search->add_option("--space", search_space, "search space file (JSON)")
      ->check(CLI::ExistingFile);
  search->add_option("--data", search_data, "directory of <id>_A/<id>_B image pairs")
      ->required()
      ->check(CLI::ExistingDirectory);
  double search_lambda = -1.0;
  int search_epochs = -1;
  search->add_option("--lambda", search_lambda, "latency trade-off weight");
  search->add_option("--epochs", search_epochs, "search epochs");
  search->add_option("--out", search_ckpt_out,
                     "a *.ckpt path copies the checkpoint there; anything else names the run "
                     "directory");

  // ---- meta-init ----
  auto* meta = app.add_subcommand("meta-init", "pretrain a shared fusion initialization");
  std::string meta_tasks, meta_data, meta_ckpt_out, meta_first_order;
  int meta_k = -1, meta_outer = -1;
  meta->add_option("--tasks", meta_tasks,
                   "task manifest: lines of <id> <train_dir> <val_dir> <kind>")
      ->check(CLI::ExistingFile);
  meta->add_option("--data", meta_data, "single pair directory, split into tasks automatically")
      ->check(CLI::ExistingDirectory);
  meta->add_option("--K", meta_k, "adaptation steps per task");
  meta->add_option("--outer-iters", meta_outer, "outer iterations");
  meta->add_option("--first-order", meta_first_order, "true/false: drop curvature terms");
  meta->add_option("--out", meta_ckpt_out,
                   "a *.ckpt path copies the checkpoint there; anything else names the run "
                   "directory");

  // ---- train-joint ----
  auto* joint = app.add_subcommand("train-joint", "train fusion network and task head together");
  std::string joint_data;
  int joint_epochs = -1;
  double joint_eta = -1.0;
  bool joint_freeze = false;
  joint->add_option("--data", joint_data, "directory of image pairs")
      ->required()
      ->check(CLI::ExistingDirectory);
  joint->add_option("--epochs", joint_epochs, "joint epochs");
  joint->add_option("--eta", joint_eta, "fusion loss weight in the joint objective");
  joint->add_flag("--freeze-fusion", joint_freeze, "train only the task head");

  // ---- fuse ----
  auto* fuse = app.add_subcommand("fuse", "produce fused images from a checkpoint");
  std::string fuse_ckpt, fuse_data, fuse_out;
  bool fuse_allow_mismatch = false;
  fuse->add_option("--ckpt", fuse_ckpt, "checkpoint to fuse with (default: run checkpoints)");
  fuse->add_option("--data", fuse_data, "directory of image pairs")
      ->required()
      ->check(CLI::ExistingDirectory);
  fuse->add_option("--fused-out", fuse_out, "output directory (default: <run>/fused)");
  fuse->add_flag("--allow-config-mismatch", fuse_allow_mismatch,
                 "load checkpoints written under a different configuration");

  // ---- evaluate ----
  auto* evaluate = app.add_subcommand("evaluate", "score fused images against their sources");
  std::string eval_fused, eval_a, eval_b, eval_out;
  evaluate->add_option("--fused", eval_fused, "directory of fused images")
      ->required()
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("--src-a", eval_a, "directory of A sources")
      ->required()
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("--src-b", eval_b, "directory of B sources")
      ->required()
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("--out", eval_out,
                       "a *.csv path for the metrics table; anything else names the run "
                       "directory (table goes to <run>/metrics.csv)");

  // ---- report ----
  auto* report = app.add_subcommand("report", "aggregate metrics and draw charts for a run");

  // ---- synth-data ----
  auto* synth = app.add_subcommand("synth-data", "generate synthetic two-modality scenes");
  std::string synth_out;
  int synth_count = 8, synth_h = 96, synth_w = 96;
  bool synth_invert = false;
  synth->add_option("--count", synth_count, "number of scenes");
  synth->add_option("--height", synth_h, "scene height");
  synth->add_option("--width", synth_w, "scene width");
  synth->add_flag("--invert-b", synth_invert, "dark-field variant of the textured modality");
  synth->add_option("--data-out", synth_out, "output directory (default: <run>/data)");

  // global flags may appear before or after the subcommand name
  for (CLI::App* sub : {search, meta, joint, fuse, evaluate, report, synth}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  // the local --out of search/meta-init/evaluate doubles as a run-dir name
  // when it does not look like the artifact it would otherwise address
  auto claim_run_dir = [&g](std::string& out, const std::string& suffix) {
    if (out.empty() || (out.size() > suffix.size() &&
                        out.compare(out.size() - suffix.size(), suffix.size(), suffix) == 0))
      return;
    g.run_dir = out;
    out.clear();
  };
  claim_run_dir(search_ckpt_out, ".ckpt");
  claim_run_dir(meta_ckpt_out, ".ckpt");
  claim_run_dir(eval_out, ".csv");

  try {
    ExperimentConfig cfg = load_config(g);
    const std::string ckpt_dir = g.run_dir + "/checkpoints";

    if (*search) {
      if (!search_space.empty()) cfg.space = load_space_config(search_space);
      if (search_lambda >= 0.0) cfg.search.lambda = search_lambda;
      if (search_epochs >= 0) cfg.search.epochs = search_epochs;
      const auto patches = load_patches(cfg, search_data);
      run_phase_search(cfg, patches, g.run_dir, &std::cout);
      copy_artifact(ckpt_dir + "/search.ckpt", search_ckpt_out);
      finish_run(g.run_dir, cfg);
      std::cout << "search: wrote " << ckpt_dir << "/search.ckpt and " << g.run_dir
                << "/history/search.csv\n";
    } else if (*meta) {
      if (meta_k >= 0) cfg.meta.inner_steps = meta_k;
      if (meta_outer >= 0) cfg.meta.outer_iters = meta_outer;
      if (!meta_first_order.empty()) {
        if (meta_first_order != "true" && meta_first_order != "false")
          throw std::runtime_error("--first-order wants true or false");
        cfg.meta.first_order = meta_first_order == "true";
      }
      std::vector<MetaTask> tasks;
      if (!meta_tasks.empty())
        tasks = load_task_manifest(meta_tasks);
      else if (!meta_data.empty())
        tasks = build_meta_tasks(load_patches(cfg, meta_data));
      else
        throw std::runtime_error("meta-init wants --tasks <manifest> or --data <dir>");
      Checkpoint search_slot;
      PhaseInputs inputs;
      inputs.search = maybe_load(ckpt_dir + "/search.ckpt", search_slot);
      run_phase_meta(cfg, tasks, inputs, g.run_dir, &std::cout);
      copy_artifact(ckpt_dir + "/meta.ckpt", meta_ckpt_out);
      finish_run(g.run_dir, cfg);
      std::cout << "meta-init: wrote " << ckpt_dir << "/meta.ckpt and " << g.run_dir
                << "/history/meta.csv\n";
    } else if (*joint) {
      if (joint_epochs >= 0) cfg.joint.epochs = joint_epochs;
      if (joint_eta >= 0.0) cfg.joint.eta = joint_eta;
      if (joint_freeze) cfg.joint.freeze_fusion = true;
      Checkpoint search_slot, meta_slot;
      PhaseInputs inputs;
      inputs.search = maybe_load(ckpt_dir + "/search.ckpt", search_slot);
      inputs.meta = maybe_load(ckpt_dir + "/meta.ckpt", meta_slot);
      const auto patches = load_patches(cfg, joint_data);
      run_phase_joint(cfg, patches, inputs, g.run_dir, &std::cout);
      finish_run(g.run_dir, cfg);
      std::cout << "train-joint: wrote " << ckpt_dir << "/joint.ckpt and " << g.run_dir
                << "/history/joint.csv\n";
    } else if (*fuse) {
      std::string path = fuse_ckpt;
      if (path.empty()) {
        for (const char* name : {"/joint.ckpt", "/meta.ckpt", "/search.ckpt"})
          if (fs::exists(ckpt_dir + name)) {
            path = ckpt_dir + name;
            break;
          }
        if (path.empty())
          throw std::runtime_error("no checkpoint under " + ckpt_dir + "; pass --ckpt");
      }
      std::vector<std::string> warnings;
      const FusionModel model(cfg, load_checkpoint(path), fuse_allow_mismatch, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      const std::string out_dir = fuse_out.empty() ? g.run_dir + "/fused" : fuse_out;
      const auto written =
          fuse_to_directory(model.net, model.arch, load_pairs(fuse_data), out_dir);
      finish_run(g.run_dir, cfg);
      std::cout << "fuse: wrote " << written.size() << " images to " << out_dir << "\n";
    } else if (*evaluate) {
      const MetricReport metrics = evaluate_directories(eval_fused, eval_a, eval_b);
      const std::string out_path = eval_out.empty() ? g.run_dir + "/metrics.csv" : eval_out;
      if (const fs::path parent = fs::path(out_path).parent_path(); !parent.empty())
        fs::create_directories(parent);
      write_metrics_csv(out_path, metrics);
      std::cout << "evaluate: scored " << metrics.pairs.size() << " pairs into " << out_path
                << "\n";
    } else if (*report) {
      const ReportResult result = make_report(g.run_dir);
      for (const auto& path : result.written) std::cout << "report: wrote " << path << "\n";
    } else if (*synth) {
      SynthStyle style;
      style.height = synth_h;
      style.width = synth_w;
      style.invert_b = synth_invert;
      const std::string out_dir = synth_out.empty() ? g.run_dir + "/data" : synth_out;
      synth_to_directory(out_dir, synth_count, Rng(cfg.seed).derive("synth-data"), style);
      std::cout << "synth-data: wrote " << synth_count << " scenes to " << out_dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
