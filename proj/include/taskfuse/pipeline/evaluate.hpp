#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/core/csv.hpp"
#include "taskfuse/core/svg.hpp"
#include "taskfuse/metrics/metrics.hpp"
#include "taskfuse/pipeline/image_io.hpp"
#include "taskfuse/pipeline/phases.hpp"

namespace taskfuse {

// Writes fused outputs for every pair: grayscale pairs become .pgm, pairs that
// arrived with chroma get it recombined into a .ppm.
inline std::vector<std::string> fuse_to_directory(const FusionNetwork& net,
                                                  const DiscreteArchitecture& arch,
                                                  const std::vector<ImagePair>& pairs,
                                                  const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  for (const ImagePair& pair : pairs) {
    const Tensor fused = fuse_pair(net, arch, pair);
    std::string path;
    if (pair.has_color) {
      path = out_dir + "/" + pair.id + ".ppm";
      write_ppm(path, fused, pair.cb, pair.cr);
    } else {
      path = out_dir + "/" + pair.id + ".pgm";
      write_pgm(path, fused);
    }
    written.push_back(path);
  }
  return written;
}

namespace eval_detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// id -> path for one directory. Source directories may use either plain
// <id>.* names or the ingest convention <id>_A.* / <id>_B.*; `role` is the
// suffix to strip ("" for fused outputs).
inline std::map<std::string, std::string> index_images(const std::string& dir,
                                                       const std::string& role) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string stem = entry.path().stem().string();
    if (ends_with(stem, "_mask")) continue;
    if (!role.empty() && ends_with(stem, "_" + role))
      stem = stem.substr(0, stem.size() - role.size() - 1);
    else if (ends_with(stem, "_A") || ends_with(stem, "_B"))
      continue;  // the other modality, or fused dirs never carry these
    out[stem] = entry.path().string();
  }
  return out;
}

}  // namespace eval_detail

// Scores every fused image against its two sources. Pair ids come from the
// fused directory; each one must have a counterpart in both source
// directories.
inline MetricReport evaluate_directories(const std::string& fused_dir, const std::string& a_dir,
                                         const std::string& b_dir,
                                         const MetricConfig& cfg = {}) {
  const auto fused = eval_detail::index_images(fused_dir, "");
  if (fused.empty()) throw std::runtime_error("no fused images in " + fused_dir);
  const auto as = eval_detail::index_images(a_dir, "A");
  const auto bs = eval_detail::index_images(b_dir, "B");
  MetricReport report;
  for (const auto& [id, fpath] : fused) {
    const auto ia = as.find(id), ib = bs.find(id);
    if (ia == as.end())
      throw std::runtime_error("no source A image for pair " + id + " in " + a_dir);
    if (ib == bs.end())
      throw std::runtime_error("no source B image for pair " + id + " in " + b_dir);
    const Tensor f = read_image(fpath).y;
    const Tensor a = read_image(ia->second).y;
    const Tensor b = read_image(ib->second).y;
    report.pairs.push_back(evaluate_pair(id, f, a, b, cfg));
  }
  return report;
}

inline void write_metrics_csv(const std::string& path, const MetricReport& report) {
  CsvWriter csv(path, {"pair_id", "MI", "FMI", "VIF", "Qabf", "EN", "SCD"});
  for (const PairMetrics& m : report.pairs)
    csv.row({m.pair_id, csv_num(m.mi), csv_num(m.fmi), csv_num(m.vif), csv_num(m.qabf),
             csv_num(m.en), csv_num(m.scd)});
}

inline MetricReport read_metrics_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows.empty() || rows[0] != std::vector<std::string>{"pair_id", "MI", "FMI", "VIF", "Qabf",
                                                          "EN", "SCD"})
    throw std::runtime_error("unexpected metrics header in " + path);
  MetricReport report;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 7) throw std::runtime_error("short metrics row in " + path);
    PairMetrics m;
    m.pair_id = rows[i][0];
    m.mi = std::stod(rows[i][1]);
    m.fmi = std::stod(rows[i][2]);
    m.vif = std::stod(rows[i][3]);
    m.qabf = std::stod(rows[i][4]);
    m.en = std::stod(rows[i][5]);
    m.scd = std::stod(rows[i][6]);
    report.pairs.push_back(std::move(m));
  }
  return report;
}

// Aggregates a finished run: per-metric mean/median table, a metric bar chart,
// and loss curves for whichever phase histories exist.
struct ReportResult {
  std::vector<std::string> written;
};

inline ReportResult make_report(const std::string& run_dir) {
  namespace fs = std::filesystem;
  const std::string metrics_path = run_dir + "/metrics.csv";
  if (!fs::exists(metrics_path))
    throw std::runtime_error("report: missing expected files: " + metrics_path +
                             " (run the evaluate step first)");
  const MetricReport report = read_metrics_csv(metrics_path);
  if (report.pairs.empty())
    throw std::runtime_error("report: " + metrics_path + " has no pairs to aggregate");

  fs::create_directories(run_dir + "/report");
  ReportResult out;

  const MetricField fields[] = {MetricField::MI,   MetricField::FMI, MetricField::VIF,
                                MetricField::Qabf, MetricField::EN,  MetricField::SCD};
  {
    const std::string path = run_dir + "/report/summary.csv";
    CsvWriter csv(path, {"metric", "mean", "median"});
    for (MetricField f : fields)
      csv.row({metric_name(f), csv_num(aggregate_mean(report, f)),
               csv_num(aggregate_median(report, f))});
    out.written.push_back(path);
  }
  {
    const std::string path = run_dir + "/report/metric_means.svg";
    std::vector<std::string> labels;
    std::vector<double> values;
    for (MetricField f : fields) {
      labels.push_back(metric_name(f));
      values.push_back(aggregate_mean(report, f));
    }
    save_bar_chart(path, "metric means over " + std::to_string(report.pairs.size()) + " pairs",
                   labels, values);
    out.written.push_back(path);
  }

  std::vector<SvgSeries> series;
  const std::string joint_path = run_dir + "/history/joint.csv";
  if (fs::exists(joint_path)) {
    const auto rows = read_csv(joint_path);
    SvgSeries st{"loss_T", {}, {}}, sf{"loss_F", {}, {}}, so{"objective", {}, {}};
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double e = std::stod(rows[i][0]);
      st.x.push_back(e);
      st.y.push_back(std::stod(rows[i][1]));
      sf.x.push_back(e);
      sf.y.push_back(std::stod(rows[i][2]));
      so.x.push_back(e);
      so.y.push_back(std::stod(rows[i][3]));
    }
    series = {so, st, sf};
  } else {
    const std::string search_path = run_dir + "/history/search.csv";
    if (fs::exists(search_path)) {
      const auto rows = read_csv(search_path);
      SvgSeries sf{"loss_F", {}, {}}, sa{"loss_alpha", {}, {}};
      for (std::size_t i = 1; i < rows.size(); ++i) {
        const double e = std::stod(rows[i][0]);
        sf.x.push_back(e);
        sf.y.push_back(std::stod(rows[i][1]));
        sa.x.push_back(e);
        sa.y.push_back(std::stod(rows[i][2]));
      }
      series = {sf, sa};
    }
  }
  if (!series.empty() && !series[0].x.empty()) {
    const std::string path = run_dir + "/report/loss_curves.svg";
    save_line_chart(path, "training losses", "epoch", "loss", series);
    out.written.push_back(path);
  }
  return out;
}

}  // namespace taskfuse
