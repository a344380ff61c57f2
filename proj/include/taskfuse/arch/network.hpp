#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "taskfuse/arch/cells.hpp"

namespace taskfuse {

// Everything needed to build the fusion network and the enhancement head:
// cell kinds in order, edge counts, candidate sets, widths, attention knobs,
// and the operator cost table.
struct SearchSpaceConfig {
  int width = 16;
  std::vector<std::string> fusion_cells = {"SC", "SC"};
  int edges_per_cell = 2;
  std::vector<std::string> candidates = {"CA", "SA", "3-DC", "3-RB", "3-DB", "3-SC"};

  int task_branch_cells = 2;
  int task_edges_per_cell = 2;
  std::vector<std::string> task_candidates = {"3-DC", "SA"};

  std::string activation = "leaky-relu";
  double leaky_slope = 0.2;
  int ca_reduction = 4;
  int sa_kernel = 7;
  LatencyTable latency = LatencyTable::defaults();

  OpContext op_context() const {
    OpContext ctx;
    ctx.width = width;
    ctx.act = parse_activation(activation);
    ctx.leaky_slope = leaky_slope;
    ctx.ca_reduction = ca_reduction;
    ctx.sa_kernel = sa_kernel;
    return ctx;
  }
};

// Relaxation variables: one logit vector per edge, flattened in edge order for
// gradient algebra. Fresh weights start at zero (uniform mixture).
struct ArchitectureWeights {
  std::vector<Tensor> logits;

  static ArchitectureWeights uniform_for(const std::vector<int>& edge_sizes) {
    ArchitectureWeights w;
    w.logits.reserve(edge_sizes.size());
    for (int n : edge_sizes) w.logits.push_back(Tensor::zeros({n}));
    return w;
  }

  int edge_count() const { return static_cast<int>(logits.size()); }

  long total() const {
    long n = 0;
    for (const Tensor& t : logits) n += t.numel();
    return n;
  }

  VecD flatten() const {
    VecD flat;
    flat.reserve(static_cast<std::size_t>(total()));
    for (const Tensor& t : logits) flat.insert(flat.end(), t.v.begin(), t.v.end());
    return flat;
  }

  void unflatten(const VecD& flat) {
    if (flat.size() != static_cast<std::size_t>(total()))
      throw std::invalid_argument("alpha unflatten: size mismatch");
    std::size_t off = 0;
    for (Tensor& t : logits)
      for (auto& x : t.v) x = flat[off++];
  }

  // Saturates the softmax at the chosen candidate; weight error vs a true
  // one-hot is below 1e-15 relative for any edge with <= 64 candidates.
  void set_one_hot(int edge, int choice, double scale = 40.0) {
    Tensor& l = logits[static_cast<std::size_t>(edge)];
    std::fill(l.v.begin(), l.v.end(), 0.0);
    l.v[static_cast<std::size_t>(choice)] = scale;
  }
};

struct BoundAlpha {
  std::vector<ad::Var> vars;
};

inline BoundAlpha bind_alpha(ad::Tape& tape, const ArchitectureWeights& w, bool requires_grad = true) {
  BoundAlpha b;
  b.vars.reserve(w.logits.size());
  for (const Tensor& t : w.logits) b.vars.push_back(ad::leaf(tape, t, requires_grad));
  return b;
}

inline VecD collect_alpha_grads(const ad::Tape& tape, const BoundAlpha& bound) {
  VecD flat;
  for (const ad::Var& v : bound.vars) {
    Tensor g = tape.grad(v.id);
    flat.insert(flat.end(), g.v.begin(), g.v.end());
  }
  return flat;
}

struct DiscreteArchitecture {
  std::vector<int> choice;  // candidate index per edge, global edge order
};

// Argmax per edge; ties go to the lowest candidate index, so the result only
// depends on logit differences within an edge.
inline DiscreteArchitecture derive_architecture(const ArchitectureWeights& w) {
  DiscreteArchitecture d;
  d.choice.reserve(w.logits.size());
  for (const Tensor& l : w.logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(l.v.size()); ++i)
      if (l.v[static_cast<std::size_t>(i)] > l.v[static_cast<std::size_t>(best)]) best = i;
    d.choice.push_back(best);
  }
  return d;
}

namespace net_detail {

inline std::vector<EdgeSpec> make_edges(int count, const std::vector<std::string>& candidate_ids) {
  if (count < 1) throw ConfigError("cell needs at least one edge");
  if (candidate_ids.empty()) throw ConfigError("edge needs at least one candidate operator");
  EdgeSpec edge;
  edge.candidates.reserve(candidate_ids.size());
  for (const std::string& id : candidate_ids) edge.candidates.push_back(parse_operator(id));
  return std::vector<EdgeSpec>(static_cast<std::size_t>(count), edge);
}

// Builds per-cell EdgeEval lists, consuming global edge indices in order.
inline std::vector<EdgeEval> evals_for_cell(const CellSpec& cell, const std::string& prefix,
                                            const BoundAlpha* alpha, const DiscreteArchitecture* disc,
                                            int& cursor) {
  std::vector<EdgeEval> evals;
  evals.reserve(cell.edges.size());
  for (std::size_t ei = 0; ei < cell.edges.size(); ++ei) {
    EdgeEval e;
    e.spec = &cell.edges[ei];
    e.prefix = prefix + ".e" + std::to_string(ei);
    if (alpha) {
      e.alpha = alpha->vars[static_cast<std::size_t>(cursor)];
    } else {
      e.choice = disc->choice[static_cast<std::size_t>(cursor)];
      if (e.choice < 0 || e.choice >= static_cast<int>(e.spec->candidates.size()))
        throw ConfigError("architecture choice out of range on edge " + std::to_string(cursor));
    }
    ++cursor;
    evals.push_back(std::move(e));
  }
  return evals;
}

}  // namespace net_detail

// The fusion body N_F: 3x3 stem over the stacked pair, the configured cells,
// and a linear 3x3 head back to one channel. Output is unbounded here; the
// fuse step clamps to [0,1] when an image is materialized.
class FusionNetwork {
public:
  ParamStore params;

  FusionNetwork(SearchSpaceConfig cfg, Rng& rng) : cfg_(std::move(cfg)), ctx_(cfg_.op_context()) {
    for (const std::string& kind : cfg_.fusion_cells) {
      CellSpec cell;
      cell.kind = parse_cell_kind(kind);
      cell.edges = net_detail::make_edges(cfg_.edges_per_cell, cfg_.candidates);
      cells_.push_back(std::move(cell));
    }
    op_detail::add_conv(params, "stem", ctx_.width, 2, 3, 3, rng);
    for (std::size_t ci = 0; ci < cells_.size(); ++ci) {
      prefixes_.push_back("c" + std::to_string(ci));
      declare_cell_params(params, cells_[ci], prefixes_.back(), ctx_, rng);
    }
    op_detail::add_conv(params, "head", 1, ctx_.width, 3, 3, rng);
    for (const CellSpec& c : cells_)
      for (const EdgeSpec& e : c.edges) {
        edge_ids_.emplace_back();
        for (const OperatorSpec& o : e.candidates) edge_ids_.back().push_back(o.id);
      }
  }

  const SearchSpaceConfig& config() const { return cfg_; }
  const OpContext& op_context() const { return ctx_; }
  const std::vector<CellSpec>& cells() const { return cells_; }
  const std::vector<std::string>& cell_prefixes() const { return prefixes_; }
  int edge_count() const { return static_cast<int>(edge_ids_.size()); }

  std::vector<int> edge_sizes() const {
    std::vector<int> s;
    for (const auto& ids : edge_ids_) s.push_back(static_cast<int>(ids.size()));
    return s;
  }

  // candidate ids per edge, global order; input to the latency regularizer
  const std::vector<std::vector<std::string>>& edge_candidate_ids() const { return edge_ids_; }

  ad::Var forward(ad::Tape& tape, const BoundParams& p, const BoundAlpha& alpha, ad::Var pair) const {
    return forward_impl(tape, p, &alpha, nullptr, pair);
  }
  ad::Var forward(ad::Tape& tape, const BoundParams& p, const DiscreteArchitecture& disc,
                  ad::Var pair) const {
    return forward_impl(tape, p, nullptr, &disc, pair);
  }

private:
  ad::Var forward_impl(ad::Tape& tape, const BoundParams& p, const BoundAlpha* alpha,
                       const DiscreteArchitecture* disc, ad::Var pair) const {
    (void)tape;
    if (pair.val().rank() != 4 || pair.val().dim(1) != 2)
      throw std::invalid_argument("fusion forward: expected (N,2,H,W), got " + pair.val().shape_str());
    ad::Var h = activate(op_detail::conv(p, "stem", pair), ctx_);
    int cursor = 0;
    for (std::size_t ci = 0; ci < cells_.size(); ++ci) {
      auto evals = net_detail::evals_for_cell(cells_[ci], prefixes_[ci], alpha, disc, cursor);
      h = run_cell(cells_[ci], prefixes_[ci], evals, p, h, ctx_);
    }
    return op_detail::conv(p, "head", h);
  }

  SearchSpaceConfig cfg_;
  OpContext ctx_;
  std::vector<CellSpec> cells_;
  std::vector<std::string> prefixes_;
  std::vector<std::vector<std::string>> edge_ids_;
};

// The enhancement head N_T: two parallel branches of successive cells over a
// shared stem (target extraction vs detail enhancement), merged by a spatial
// attention gate, then three 3x3 convolutions down to one channel.
class TaskHead {
public:
  ParamStore params;

  TaskHead(SearchSpaceConfig cfg, Rng& rng) : cfg_(std::move(cfg)), ctx_(cfg_.op_context()) {
    const int per_branch = cfg_.task_branch_cells;
    if (per_branch < 1) throw ConfigError("task head needs at least one cell per branch");
    op_detail::add_conv(params, "stem", ctx_.width, 1, 3, 3, rng);
    for (int b = 0; b < 2; ++b) {
      const std::string bname = b == 0 ? "bA" : "bB";
      for (int ci = 0; ci < per_branch; ++ci) {
        CellSpec cell;
        cell.kind = CellKind::Successive;
        cell.edges = net_detail::make_edges(cfg_.task_edges_per_cell, cfg_.task_candidates);
        prefixes_.push_back(bname + ".c" + std::to_string(ci));
        declare_cell_params(params, cell, prefixes_.back(), ctx_, rng);
        cells_.push_back(std::move(cell));
      }
    }
    op_detail::add_conv(params, "merge", 1, 2, ctx_.sa_kernel, ctx_.sa_kernel, rng);
    op_detail::add_conv(params, "t1", ctx_.width, ctx_.width, 3, 3, rng);
    op_detail::add_conv(params, "t2", ctx_.width, ctx_.width, 3, 3, rng);
    op_detail::add_conv(params, "t3", 1, ctx_.width, 3, 3, rng);
    for (const CellSpec& c : cells_)
      for (const EdgeSpec& e : c.edges) {
        edge_ids_.emplace_back();
        for (const OperatorSpec& o : e.candidates) edge_ids_.back().push_back(o.id);
      }
  }

  const SearchSpaceConfig& config() const { return cfg_; }
  const std::vector<CellSpec>& cells() const { return cells_; }
  const std::vector<std::string>& cell_prefixes() const { return prefixes_; }
  int edge_count() const { return static_cast<int>(edge_ids_.size()); }

  std::vector<int> edge_sizes() const {
    std::vector<int> s;
    for (const auto& ids : edge_ids_) s.push_back(static_cast<int>(ids.size()));
    return s;
  }

  const std::vector<std::vector<std::string>>& edge_candidate_ids() const { return edge_ids_; }

  ad::Var forward(ad::Tape& tape, const BoundParams& p, const BoundAlpha& alpha, ad::Var fused) const {
    return forward_impl(tape, p, &alpha, nullptr, fused);
  }
  ad::Var forward(ad::Tape& tape, const BoundParams& p, const DiscreteArchitecture& disc,
                  ad::Var fused) const {
    return forward_impl(tape, p, nullptr, &disc, fused);
  }

private:
  ad::Var forward_impl(ad::Tape& tape, const BoundParams& p, const BoundAlpha* alpha,
                       const DiscreteArchitecture* disc, ad::Var fused) const {
    (void)tape;
    if (fused.val().rank() != 4 || fused.val().dim(1) != 1)
      throw std::invalid_argument("task forward: expected (N,1,H,W), got " + fused.val().shape_str());
    using namespace ad;
    Var s = activate(op_detail::conv(p, "stem", fused), ctx_);
    const int per_branch = cfg_.task_branch_cells;
    int cursor = 0;
    Var a = s, b = s;
    for (int ci = 0; ci < per_branch; ++ci) {
      auto evals = net_detail::evals_for_cell(cells_[static_cast<std::size_t>(ci)],
                                              prefixes_[static_cast<std::size_t>(ci)], alpha, disc,
                                              cursor);
      a = run_cell(cells_[static_cast<std::size_t>(ci)], prefixes_[static_cast<std::size_t>(ci)],
                   evals, p, a, ctx_);
    }
    for (int ci = 0; ci < per_branch; ++ci) {
      const std::size_t idx = static_cast<std::size_t>(per_branch + ci);
      auto evals = net_detail::evals_for_cell(cells_[idx], prefixes_[idx], alpha, disc, cursor);
      b = run_cell(cells_[idx], prefixes_[idx], evals, p, b, ctx_);
    }
    Var both = concat_channels({a, b});
    Var stat = concat_channels({channel_mean(both), channel_max(both)});
    Var gate = sigmoid(op_detail::conv(p, "merge", stat));
    Var merged = add(b, mul_bcast(sub(a, b), gate));
    Var h = activate(op_detail::conv(p, "t1", merged), ctx_);
    h = activate(op_detail::conv(p, "t2", h), ctx_);
    return op_detail::conv(p, "t3", h);
  }

  SearchSpaceConfig cfg_;
  OpContext ctx_;
  std::vector<CellSpec> cells_;
  std::vector<std::string> prefixes_;
  std::vector<std::vector<std::string>> edge_ids_;
};

// Reg(alpha) = sum over edges of the softmax-weighted candidate cost.
inline ad::Var latency_regularizer(ad::Tape& tape, const BoundAlpha& alpha,
                                   const std::vector<std::vector<std::string>>& edge_ids,
                                   const LatencyTable& table) {
  ad::Var total = ad::leaf(tape, Tensor::scalar(0.0));
  for (std::size_t ei = 0; ei < edge_ids.size(); ++ei) {
    Tensor costs({static_cast<int>(edge_ids[ei].size())});
    for (std::size_t oi = 0; oi < edge_ids[ei].size(); ++oi)
      costs.v[oi] = table.at(edge_ids[ei][oi]);
    ad::Var w = ad::softmax(alpha.vars[ei]);
    total = ad::add(total, ad::sum_all(ad::mul(w, ad::leaf(tape, costs))));
  }
  return total;
}

inline double latency_regularizer_value(const ArchitectureWeights& w,
                                        const std::vector<std::vector<std::string>>& edge_ids,
                                        const LatencyTable& table) {
  ad::Tape tape;
  BoundAlpha bound = bind_alpha(tape, w, false);
  return latency_regularizer(tape, bound, edge_ids, table).val().item();
}

inline double discrete_latency(const DiscreteArchitecture& d,
                               const std::vector<std::vector<std::string>>& edge_ids,
                               const LatencyTable& table) {
  double total = 0.0;
  for (std::size_t ei = 0; ei < edge_ids.size(); ++ei)
    total += table.at(edge_ids[ei][static_cast<std::size_t>(d.choice[ei])]);
  return total;
}

// Text manifest of a discretized model: one line per cell, listing the cell
// kind and the chosen operator id for each edge in order.
inline void write_architecture_manifest(std::ostream& out, const std::string& section,
                                        const std::vector<CellSpec>& cells,
                                        const std::vector<std::string>& prefixes,
                                        const DiscreteArchitecture& d, int& cursor) {
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    out << section << "." << prefixes[ci] << " " << cell_kind_id(cells[ci].kind);
    for (std::size_t ei = 0; ei < cells[ci].edges.size(); ++ei) {
      const int pick = d.choice[static_cast<std::size_t>(cursor++)];
      out << " " << cells[ci].edges[ei].candidates[static_cast<std::size_t>(pick)].id;
    }
    out << "\n";
  }
}

inline void save_architecture_manifest(const std::string& path, const FusionNetwork& net,
                                       const DiscreteArchitecture& fusion_arch,
                                       const TaskHead* head = nullptr,
                                       const DiscreteArchitecture* task_arch = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path);
  int cursor = 0;
  write_architecture_manifest(out, "fusion", net.cells(), net.cell_prefixes(), fusion_arch, cursor);
  if (head && task_arch) {
    cursor = 0;
    write_architecture_manifest(out, "task", head->cells(), head->cell_prefixes(), *task_arch, cursor);
  }
}

}  // namespace taskfuse
