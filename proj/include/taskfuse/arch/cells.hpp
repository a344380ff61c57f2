#pragma once

#include <optional>
#include <string>
#include <vector>

#include "taskfuse/arch/operators.hpp"

namespace taskfuse {

enum class CellKind { Successive, Decomposition, MultiScale, FeatureDistill };

inline CellKind parse_cell_kind(const std::string& token) {
  if (token == "SC") return CellKind::Successive;
  if (token == "DC") return CellKind::Decomposition;
  if (token == "MS") return CellKind::MultiScale;
  if (token == "FD") return CellKind::FeatureDistill;
  throw ConfigError("unknown cell kind '" + token + "'");
}

inline const char* cell_kind_id(CellKind k) {
  switch (k) {
    case CellKind::Successive: return "SC";
    case CellKind::Decomposition: return "DC";
    case CellKind::MultiScale: return "MS";
    case CellKind::FeatureDistill: return "FD";
  }
  return "?";
}

struct EdgeSpec {
  std::vector<OperatorSpec> candidates;
};

struct CellSpec {
  CellKind kind = CellKind::Successive;
  std::vector<EdgeSpec> edges;
};

// Per-forward view of one edge: either relaxed (softmax over `alpha` logits)
// or discrete (`choice` indexes the candidate list).
struct EdgeEval {
  const EdgeSpec* spec = nullptr;
  std::string prefix;
  std::optional<ad::Var> alpha;
  int choice = -1;
};

inline ad::Var eval_edge(const EdgeEval& e, const BoundParams& p, ad::Var x, const OpContext& ctx) {
  const auto& cands = e.spec->candidates;
  if (e.alpha) {
    ad::Var w = ad::softmax(*e.alpha);
    std::vector<ad::Var> ys;
    ys.reserve(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i)
      ys.push_back(apply_operator(cands[i], e.prefix + ".o" + std::to_string(i), p, x, ctx));
    return ad::mix(w, ys);
  }
  return apply_operator(cands[static_cast<std::size_t>(e.choice)],
                        e.prefix + ".o" + std::to_string(e.choice), p, x, ctx);
}

// Parameter declaration mirrors run_cell: edge candidates first, then any
// cell-owned projection. Construction order fixes the flat layout.
inline void declare_cell_params(ParamStore& s, const CellSpec& cell, const std::string& prefix,
                                const OpContext& ctx, Rng& rng) {
  for (std::size_t ei = 0; ei < cell.edges.size(); ++ei) {
    const std::string eprefix = prefix + ".e" + std::to_string(ei);
    const auto& cands = cell.edges[ei].candidates;
    for (std::size_t oi = 0; oi < cands.size(); ++oi)
      declare_operator_params(s, cands[oi], eprefix + ".o" + std::to_string(oi), ctx, rng);
  }
  const int w = ctx.width;
  if (cell.kind == CellKind::MultiScale)
    op_detail::add_conv(s, prefix + ".proj", w, 3 * w, 1, 1, rng);
  if (cell.kind == CellKind::FeatureDistill)
    op_detail::add_conv(s, prefix + ".proj", w, static_cast<int>(cell.edges.size()) * w, 1, 1, rng);
}

// Runs one cell over (N,w,H,W) features. `edges` must parallel cell.edges.
//
// Wiring by kind:
//   SC  edges applied in sequence.
//   DC  low-pass path (downsample/upsample blur, first half of the edges) plus
//       detail path (residual against the blur, second half), summed.
//   MS  the edge chain applied at full, half and quarter resolution with
//       shared parameters; levels upsampled, concatenated, 1x1-projected.
//   FD  sequential chain whose interior outputs are all concatenated and
//       1x1-projected at the end.
inline ad::Var run_cell(const CellSpec& cell, const std::string& prefix,
                        const std::vector<EdgeEval>& edges, const BoundParams& p, ad::Var x,
                        const OpContext& ctx) {
  using namespace ad;
  const int H = x.val().dim(2), W = x.val().dim(3);
  auto chain = [&](ad::Var h, std::size_t first, std::size_t last) {
    for (std::size_t i = first; i < last; ++i) h = eval_edge(edges[i], p, h, ctx);
    return h;
  };
  switch (cell.kind) {
    case CellKind::Successive:
      return chain(x, 0, edges.size());
    case CellKind::Decomposition: {
      if (edges.size() < 2 || edges.size() % 2 != 0)
        throw ConfigError("decomposition cell needs an even edge count >= 2");
      Var blur = upsample_to(downsample2(x), H, W);
      Var detail = sub(x, blur);
      Var low = chain(blur, 0, edges.size() / 2);
      Var high = chain(detail, edges.size() / 2, edges.size());
      return add(low, high);
    }
    case CellKind::MultiScale: {
      Var half = downsample2(x);
      Var quarter = downsample2(half);
      Var o0 = chain(x, 0, edges.size());
      Var o1 = upsample_to(chain(half, 0, edges.size()), H, W);
      Var o2 = upsample_to(chain(quarter, 0, edges.size()), H, W);
      return op_detail::conv(p, prefix + ".proj", concat_channels({o0, o1, o2}));
    }
    case CellKind::FeatureDistill: {
      std::vector<Var> interior;
      Var h = x;
      for (const EdgeEval& e : edges) {
        h = eval_edge(e, p, h, ctx);
        interior.push_back(h);
      }
      return op_detail::conv(p, prefix + ".proj", concat_channels(interior));
    }
  }
  throw std::logic_error("run_cell: unreachable");
}

}  // namespace taskfuse
