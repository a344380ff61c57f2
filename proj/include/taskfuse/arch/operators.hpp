#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "taskfuse/arch/params.hpp"
#include "taskfuse/core/rng.hpp"
#include "taskfuse/core/tape.hpp"

namespace taskfuse {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class OpKind {
  ChannelAttention,
  SpatialAttention,
  DilatedConv,
  ResidualBlock,
  DenseBlock,
  SeparableConv,
  SkipConnect,
};

// Candidate operator. `id` is the config-facing token: attention ops and skip
// are bare ("CA", "SA", "skip"); convolutional ops carry their kernel as a
// prefix ("3-RB", "5-DC"). A bare convolutional token defaults to kernel 3.
struct OperatorSpec {
  std::string id;
  OpKind kind = OpKind::SkipConnect;
  int kernel = 0;
};

inline OperatorSpec parse_operator(const std::string& token) {
  OperatorSpec spec;
  spec.id = token;
  std::string body = token;
  const bool has_prefix = token.size() > 2 && token[1] == '-';
  int kernel = 3;
  if (has_prefix) {
    if (token[0] != '3' && token[0] != '5')
      throw ConfigError("operator '" + token + "': kernel must be 3 or 5");
    kernel = token[0] - '0';
    body = token.substr(2);
  }
  if (body == "CA") {
    spec.kind = OpKind::ChannelAttention;
  } else if (body == "SA") {
    spec.kind = OpKind::SpatialAttention;
  } else if (body == "skip") {
    spec.kind = OpKind::SkipConnect;
  } else if (body == "DC") {
    spec.kind = OpKind::DilatedConv;
    spec.kernel = kernel;
  } else if (body == "RB") {
    spec.kind = OpKind::ResidualBlock;
    spec.kernel = kernel;
  } else if (body == "DB") {
    spec.kind = OpKind::DenseBlock;
    spec.kernel = kernel;
  } else if (body == "SC") {
    spec.kind = OpKind::SeparableConv;
    spec.kernel = kernel;
  } else {
    throw ConfigError("unknown operator '" + token + "'");
  }
  if (has_prefix && spec.kernel == 0)
    throw ConfigError("operator '" + token + "' does not take a kernel size");
  return spec;
}

enum class Activation { LeakyRelu, Relu, Tanh, None };

inline Activation parse_activation(const std::string& name) {
  if (name == "leaky-relu") return Activation::LeakyRelu;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "none") return Activation::None;
  throw ConfigError("unknown activation '" + name + "'");
}

// Shared knobs every operator instance sees.
struct OpContext {
  int width = 16;
  Activation act = Activation::LeakyRelu;
  double leaky_slope = 0.2;
  int ca_reduction = 4;
  int sa_kernel = 7;
};

inline ad::Var activate(ad::Var x, const OpContext& ctx) {
  switch (ctx.act) {
    case Activation::LeakyRelu: return ad::leaky_relu(x, ctx.leaky_slope);
    case Activation::Relu: return ad::leaky_relu(x, 0.0);
    case Activation::Tanh: return ad::tanh_act(x);
    case Activation::None: return x;
  }
  return x;
}

// Operator latencies in abstract cost units, keyed by operator id. The table
// is configuration data; nothing here measures hardware.
struct LatencyTable {
  std::unordered_map<std::string, double> cost;

  double at(const std::string& id) const {
    auto it = cost.find(id);
    if (it == cost.end()) throw ConfigError("latency table has no entry for operator '" + id + "'");
    if (it->second < 0.0) throw ConfigError("negative latency for operator '" + id + "'");
    return it->second;
  }

  // Synthetic relative costs, roughly ordered by arithmetic volume.
  static LatencyTable defaults() {
    LatencyTable t;
    t.cost = {{"skip", 0.0},  {"CA", 0.3},   {"SA", 0.4},   {"3-SC", 0.6}, {"5-SC", 0.9},
              {"3-DC", 1.0},  {"5-DC", 1.8}, {"3-RB", 2.0}, {"5-RB", 3.4}, {"3-DB", 2.6},
              {"5-DB", 4.2}};
    return t;
  }
};

namespace op_detail {

inline Tensor kaiming_conv(int co, int ci, int kh, int kw, Rng& rng) {
  const double bound = std::sqrt(6.0 / (static_cast<double>(ci) * kh * kw));
  return Tensor::uniform({co, ci, kh, kw}, rng, -bound, bound);
}

inline void add_conv(ParamStore& s, const std::string& base, int co, int ci, int kh, int kw,
                     Rng& rng) {
  s.add(base, kaiming_conv(co, ci, kh, kw, rng));
  s.add(base + ".b", Tensor::zeros({co}));
}

inline ad::Var conv(const BoundParams& p, const std::string& base, ad::Var x,
                    ad::Pad pad = ad::Pad::Same, int dilation = 1, int groups = 1) {
  return ad::conv2d(x, p.var(base), p.var(base + ".b"), pad, dilation, groups);
}

}  // namespace op_detail

// Declares the parameters one operator instance owns under `prefix`. Must stay
// in lockstep with apply_operator below; both switch on the same kinds.
inline void declare_operator_params(ParamStore& s, const OperatorSpec& op, const std::string& prefix,
                                    const OpContext& ctx, Rng& rng) {
  const int w = ctx.width;
  const int k = op.kernel;
  switch (op.kind) {
    case OpKind::SkipConnect:
      break;
    case OpKind::SeparableConv:
      s.add(prefix + ".dw", op_detail::kaiming_conv(w, 1, k, k, rng));
      s.add(prefix + ".dw.b", Tensor::zeros({w}));
      op_detail::add_conv(s, prefix + ".pw", w, w, 1, 1, rng);
      break;
    case OpKind::DilatedConv:
      op_detail::add_conv(s, prefix + ".conv", w, w, k, k, rng);
      break;
    case OpKind::ResidualBlock:
      op_detail::add_conv(s, prefix + ".c1", w, w, k, k, rng);
      op_detail::add_conv(s, prefix + ".c2", w, w, k, k, rng);
      break;
    case OpKind::DenseBlock:
      op_detail::add_conv(s, prefix + ".c1", w, w, k, k, rng);
      op_detail::add_conv(s, prefix + ".c2", w, 2 * w, k, k, rng);
      op_detail::add_conv(s, prefix + ".proj", w, 3 * w, 1, 1, rng);
      break;
    case OpKind::ChannelAttention: {
      const int wr = std::max(1, w / ctx.ca_reduction);
      op_detail::add_conv(s, prefix + ".fc1", wr, w, 1, 1, rng);
      op_detail::add_conv(s, prefix + ".fc2", w, wr, 1, 1, rng);
      break;
    }
    case OpKind::SpatialAttention:
      op_detail::add_conv(s, prefix + ".conv", 1, 2, ctx.sa_kernel, ctx.sa_kernel, rng);
      break;
  }
}

// Runs one operator instance. Every kind maps (N,w,H,W) -> (N,w,H,W).
inline ad::Var apply_operator(const OperatorSpec& op, const std::string& prefix,
                              const BoundParams& p, ad::Var x, const OpContext& ctx) {
  using namespace ad;
  switch (op.kind) {
    case OpKind::SkipConnect:
      return x;
    case OpKind::SeparableConv: {
      Var dw = conv2d(x, p.var(prefix + ".dw"), p.var(prefix + ".dw.b"), Pad::Same, 1,
                      ctx.width);
      return activate(op_detail::conv(p, prefix + ".pw", dw), ctx);
    }
    case OpKind::DilatedConv:
      return activate(op_detail::conv(p, prefix + ".conv", x, Pad::Same, 2), ctx);
    case OpKind::ResidualBlock: {
      Var h = activate(op_detail::conv(p, prefix + ".c1", x), ctx);
      Var r = op_detail::conv(p, prefix + ".c2", h);
      return activate(add(x, r), ctx);
    }
    case OpKind::DenseBlock: {
      Var y1 = activate(op_detail::conv(p, prefix + ".c1", x), ctx);
      Var y2 = activate(op_detail::conv(p, prefix + ".c2", concat_channels({x, y1})), ctx);
      return op_detail::conv(p, prefix + ".proj", concat_channels({x, y1, y2}));
    }
    case OpKind::ChannelAttention: {
      Var g = global_avg_pool(x);
      g = activate(op_detail::conv(p, prefix + ".fc1", g), ctx);
      g = sigmoid(op_detail::conv(p, prefix + ".fc2", g));
      return mul_bcast(x, g);
    }
    case OpKind::SpatialAttention: {
      Var stat = concat_channels({channel_mean(x), channel_max(x)});
      Var g = sigmoid(op_detail::conv(p, prefix + ".conv", stat));
      return mul_bcast(x, g);
    }
  }
  throw std::logic_error("apply_operator: unreachable");
}

}  // namespace taskfuse
