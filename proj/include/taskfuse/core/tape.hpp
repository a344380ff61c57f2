#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "taskfuse/core/tensor.hpp"

namespace taskfuse::ad {

using taskfuse::Tensor;
using taskfuse::check_same_shape;

// Reverse-mode tape. Nodes are appended in topological order; backward walks
// the list in reverse. All numeric work is double precision and sequential,
// so a fixed seed fixes every emitted value.
class Tape {
public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Tape&, const Tensor&)> back;
  };

  int add(Tensor value, bool requires_grad, std::function<void(Tape&, const Tensor&)> back = nullptr) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, false, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  // Gradient of the last backward() root w.r.t. node `id`; zeros if it never
  // received any contribution.
  Tensor grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad) return n.grad;
    return Tensor::zeros(n.value.shape);
  }

  void accumulate(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = Tensor::zeros(n.value.shape);
      n.has_grad = true;
    }
    for (std::size_t i = 0; i < g.v.size(); ++i) n.grad.v[i] += g.v[i];
  }

  void backward(int root) {
    Node& r = nodes_[static_cast<std::size_t>(root)];
    if (!r.value.is_scalar()) throw std::logic_error("backward: root must be scalar");
    r.grad = Tensor::scalar(1.0);
    r.has_grad = true;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.has_grad && n.back) n.back(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

private:
  std::vector<Node> nodes_;
};

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& val() const { return tape->value(id); }
};

inline Var leaf(Tape& t, Tensor value, bool requires_grad = false) {
  return Var{&t, t.add(std::move(value), requires_grad)};
}

// ---- elementwise ----

inline Var add(Var a, Var b) {
  check_same_shape(a.val(), b.val(), "add");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.val().v[i];
  int ia = a.id, ib = b.id;
  int id = a.tape->add(std::move(out), true, [ia, ib](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
  return Var{a.tape, id};
}

inline Var sub(Var a, Var b) {
  check_same_shape(a.val(), b.val(), "sub");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.val().v[i];
  int ia = a.id, ib = b.id;
  int id = a.tape->add(std::move(out), true, [ia, ib](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    Tensor ng = g;
    for (auto& x : ng.v) x = -x;
    t.accumulate(ib, ng);
  });
  return Var{a.tape, id};
}

inline Var mul(Var a, Var b) {
  check_same_shape(a.val(), b.val(), "mul");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.val().v[i];
  int ia = a.id, ib = b.id;
  int id = a.tape->add(std::move(out), true, [ia, ib](Tape& t, const Tensor& g) {
    Tensor ga = g, gb = g;
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      ga.v[i] = g.v[i] * bv.v[i];
      gb.v[i] = g.v[i] * av.v[i];
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
  return Var{a.tape, id};
}

inline Var div(Var a, Var b) {
  check_same_shape(a.val(), b.val(), "div");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] /= b.val().v[i];
  int ia = a.id, ib = b.id;
  int id = a.tape->add(std::move(out), true, [ia, ib](Tape& t, const Tensor& g) {
    Tensor ga = g, gb = g;
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      ga.v[i] = g.v[i] / bv.v[i];
      gb.v[i] = -g.v[i] * av.v[i] / (bv.v[i] * bv.v[i]);
    }
    t.accumulate(ia, ga);
    t.accumulate(ib, gb);
  });
  return Var{a.tape, id};
}

inline Var scale(Var a, double c) {
  Tensor out = a.val();
  for (auto& x : out.v) x *= c;
  int ia = a.id;
  int id = a.tape->add(std::move(out), true, [ia, c](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (auto& x : ga.v) x *= c;
    t.accumulate(ia, ga);
  });
  return Var{a.tape, id};
}

inline Var add_const(Var a, double c) {
  Tensor out = a.val();
  for (auto& x : out.v) x += c;
  int ia = a.id;
  int id = a.tape->add(std::move(out), true, [ia](Tape& t, const Tensor& g) { t.accumulate(ia, g); });
  return Var{a.tape, id};
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---- activations ----

inline Var leaky_relu(Var a, double slope = 0.2) {
  Tensor out = a.val();
  for (auto& x : out.v) x = x >= 0.0 ? x : slope * x;
  int ia = a.id;
  int id = a.tape->add(std::move(out), true, [ia, slope](Tape& t, const Tensor& g) {
    Tensor ga = g;
    const Tensor& av = t.value(ia);
    for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] = av.v[i] >= 0.0 ? g.v[i] : slope * g.v[i];
    t.accumulate(ia, ga);
  });
  return Var{a.tape, id};
}

inline Var sigmoid(Var a) {
  Tensor out = a.val();
  for (auto& x : out.v) {
    if (x >= 0.0) {
      x = 1.0 / (1.0 + std::exp(-x));
    } else {
      const double e = std::exp(x);
      x = e / (1.0 + e);
    }
  }
  int ia = a.id;
  int id = a.tape->add(out, true, [ia, out](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] = g.v[i] * out.v[i] * (1.0 - out.v[i]);
    t.accumulate(ia, ga);
  });
  return Var{a.tape, id};
}

inline Var tanh_act(Var a) {
  Tensor out = a.val();
  for (auto& x : out.v) x = std::tanh(x);
  int ia = a.id;
  int id = a.tape->add(out, true, [ia, out](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] = g.v[i] * (1.0 - out.v[i] * out.v[i]);
    t.accumulate(ia, ga);
  });
  return Var{a.tape, id};
}

// ---- reductions ----

inline Var sum_all(Var a) {
  double s = 0.0;
  for (double x : a.val().v) s += x;
  int ia = a.id;
  int id = a.tape->add(Tensor::scalar(s), true, [ia](Tape& t, const Tensor& g) {
    Tensor ga = Tensor::full(t.value(ia).shape, g.v[0]);
    t.accumulate(ia, ga);
  });
  return Var{a.tape, id};
}

inline Var mean_all(Var a) {
  const double n = static_cast<double>(a.val().numel());
  double s = 0.0;
  for (double x : a.val().v) s += x;
  int ia = a.id;
  int id = a.tape->add(Tensor::scalar(s / n), true, [ia, n](Tape& t, const Tensor& g) {
    Tensor ga = Tensor::full(t.value(ia).shape, g.v[0] / n);
    t.accumulate(ia, ga);
  });
  return Var{a.tape, id};
}

// ---- architecture relaxation ----

// Exponential normalization of a rank-1 logit vector.
inline Var softmax(Var logits) {
  const Tensor& l = logits.val();
  Tensor out = l;
  double mx = l.v[0];
  for (double x : l.v) mx = std::max(mx, x);
  double z = 0.0;
  for (std::size_t i = 0; i < l.v.size(); ++i) {
    out.v[i] = std::exp(l.v[i] - mx);
    z += out.v[i];
  }
  for (auto& x : out.v) x /= z;
  int ia = logits.id;
  int id = logits.tape->add(out, true, [ia, out](Tape& t, const Tensor& g) {
    double inner = 0.0;
    for (std::size_t i = 0; i < g.v.size(); ++i) inner += g.v[i] * out.v[i];
    Tensor ga = g;
    for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] = out.v[i] * (g.v[i] - inner);
    t.accumulate(ia, ga);
  });
  return Var{logits.tape, id};
}

// out = sum_k weights[k] * ys[k]; the relaxed-edge combination.
inline Var mix(Var weights, const std::vector<Var>& ys) {
  const Tensor& w = weights.val();
  if (w.rank() != 1 || static_cast<std::size_t>(w.dim(0)) != ys.size())
    throw std::invalid_argument("mix: weight length does not match candidate count");
  Tensor out = Tensor::zeros(ys[0].val().shape);
  for (std::size_t k = 0; k < ys.size(); ++k) {
    check_same_shape(out, ys[k].val(), "mix");
    const double wk = w.v[k];
    const Tensor& yv = ys[k].val();
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += wk * yv.v[i];
  }
  int iw = weights.id;
  std::vector<int> yids(ys.size());
  for (std::size_t k = 0; k < ys.size(); ++k) yids[k] = ys[k].id;
  int id = weights.tape->add(std::move(out), true, [iw, yids](Tape& t, const Tensor& g) {
    const Tensor& wv = t.value(iw);
    Tensor gw = Tensor::zeros(wv.shape);
    for (std::size_t k = 0; k < yids.size(); ++k) {
      const Tensor& yv = t.value(yids[k]);
      double d = 0.0;
      for (std::size_t i = 0; i < g.v.size(); ++i) d += g.v[i] * yv.v[i];
      gw.v[k] = d;
      Tensor gy = g;
      for (auto& x : gy.v) x *= wv.v[k];
      t.accumulate(yids[k], gy);
    }
    t.accumulate(iw, gw);
  });
  return Var{weights.tape, id};
}

// ---- convolution and spatial ops ----

enum class Pad { Same, Valid };

// x: (N, Ci, H, W), w: (Co, Ci/groups, kh, kw), b: (Co). Stride is always 1;
// Same padding keeps the spatial size, so dilation d with kernel k pads by
// d*(k-1)/2 on each side (k odd).
inline Var conv2d(Var x, Var w, Var b, Pad pad = Pad::Same, int dilation = 1, int groups = 1) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  if (xv.rank() != 4 || wv.rank() != 4) throw std::invalid_argument("conv2d: rank-4 tensors required");
  const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Co = wv.dim(0), Cig = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  if (Ci % groups != 0 || Co % groups != 0 || Cig != Ci / groups)
    throw std::invalid_argument("conv2d: channel/group mismatch");
  if (bv.numel() != Co) throw std::invalid_argument("conv2d: bias length mismatch");
  const int Cog = Co / groups;
  const int ph = pad == Pad::Same ? dilation * (kh - 1) / 2 : 0;
  const int pw = pad == Pad::Same ? dilation * (kw - 1) / 2 : 0;
  const int Ho = pad == Pad::Same ? H : H - dilation * (kh - 1);
  const int Wo = pad == Pad::Same ? W : W - dilation * (kw - 1);
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: input smaller than receptive field");

  Tensor out({N, Co, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co) {
      const int grp = co / Cog;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = bv.v[static_cast<std::size_t>(co)];
          for (int cl = 0; cl < Cig; ++cl) {
            const int ci = grp * Cig + cl;
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy - ph + ky * dilation;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox - pw + kx * dilation;
                if (ix < 0 || ix >= W) continue;
                acc += wv.at(co, cl, ky, kx) * xv.at(n, ci, iy, ix);
              }
            }
          }
          out.at(n, co, oy, ox) = acc;
        }
    }

  int ix_ = x.id, iw_ = w.id, ib_ = b.id;
  int id = x.tape->add(std::move(out), true,
                       [ix_, iw_, ib_, dilation, groups, ph, pw](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix_);
    const Tensor& wv = t.value(iw_);
    const int N = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Co = wv.dim(0), Cig = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
    const int Cog = Co / groups;
    const int Ho = g.dim(2), Wo = g.dim(3);
    Tensor gx = Tensor::zeros(xv.shape);
    Tensor gw = Tensor::zeros(wv.shape);
    Tensor gb = Tensor::zeros({Co});
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        const int grp = co / Cog;
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            const double go = g.at(n, co, oy, ox);
            if (go == 0.0) continue;
            gb.v[static_cast<std::size_t>(co)] += go;
            for (int cl = 0; cl < Cig; ++cl) {
              const int ci = grp * Cig + cl;
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy - ph + ky * dilation;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox - pw + kx * dilation;
                  if (ix < 0 || ix >= W) continue;
                  gw.at(co, cl, ky, kx) += go * xv.at(n, ci, iy, ix);
                  gx.at(n, ci, iy, ix) += go * wv.at(co, cl, ky, kx);
                }
              }
            }
          }
      }
    t.accumulate(ix_, gx);
    t.accumulate(iw_, gw);
    t.accumulate(ib_, gb);
  });
  return Var{x.tape, id};
}

// 2x average pooling; odd trailing rows/cols average over the partial window,
// so ceil(H/2) x ceil(W/2) out and upsample_to() restores the exact size.
inline Var downsample2(Var x) {
  const Tensor& xv = x.val();
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor out({N, C, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = 0.0;
          int cnt = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int iy = 2 * oy + dy, ix = 2 * ox + dx;
              if (iy < H && ix < W) {
                acc += xv.at(n, c, iy, ix);
                ++cnt;
              }
            }
          out.at(n, c, oy, ox) = acc / cnt;
        }
  int ix_ = x.id;
  int id = x.tape->add(std::move(out), true, [ix_](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix_);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Ho = g.dim(2), Wo = g.dim(3);
    Tensor gx = Tensor::zeros(xv.shape);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            int cnt = 0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                if (2 * oy + dy < H && 2 * ox + dx < W) ++cnt;
            const double go = g.at(n, c, oy, ox) / cnt;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int iy = 2 * oy + dy, ix = 2 * ox + dx;
                if (iy < H && ix < W) gx.at(n, c, iy, ix) += go;
              }
          }
    t.accumulate(ix_, gx);
  });
  return Var{x.tape, id};
}

// Nearest-neighbour resize to (Ho, Wo).
inline Var upsample_to(Var x, int Ho, int Wo) {
  const Tensor& xv = x.val();
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < Ho; ++oy) {
        const int iy = std::min(H - 1, oy * H / Ho);
        for (int ox = 0; ox < Wo; ++ox) {
          const int ix = std::min(W - 1, ox * W / Wo);
          out.at(n, c, oy, ox) = xv.at(n, c, iy, ix);
        }
      }
  int ix_ = x.id;
  int id = x.tape->add(std::move(out), true, [ix_, Ho, Wo](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix_);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor gx = Tensor::zeros(xv.shape);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = std::min(H - 1, oy * H / Ho);
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = std::min(W - 1, ox * W / Wo);
            gx.at(n, c, iy, ix) += g.at(n, c, oy, ox);
          }
        }
    t.accumulate(ix_, gx);
  });
  return Var{x.tape, id};
}

inline Var global_avg_pool(Var x) {
  const Tensor& xv = x.val();
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C, 1, 1});
  const double inv = 1.0 / (static_cast<double>(H) * W);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int y = 0; y < H; ++y)
        for (int xw = 0; xw < W; ++xw) acc += xv.at(n, c, y, xw);
      out.at(n, c, 0, 0) = acc * inv;
    }
  int ix_ = x.id;
  int id = x.tape->add(std::move(out), true, [ix_, inv](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix_);
    Tensor gx = Tensor::zeros(xv.shape);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double go = g.at(n, c, 0, 0) * inv;
        for (int y = 0; y < H; ++y)
          for (int xw = 0; xw < W; ++xw) gx.at(n, c, y, xw) += go;
      }
    t.accumulate(ix_, gx);
  });
  return Var{x.tape, id};
}

// Broadcast multiply: gate is (N,C,1,1) (channel gate) or (N,1,H,W) (spatial
// gate); x is (N,C,H,W).
inline Var mul_bcast(Var x, Var gate) {
  const Tensor& xv = x.val();
  const Tensor& gv = gate.val();
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const bool channel_gate = gv.dim(2) == 1 && gv.dim(3) == 1 && gv.dim(1) == C;
  const bool spatial_gate = gv.dim(1) == 1 && gv.dim(2) == H && gv.dim(3) == W;
  if (gv.dim(0) != N || (!channel_gate && !spatial_gate))
    throw std::invalid_argument("mul_bcast: unsupported gate shape " + gv.shape_str());
  Tensor out(xv.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xw = 0; xw < W; ++xw) {
          const double gk = channel_gate ? gv.at(n, c, 0, 0) : gv.at(n, 0, y, xw);
          out.at(n, c, y, xw) = xv.at(n, c, y, xw) * gk;
        }
  int ix_ = x.id, ig_ = gate.id;
  int id = x.tape->add(std::move(out), true, [ix_, ig_, channel_gate](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix_);
    const Tensor& gv = t.value(ig_);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor gx = Tensor::zeros(xv.shape);
    Tensor gg = Tensor::zeros(gv.shape);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int xw = 0; xw < W; ++xw) {
            const double go = g.at(n, c, y, xw);
            const double gk = channel_gate ? gv.at(n, c, 0, 0) : gv.at(n, 0, y, xw);
            gx.at(n, c, y, xw) += go * gk;
            if (channel_gate)
              gg.at(n, c, 0, 0) += go * xv.at(n, c, y, xw);
            else
              gg.at(n, 0, y, xw) += go * xv.at(n, c, y, xw);
          }
    t.accumulate(ix_, gx);
    t.accumulate(ig_, gg);
  });
  return Var{x.tape, id};
}

inline Var channel_mean(Var x) {
  const Tensor& xv = x.val();
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, 1, H, W});
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int xw = 0; xw < W; ++xw) {
        double acc = 0.0;
        for (int c = 0; c < C; ++c) acc += xv.at(n, c, y, xw);
        out.at(n, 0, y, xw) = acc / C;
      }
  int ix_ = x.id;
  int id = x.tape->add(std::move(out), true, [ix_](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix_);
    const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor gx = Tensor::zeros(xv.shape);
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int xw = 0; xw < W; ++xw) {
          const double go = g.at(n, 0, y, xw) / C;
          for (int c = 0; c < C; ++c) gx.at(n, c, y, xw) += go;
        }
    t.accumulate(ix_, gx);
  });
  return Var{x.tape, id};
}

// Max over channels; ties route the gradient to the lowest channel index.
inline Var channel_max(Var x) {
  const Tensor& xv = x.val();
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, 1, H, W});
  std::vector<int> arg(static_cast<std::size_t>(N) * H * W);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int xw = 0; xw < W; ++xw) {
        double best = xv.at(n, 0, y, xw);
        int bi = 0;
        for (int c = 1; c < C; ++c) {
          const double vc = xv.at(n, c, y, xw);
          if (vc > best) {
            best = vc;
            bi = c;
          }
        }
        out.at(n, 0, y, xw) = best;
        arg[(static_cast<std::size_t>(n) * H + y) * W + xw] = bi;
      }
  int ix_ = x.id;
  int id = x.tape->add(std::move(out), true, [ix_, arg](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix_);
    const int N = xv.dim(0), H = xv.dim(2), W = xv.dim(3);
    Tensor gx = Tensor::zeros(xv.shape);
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int xw = 0; xw < W; ++xw) {
          const int c = arg[(static_cast<std::size_t>(n) * H + y) * W + xw];
          gx.at(n, c, y, xw) += g.at(n, 0, y, xw);
        }
    t.accumulate(ix_, gx);
  });
  return Var{x.tape, id};
}

inline Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
  const Tensor& x0 = xs[0].val();
  const int N = x0.dim(0), H = x0.dim(2), W = x0.dim(3);
  int Ctot = 0;
  for (const Var& x : xs) {
    const Tensor& xv = x.val();
    if (xv.dim(0) != N || xv.dim(2) != H || xv.dim(3) != W)
      throw std::invalid_argument("concat_channels: spatial/batch mismatch");
    Ctot += xv.dim(1);
  }
  Tensor out({N, Ctot, H, W});
  int coff = 0;
  for (const Var& x : xs) {
    const Tensor& xv = x.val();
    const int C = xv.dim(1);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int xw = 0; xw < W; ++xw) out.at(n, coff + c, y, xw) = xv.at(n, c, y, xw);
    coff += C;
  }
  std::vector<int> ids(xs.size());
  std::vector<int> chans(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ids[i] = xs[i].id;
    chans[i] = xs[i].val().dim(1);
  }
  int id = xs[0].tape->add(std::move(out), true, [ids, chans](Tape& t, const Tensor& g) {
    const int N = g.dim(0), H = g.dim(2), W = g.dim(3);
    int coff = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Tensor gi({N, chans[i], H, W});
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < chans[i]; ++c)
          for (int y = 0; y < H; ++y)
            for (int xw = 0; xw < W; ++xw) gi.at(n, c, y, xw) = g.at(n, coff + c, y, xw);
      t.accumulate(ids[i], gi);
      coff += chans[i];
    }
  });
  return Var{xs[0].tape, id};
}

// Pixel-wise binary cross entropy on logits, mean reduction. `target` is a
// plain tensor of {0,1} (or soft) labels.
inline Var bce_with_logits(Var z, const Tensor& target) {
  const Tensor& zv = z.val();
  check_same_shape(zv, target, "bce_with_logits");
  const double n = static_cast<double>(zv.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < zv.v.size(); ++i) {
    const double x = zv.v[i], t = target.v[i];
    acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  int iz = z.id;
  int id = z.tape->add(Tensor::scalar(acc / n), true, [iz, target, n](Tape& t, const Tensor& g) {
    const Tensor& zv = t.value(iz);
    Tensor gz = Tensor::zeros(zv.shape);
    for (std::size_t i = 0; i < zv.v.size(); ++i) {
      const double x = zv.v[i];
      const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      gz.v[i] = g.v[0] * (s - target.v[i]) / n;
    }
    t.accumulate(iz, gz);
  });
  return Var{z.tape, id};
}

}  // namespace taskfuse::ad
