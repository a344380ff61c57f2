#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "taskfuse/core/rng.hpp"

namespace taskfuse {

// Dense row-major tensor of doubles. Rank-4 tensors follow the (N, C, H, W)
// convention; images travel as (1, C, H, W) or (C, H, W) reshaped on entry.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
    assert(static_cast<std::size_t>(count(shape)) == v.size());
  }

  static long count(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, double value) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  static Tensor scalar(double value) { return Tensor({}, {value}); }

  static Tensor uniform(std::vector<int> s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = rng.uniform(lo, hi);
    return t;
  }

  long numel() const { return static_cast<long>(v.size()); }
  bool is_scalar() const { return shape.empty() && v.size() == 1; }
  double item() const {
    assert(v.size() == 1);
    return v[0];
  }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  // NCHW accessors (rank-4 only)
  double& at(int n, int c, int y, int x) {
    return v[((static_cast<long>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  double at(int n, int c, int y, int x) const {
    return v[((static_cast<long>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

}  // namespace taskfuse
