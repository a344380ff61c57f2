#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace taskfuse {

using VecD = std::vector<double>;

inline double dot(const VecD& a, const VecD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double nrm2(const VecD& a) { return std::sqrt(dot(a, a)); }

// y += c * x
inline void axpy(double c, const VecD& x, VecD& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline void scal(double c, VecD& x) {
  for (auto& v : x) v *= c;
}

}  // namespace taskfuse
