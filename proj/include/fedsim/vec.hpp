#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace fedsim::vec {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline void scale(std::vector<double>& a, double c) {
  for (double& v : a) v *= c;
}

// y += c * x
inline void axpy(std::vector<double>& y, double c, std::span<const double> x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * x[i];
}

inline void add(std::vector<double>& y, std::span<const double> x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
}

inline std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace fedsim::vec
