#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace scoreflow {

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow for large positive x.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

inline double log_sigmoid(double x) { return -softplus(-x); }

inline double logsumexp(std::span<const double> values) {
  if (values.empty()) {
    return -std::numeric_limits<double>::infinity();
  }
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) {
    return m;
  }
  double acc = 0.0;
  for (double v : values) {
    acc += std::exp(v - m);
  }
  return m + std::log(acc);
}

}  // namespace scoreflow
