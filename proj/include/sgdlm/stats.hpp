#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sgdlm {

// Welford accumulator.
struct RunningMoments {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double var() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double sd() const { return std::sqrt(std::max(var(), 0.0)); }
};

// Expanding z-score. Emits 0 (the running mean) until min_obs samples have
// accumulated; after that the statistics keep expanding forever.
class ExpandingStandardizer {
 public:
  explicit ExpandingStandardizer(int min_obs = 20) : min_obs_(min_obs) {}

  bool ready() const { return mom_.n >= min_obs_; }
  double mean() const { return mom_.mean; }
  double scale() const { return std::max(mom_.sd(), 1e-8); }

  double standardize(double x) const {
    return ready() ? (x - mean()) / scale() : 0.0;
  }
  double destandardize(double z) const {
    return ready() ? z * scale() + mean() : z;
  }
  void update(double x) { mom_.add(x); }

 private:
  RunningMoments mom_;
  int min_obs_;
};

// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: empty sample");
  q = std::clamp(q, 0.0, 1.0);
  std::sort(v.begin(), v.end());
  double pos = q * static_cast<double>(v.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

inline double interquartile_range(const std::vector<double>& v) {
  return quantile(v, 0.75) - quantile(v, 0.25);
}

struct OlsFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
  bool defined = false;
};

// Regression of y on x (one regressor plus intercept).
inline OlsFit ols(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("ols: mismatched or short inputs");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  OlsFit fit;
  if (sxx <= 0.0) return fit;  // zero-variance regressor
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    double e = y[i] - fit.intercept - fit.slope * x[i];
    ss_res += e * e;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  fit.defined = true;
  return fit;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean_of: empty");
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace sgdlm
