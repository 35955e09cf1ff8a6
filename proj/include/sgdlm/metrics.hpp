#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgdlm/data.hpp"
#include "sgdlm/stats.hpp"

namespace sgdlm {

struct PointMetrics {
  double mad = 0;   // median absolute deviation of pred vs obs
  double rmse = 0;
  double r2 = 0;
  double mz = 0;    // slope of observed-on-predicted
  bool mz_defined = false;
};

inline PointMetrics point_metrics(const std::vector<double>& pred,
                                  const std::vector<double>& obs) {
  if (pred.size() != obs.size())
    throw std::invalid_argument("point_metrics: length mismatch");
  if (pred.size() < 30)
    throw std::invalid_argument("point_metrics: need at least 30 points");
  PointMetrics pm;
  std::vector<double> adev(pred.size());
  double sse = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - obs[i];
    adev[i] = std::abs(e);
    sse += e * e;
  }
  pm.mad = median(adev);
  pm.rmse = std::sqrt(sse / static_cast<double>(pred.size()));
  const OlsFit fit = ols(pred, obs);
  pm.mz_defined = fit.defined;
  if (fit.defined) {
    pm.mz = fit.slope;
    pm.r2 = fit.r2;
  }
  return pm;
}

struct CiRow {
  double mean_move = 0;    // mean |move| (or mean move) of the selected days
  double mean_width = 0;   // mean scaled interval width
  double pct_in = 0;       // percentage of observations inside
  int n = 0;
  bool omitted = false;    // empty filtered set
};

enum class MoveFilter { Abs, Positive };

// Coverage table row: days whose move clears the threshold, intervals
// rescaled by one multiplier so the mean width hits `target_width`
// (callers pick a target under twice the mean move).
inline CiRow ci_coverage(const std::vector<double>& pred,
                         const std::vector<double>& base_width,
                         const std::vector<double>& obs,
                         const std::vector<double>& move, MoveFilter filter,
                         double threshold, double target_width) {
  const size_t n = pred.size();
  if (base_width.size() != n || obs.size() != n || move.size() != n)
    throw std::invalid_argument("ci_coverage: length mismatch");
  CiRow row;
  std::vector<size_t> sel;
  for (size_t i = 0; i < n; ++i) {
    const double mv = filter == MoveFilter::Abs ? std::abs(move[i]) : move[i];
    if (mv >= threshold) sel.push_back(i);
  }
  if (sel.empty()) {
    row.omitted = true;
    return row;
  }
  double mean_move = 0, mean_base = 0;
  for (size_t i : sel) {
    mean_move += filter == MoveFilter::Abs ? std::abs(move[i]) : move[i];
    mean_base += base_width[i];
  }
  mean_move /= static_cast<double>(sel.size());
  mean_base /= static_cast<double>(sel.size());
  const double mult = mean_base > 0 ? target_width / mean_base : 0.0;
  int inside = 0;
  for (size_t i : sel) {
    const double hw = 0.5 * mult * base_width[i];
    if (obs[i] >= pred[i] - hw && obs[i] <= pred[i] + hw) ++inside;
  }
  row.mean_move = mean_move;
  row.mean_width = mult * mean_base;
  row.pct_in = 100.0 * inside / static_cast<double>(sel.size());
  row.n = static_cast<int>(sel.size());
  return row;
}

// --- Comparator prediction streams ----------------------------------------

struct BaselineStream {
  // per day: prediction of that day's observation, made strictly before it
  std::vector<std::optional<double>> pred;
  // base interval width (model-specific scale); empty when undefined
  std::vector<std::optional<double>> width;
};

// pred_t = obs_{t-1}.
inline BaselineStream persistence_baseline(
    const std::vector<std::optional<double>>& obs) {
  BaselineStream b;
  const size_t T = obs.size();
  b.pred.assign(T, std::nullopt);
  b.width.assign(T, std::nullopt);
  for (size_t t = 1; t < T; ++t)
    if (obs[t - 1]) b.pred[t] = *obs[t - 1];
  return b;
}

// Expanding-window least squares on the supplied raw regressors, refit each
// day on data through t-1, from `min_fit` observations on. Near-singular
// normal equations fall back to a 1e-8 ridge. Interval width: rolling
// standard deviation of the last 30 prediction errors.
inline BaselineStream ls_baseline(
    const std::vector<std::optional<Eigen::VectorXd>>& features,
    const std::vector<std::optional<double>>& obs, int min_fit = 30) {
  const size_t T = obs.size();
  if (features.size() != T)
    throw std::invalid_argument("ls_baseline: length mismatch");
  BaselineStream b;
  b.pred.assign(T, std::nullopt);
  b.width.assign(T, std::nullopt);
  int p = 0;
  for (const auto& f : features)
    if (f) {
      p = static_cast<int>(f->size());
      break;
    }
  if (p == 0) return b;
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
  int n_fit = 0;
  std::vector<double> errors;
  for (size_t t = 0; t < T; ++t) {
    if (features[t] && n_fit >= std::max(min_fit, p + 2)) {
      Eigen::LDLT<Eigen::MatrixXd> solver(xtx);
      Eigen::VectorXd beta;
      if (solver.info() == Eigen::Success && solver.isPositive()) {
        beta = solver.solve(xty);
      } else {
        Eigen::MatrixXd ridered = xtx + 1e-8 * Eigen::MatrixXd::Identity(p, p);
        beta = Eigen::LDLT<Eigen::MatrixXd>(ridered).solve(xty);
      }
      b.pred[t] = features[t]->dot(beta);
      if (errors.size() >= 30) {
        RunningMoments rm;
        for (size_t k = errors.size() - 30; k < errors.size(); ++k)
          rm.add(errors[k]);
        b.width[t] = 2.0 * rm.sd();
      }
    }
    if (features[t] && obs[t]) {
      if (b.pred[t]) errors.push_back(*obs[t] - *b.pred[t]);
      xtx.noalias() += (*features[t]) * features[t]->transpose();
      xty.noalias() += (*features[t]) * (*obs[t]);
      ++n_fit;
    }
  }
  return b;
}

// Raw (unstandardized) HAR regressors for one series: offset, multi-scale
// log RVs and leverage terms from the previous day.
inline std::vector<std::optional<Eigen::VectorXd>> har_features(
    const PriceSeries& s, const RvConfig& rv, bool leverage = true) {
  const int T = static_cast<int>(s.close.size());
  std::vector<std::optional<Eigen::VectorXd>> out(T);
  const int n_scales = static_cast<int>(rv.scales.size());
  const int p = 1 + n_scales + (leverage ? 2 * n_scales : 0);
  for (int t = 1; t < T; ++t) {
    Eigen::VectorXd x(p);
    x[0] = 1.0;
    bool ok = true;
    for (int k = 0; k < n_scales && ok; ++k) {
      auto v = realized_variance(s, rv, rv.scales[k], t - 1);
      if (!v) {
        ok = false;
        break;
      }
      x[1 + k] = std::log(std::max(*v, rv.log_floor));
      if (leverage) {
        auto lev = leverage_terms(s, rv, rv.scales[k], t - 1);
        if (!lev) {
          ok = false;
          break;
        }
        x[1 + n_scales + 2 * k] = lev->first;
        x[1 + n_scales + 2 * k + 1] = lev->second;
      }
    }
    if (ok) out[t] = std::move(x);
  }
  return out;
}

}  // namespace sgdlm
