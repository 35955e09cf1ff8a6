#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "sgdlm/dlm.hpp"
#include "sgdlm/linalg.hpp"
#include "sgdlm/parallel.hpp"
#include "sgdlm/parents.hpp"
#include "sgdlm/rng.hpp"
#include "sgdlm/special.hpp"
#include "sgdlm/stats.hpp"

namespace sgdlm {

// --- Monte-Carlo posterior batch ------------------------------------------

struct SampleBatch {
  std::vector<Eigen::MatrixXd> thetas;  // per series: n_mc x p (empty if absent)
  Eigen::MatrixXd lambdas;              // n_mc x m (1.0 where absent)
  Eigen::VectorXd weights;              // simplex over draws
};

// Draws (theta, lambda) from each series' posterior Normal-Gamma.
// states[j] == nullptr marks a series outside the joint system.
inline SampleBatch sample_posteriors(const std::vector<const DlmState*>& states,
                                     int n_mc, const RngSplitter& rng,
                                     std::uint64_t day_key,
                                     const std::vector<std::string>& labels) {
  if (n_mc < 2) throw std::invalid_argument("sample_posteriors: n_mc < 2");
  const int m = static_cast<int>(states.size());
  SampleBatch batch;
  batch.thetas.resize(m);
  batch.lambdas = Eigen::MatrixXd::Ones(n_mc, m);
  batch.weights = Eigen::VectorXd::Constant(n_mc, 1.0 / n_mc);
  parallel_for(m, [&](int j) {
    if (!states[j]) return;
    const DlmState& st = *states[j];
    const int p = st.dim();
    if (!st.c.allFinite() || !st.m.allFinite() || !(st.n > 0) || !(st.s > 0))
      throw std::runtime_error("sample_posteriors: invalid state for series " +
                               labels[j]);
    Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(p, p);
    if (st.c.cwiseAbs().maxCoeff() > 0.0) {
      try {
        chol = safe_cholesky(shrink_to_pd(st.c), labels[j]);
      } catch (const std::exception&) {
        throw std::runtime_error(
            "sample_posteriors: covariance factorization failed for series " +
            labels[j]);
      }
    }
    auto gen = rng.stream(rng_tag::kPosteriorMc, static_cast<std::uint64_t>(j),
                          day_key);
    std::gamma_distribution<double> gamma(st.n / 2.0, 2.0 / (st.n * st.s));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd th(n_mc, p);
    for (int i = 0; i < n_mc; ++i) {
      double lam = gamma(gen);
      lam = std::max(lam, 1e-300);
      Eigen::VectorXd z(p);
      for (int d = 0; d < p; ++d) z[d] = normal(gen);
      th.row(i) = (st.m + chol * z / std::sqrt(st.s * lam)).transpose();
      batch.lambdas(i, j) = lam;
    }
    batch.thetas[j] = std::move(th);
  });
  return batch;
}

// --- Importance-sampling recoupling ---------------------------------------

struct RecoupleResult {
  Eigen::VectorXd weights;
  double entropy = 0.0;
  double ess = 0.0;
};

// Weights proportional to |det(I - Gamma)| per draw, computed by sparse LU
// with the symbolic pattern shared across draws. Entropy uses the
// 0 log 0 = 0 convention and is exactly zero for uniform weights.
inline RecoupleResult recouple_weights(
    const std::vector<Eigen::SparseMatrix<double>>& i_minus_gamma) {
  const int n = static_cast<int>(i_minus_gamma.size());
  if (n < 1) throw std::invalid_argument("recouple_weights: empty batch");
  Eigen::VectorXd logabs(n);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(i_minus_gamma[0]);
  for (int i = 0; i < n; ++i) {
    lu.factorize(i_minus_gamma[i]);
    if (lu.info() != Eigen::Success) {
      logabs[i] = -std::numeric_limits<double>::infinity();
      continue;
    }
    logabs[i] = lu.logAbsDeterminant();
    if (!std::isfinite(logabs[i]))
      logabs[i] = -std::numeric_limits<double>::infinity();
  }
  const double mx = logabs.maxCoeff();
  if (!std::isfinite(mx))
    throw std::runtime_error("recouple_weights: all determinants vanished");
  Eigen::VectorXd e(n);
  for (int i = 0; i < n; ++i) {
    const double d = logabs[i] - mx;
    e[i] = std::isfinite(d) ? std::exp(d) : 0.0;
  }
  const double s = e.sum();
  if (!(s > 0.0))
    throw std::runtime_error("recouple_weights: degenerate weights");
  RecoupleResult res;
  res.weights = e / s;
  const double factor = static_cast<double>(n) / s;
  double h = 0.0, w2 = 0.0;
  for (int i = 0; i < n; ++i) {
    if (e[i] <= 0.0) continue;
    const double w = res.weights[i];
    h += w * std::log(factor * e[i]);
    w2 += w * w;
  }
  res.entropy = std::max(h, 0.0);
  res.ess = 1.0 / w2;
  return res;
}

// Raises weights to a power tau in (0,1] chosen so the effective sample
// size reaches `target`; identity when already above it.
inline std::pair<Eigen::VectorXd, double> temper_weights(
    const Eigen::VectorXd& weights, double target) {
  const int n = static_cast<int>(weights.size());
  auto ess_of = [&](const Eigen::VectorXd& w) { return 1.0 / w.squaredNorm(); };
  if (ess_of(weights) >= target || target >= n)
    return {weights, 1.0};
  Eigen::VectorXd logw(n);
  for (int i = 0; i < n; ++i)
    logw[i] = weights[i] > 0.0 ? std::log(weights[i])
                               : -std::numeric_limits<double>::infinity();
  auto tempered = [&](double tau) {
    Eigen::VectorXd w(n);
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) mx = std::max(mx, tau * logw[i]);
    for (int i = 0; i < n; ++i) {
      const double d = tau * logw[i] - mx;
      w[i] = std::isfinite(d) ? std::exp(d) : 0.0;
    }
    w /= w.sum();
    return w;
  };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (ess_of(tempered(mid)) >= target)
      lo = mid;
    else
      hi = mid;
  }
  return {tempered(lo), lo};
}

// --- Variational-Bayes decoupling -----------------------------------------

struct VbResult {
  DlmState state;
  bool fallback = false;   // dof root not bracketed; previous n kept
  double residual = 0.0;   // |g(n)| at the returned dof
};

// Moment-matched Normal-Gamma from a weighted draw cloud. The degrees of
// freedom solve
//   log(n + p - d) - psi(n/2) - (p - d)/n - log(2 E[lam]) + E[log lam] = 0
// by bracketed bisection on a log grid over [1e-2, 1e6].
inline VbResult vb_decouple(const Eigen::MatrixXd& thetas,
                            const Eigen::VectorXd& lambdas,
                            const Eigen::VectorXd& weights, double prev_n) {
  const int n_mc = static_cast<int>(thetas.rows());
  const int p = static_cast<int>(thetas.cols());
  if (lambdas.size() != n_mc || weights.size() != n_mc)
    throw std::invalid_argument("vb_decouple: inconsistent batch");
  const double e_lam = weights.dot(lambdas);
  if (!(e_lam > 0.0)) throw std::runtime_error("vb_decouple: E[lambda] <= 0");
  double e_loglam = 0.0;
  for (int i = 0; i < n_mc; ++i)
    if (weights[i] > 0.0) e_loglam += weights[i] * std::log(lambdas[i]);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(p);
  for (int i = 0; i < n_mc; ++i)
    m += weights[i] * lambdas[i] * thetas.row(i).transpose();
  m /= e_lam;

  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < n_mc; ++i) {
    const Eigen::VectorXd d = thetas.row(i).transpose() - m;
    v.noalias() += (weights[i] * lambdas[i]) * d * d.transpose();
  }
  symmetrize(v);

  // fp-noise spreads around a point mass count as exactly degenerate (d -> 0)
  const double v_floor = 1e-24 * (1.0 + e_lam * m.squaredNorm());
  if (v.trace() <= v_floor) v.setZero();
  double d_stat = 0.0;
  if (v.cwiseAbs().maxCoeff() > 0.0) {
    const Eigen::MatrixXd vp = shrink_to_pd(v);
    Eigen::LLT<Eigen::MatrixXd> llt(vp);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("vb_decouple: spread matrix not invertible");
    for (int i = 0; i < n_mc; ++i) {
      const Eigen::VectorXd d = thetas.row(i).transpose() - m;
      d_stat += weights[i] * lambdas[i] * d.dot(llt.solve(d));
    }
  }

  const double pd = static_cast<double>(p) - d_stat;
  auto g = [&](double n) {
    const double arg = n + pd;
    if (!(arg > 0.0)) return -std::numeric_limits<double>::infinity();
    return std::log(arg) - digamma(n / 2.0) - pd / n - std::log(2.0 * e_lam) +
           e_loglam;
  };

  VbResult res;
  double root = prev_n;
  bool found = false;
  // Scan a log grid for a downward sign change, then bisect inside it.
  constexpr int kGrid = 96;
  const double lo_edge = std::max(1e-2, d_stat - static_cast<double>(p) + 1e-9);
  double prev_x = lo_edge, prev_g = g(lo_edge);
  for (int k = 1; k <= kGrid && !found; ++k) {
    const double x = lo_edge * std::pow(1e6 / lo_edge,
                                        static_cast<double>(k) / kGrid);
    const double gx = g(x);
    if (prev_g > 0.0 && gx <= 0.0) {
      double a = prev_x, b = x;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b);
        if (g(mid) > 0.0)
          a = mid;
        else
          b = mid;
        if (b - a < 1e-13 * std::max(1.0, b)) break;
      }
      root = 0.5 * (a + b);
      found = true;
    }
    prev_x = x;
    prev_g = gx;
  }
  if (!found) {
    res.fallback = true;
    root = prev_n;
  }
  res.residual = found ? std::abs(g(root)) : 0.0;
  res.state.m = std::move(m);
  res.state.n = root;
  res.state.s = (root + pd) / (root * e_lam);
  if (!(res.state.s > 0.0)) res.state.s = 1.0 / e_lam;
  res.state.c = res.state.s * v;
  symmetrize(res.state.c);
  return res;
}

// --- Joint forecasting -----------------------------------------------------

struct SeriesForecast {
  bool valid = false;
  double mean = 0, lo = 0, hi = 0;  // standardized observation space
};

struct JointForecastConfig {
  int n_mc = 500;
  double interval_prob = 0.90;
  double max_reject_frac = 0.10;
  int max_attempts_per_draw = 64;
};

struct JointForecastResult {
  std::vector<SeriesForecast> per_series;
  Eigen::MatrixXd draws;  // n_mc x m simulated observations
  int rejections = 0;
};

// Simulates y ~ N((I - Gamma)^-1 mu, ((I - Gamma)' Lambda (I - Gamma))^-1)
// from prior draws. parent_map[j] holds (coefficient index, parent series)
// pairs for series j; endo_features[j] is empty when j has no forecastable
// regressors (its mean contribution is then neutral).
inline JointForecastResult joint_forecast(
    const std::vector<const PriorState*>& priors,
    const std::vector<Eigen::VectorXd>& endo_features,
    const std::vector<std::vector<std::pair<int, int>>>& parent_map, int n_endo,
    const JointForecastConfig& cfg, const RngSplitter& rng,
    std::uint64_t day_key) {
  const int m = static_cast<int>(priors.size());
  std::vector<Eigen::MatrixXd> chol(m);
  for (int j = 0; j < m; ++j) {
    if (!priors[j]) continue;
    const int p = priors[j]->dim();
    if (priors[j]->r_mat.cwiseAbs().maxCoeff() > 0.0)
      chol[j] = safe_cholesky(shrink_to_pd(priors[j]->r_mat),
                              "prior " + std::to_string(j));
    else
      chol[j] = Eigen::MatrixXd::Zero(p, p);
  }
  // Fixed sparsity pattern for the day: unit diagonal plus parent slots.
  Eigen::SparseMatrix<double> pattern(m, m);
  {
    std::vector<Eigen::Triplet<double>> trips;
    for (int j = 0; j < m; ++j) trips.emplace_back(j, j, 1.0);
    for (int j = 0; j < m; ++j)
      for (const auto& [slot, parent] : parent_map[j])
        trips.emplace_back(j, parent, 0.5);  // placeholder value
    pattern.setFromTriplets(trips.begin(), trips.end());
    pattern.makeCompressed();
  }

  JointForecastResult out;
  out.per_series.assign(m, SeriesForecast{});
  out.draws = Eigen::MatrixXd::Zero(cfg.n_mc, m);
  std::vector<int> rejects(cfg.n_mc, 0);
  std::vector<char> failed(cfg.n_mc, 0);

  parallel_for(cfg.n_mc, [&](int i) {
    Eigen::SparseMatrix<double> img = pattern;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.analyzePattern(img);
    for (int attempt = 0; attempt < cfg.max_attempts_per_draw; ++attempt) {
      auto gen = rng.stream(rng_tag::kForecastMc, day_key,
                            static_cast<std::uint64_t>(i) * 1000 + attempt);
      std::normal_distribution<double> normal(0.0, 1.0);
      Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
      Eigen::VectorXd lam = Eigen::VectorXd::Ones(m);
      // rebuild values in-place; pattern order is stable
      for (int j = 0; j < m; ++j)
        img.coeffRef(j, j) = 1.0;
      bool ok = true;
      for (int j = 0; j < m && ok; ++j) {
        if (!priors[j]) continue;
        const PriorState& pr = *priors[j];
        std::gamma_distribution<double> gamma(pr.r_dof / 2.0,
                                              2.0 / (pr.r_dof * pr.s));
        double l = std::max(gamma(gen), 1e-300);
        lam[j] = l;
        Eigen::VectorXd z(pr.dim());
        for (int d = 0; d < pr.dim(); ++d) z[d] = normal(gen);
        Eigen::VectorXd theta = pr.a + chol[j] * z / std::sqrt(pr.s * l);
        if (endo_features[j].size() > 0)
          mu[j] = endo_features[j].dot(theta.head(n_endo));
        for (const auto& [slot, parent] : parent_map[j])
          img.coeffRef(j, parent) = -theta[slot];
      }
      lu.factorize(img);
      if (lu.info() != Eigen::Success ||
          !std::isfinite(lu.logAbsDeterminant()) ||
          lu.logAbsDeterminant() < -100.0) {
        ++rejects[i];
        continue;
      }
      Eigen::VectorXd noise(m);
      for (int j = 0; j < m; ++j)
        noise[j] = normal(gen) / std::sqrt(lam[j]);
      const Eigen::VectorXd mean_part = lu.solve(mu);
      const Eigen::VectorXd noise_part = lu.solve(noise);
      out.draws.row(i) = (mean_part + noise_part).transpose();
      return;
    }
    failed[i] = 1;
  });

  for (int i = 0; i < cfg.n_mc; ++i) {
    out.rejections += rejects[i];
    if (failed[i])
      throw std::runtime_error("joint_forecast: draw failed after retries");
  }
  if (out.rejections >
      static_cast<int>(cfg.max_reject_frac * cfg.n_mc))
    throw std::runtime_error("joint_forecast: rejection rate above 10%");

  const double lo_q = 0.5 * (1.0 - cfg.interval_prob);
  const double hi_q = 0.5 * (1.0 + cfg.interval_prob);
  for (int j = 0; j < m; ++j) {
    if (!priors[j] || endo_features[j].size() == 0) continue;
    std::vector<double> col(out.draws.col(j).data(),
                            out.draws.col(j).data() + cfg.n_mc);
    SeriesForecast fc;
    fc.valid = true;
    fc.mean = mean_of(col);
    fc.lo = quantile(col, lo_q);
    fc.hi = quantile(col, hi_q);
    out.per_series[j] = fc;
  }
  return out;
}

// --- Engine ----------------------------------------------------------------

struct EngineConfig {
  DiscountConfig discounts;
  ParentConfig parents;
  int n_mc = 500;
  double interval_prob = 0.90;
  double ess_floor = 10.0;
  double prior_var = 1.0;
  double prior_dof = 5.0;
  double prior_scale = 1.0;
  std::uint64_t seed = 42;

  void validate() const {
    discounts.validate();
    parents.validate();
    if (n_mc < 2) throw std::invalid_argument("engine.n_mc < 2");
    if (!(interval_prob > 0.0 && interval_prob < 1.0))
      throw std::invalid_argument("engine.interval_prob outside (0,1)");
  }
};

struct DayDiagnostics {
  double entropy = 0.0;
  double ess = 0.0;
  int rejections = 0;
  double min_eig = 0.0;
  bool coupled = false;
  bool tempered = false;
  double temper_tau = 1.0;
  int vb_fallbacks = 0;
};

// Sequential multivariate cycle over one universe of series: per-series
// conjugate updates, Monte-Carlo recoupling, variational decoupling, parent
// maintenance and discount evolution. With parents disabled the engine
// reduces exactly to independent conjugate DLMs.
class Engine {
 public:
  Engine(int n_series, std::vector<std::string> endo_names, EngineConfig cfg)
      : cfg_(cfg),
        endo_names_(std::move(endo_names)),
        rng_(cfg.seed),
        wishart_(n_series, cfg.parents.delta_w, cfg.parents.beta_w),
        series_(n_series) {
    cfg_.validate();
    for (auto& s : series_) s.started = false;
  }

  int n_series() const { return static_cast<int>(series_.size()); }
  int n_endo() const { return static_cast<int>(endo_names_.size()); }
  const std::vector<std::string>& endo_names() const { return endo_names_; }

  bool started(int j) const { return series_[j].started; }
  const DlmState& posterior(int j) const { return series_[j].post; }
  const PriorState& prior(int j) const { return series_[j].prior; }
  const ParentSets& parent_sets(int j) const { return series_[j].sets; }
  const std::vector<int>& parent_order(int j) const {
    return series_[j].parent_order;
  }
  const WishartState& wishart() const { return wishart_; }

  std::vector<std::string> coefficient_names(int j) const {
    std::vector<std::string> names = endo_names_;
    for (int p : series_[j].parent_order) names.push_back("pa:" + ids_hint(p));
    return names;
  }

  // Hook for human-readable parent labels in dumps.
  void set_series_ids(std::vector<std::string> ids) { ids_ = std::move(ids); }

  bool coupled_active() const {
    if (!cfg_.parents.enabled) return false;
    for (const auto& s : series_)
      if (!s.parent_order.empty()) return true;
    return false;
  }

  // Predictive for day `day` from the current priors; endo[j] empty when
  // series j has no usable regressors today.
  std::vector<SeriesForecast> forecast(
      const std::vector<std::optional<Eigen::VectorXd>>& endo,
      std::uint64_t day) const {
    const int m = n_series();
    std::vector<SeriesForecast> out(m);
    if (!coupled_active()) {
      for (int j = 0; j < m; ++j) {
        if (!series_[j].started || !endo[j]) continue;
        const Forecast fc = forecast_one(series_[j].prior, *endo[j]);
        const double hw = fc.half_width(cfg_.interval_prob);
        out[j].valid = true;
        out[j].mean = fc.mean;
        out[j].lo = fc.mean - hw;
        out[j].hi = fc.mean + hw;
      }
      return out;
    }
    auto res = joint_forecast(prior_ptrs(), endo_dense(endo), parent_maps(),
                              n_endo(), jf_config(), rng_, day);
    last_forecast_rejections_ = res.rejections;
    return res.per_series;
  }

  // Recursive k-step path from the current priors; regressors are rolled
  // forward with each horizon's median prediction. Only the plain
  // configuration (offset + previous observation) is closed under its own
  // predictions.
  std::vector<std::vector<SeriesForecast>> forecast_k_steps(
      const std::vector<std::optional<Eigen::VectorXd>>& endo,
      std::uint64_t day, int k) const {
    if (k < 1 || k > 20)
      throw std::invalid_argument("forecast_k_steps: k outside [1,20]");
    if (n_endo() != 2 || endo_names_[0] != "offset" ||
        endo_names_[1].rfind("rv_", 0) != 0)
      throw std::runtime_error(
          "forecast_k_steps: unsupported model (regressors are not closed "
          "under prediction)");
    std::vector<std::vector<SeriesForecast>> path;
    std::vector<std::optional<Eigen::VectorXd>> cur = endo;
    for (int h = 0; h < k; ++h) {
      std::vector<SeriesForecast> fc;
      if (!coupled_active()) {
        fc = forecast(cur, day);
      } else {
        auto res = joint_forecast(prior_ptrs(), endo_dense(cur), parent_maps(),
                                  n_endo(), jf_config(), rng_,
                                  mix64(rng_tag::kForecastKstep ^
                                        (day * 64 + static_cast<std::uint64_t>(h))));
        fc = res.per_series;
      }
      path.push_back(fc);
      for (int j = 0; j < n_series(); ++j) {
        if (!fc[j].valid) {
          cur[j] = std::nullopt;
          continue;
        }
        Eigen::VectorXd x(2);
        x << 1.0, fc[j].mean;
        cur[j] = x;
      }
    }
    return path;
  }

  // Assimilates day `day`: conjugate updates, recouple/decouple when the
  // joint system is active, parent maintenance every dt days, evolution.
  DayDiagnostics step(const std::vector<std::optional<double>>& obs,
                      const std::vector<std::optional<Eigen::VectorXd>>& endo,
                      std::uint64_t day) {
    const int m = n_series();
    if (static_cast<int>(obs.size()) != m ||
        static_cast<int>(endo.size()) != m)
      throw std::invalid_argument("engine.step: input size mismatch");
    DayDiagnostics diag;
    diag.rejections = last_forecast_rejections_;
    last_forecast_rejections_ = 0;

    for (int j = 0; j < m; ++j) {
      if (!series_[j].started && endo[j] && obs[j]) start_series(j);
    }

    if (cfg_.parents.enabled) {
      Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
      for (int j = 0; j < m; ++j)
        if (obs[j]) y[j] = *obs[j];
      wishart_.update(y);
    }

    parallel_for(m, [&](int j) {
      SeriesState& st = series_[j];
      if (!st.started) return;
      if (obs[j] && endo[j]) {
        st.post = kalman_update(st.prior, full_features(j, *endo[j], obs), *obs[j]);
      } else {
        st.post = DlmState{st.prior.a, st.prior.r_mat, st.prior.r_dof,
                           st.prior.s};
      }
    });

    int n_started = 0;
    for (const auto& s : series_) n_started += s.started ? 1 : 0;
    diag.coupled = coupled_active() && n_started >= 2;
    if (diag.coupled) {
      SampleBatch batch = sample_posteriors(post_ptrs(), cfg_.n_mc, rng_, day,
                                            labels());
      auto gammas = assemble_gammas(batch);
      RecoupleResult rec = recouple_weights(gammas);
      diag.entropy = rec.entropy;
      diag.ess = rec.ess;
      Eigen::VectorXd w = rec.weights;
      if (rec.ess < cfg_.ess_floor) {
        auto [tw, tau] = temper_weights(w, cfg_.ess_floor);
        w = tw;
        diag.tempered = true;
        diag.temper_tau = tau;
      }
      std::vector<int> fallbacks(m, 0);
      parallel_for(m, [&](int j) {
        if (!series_[j].started) return;
        VbResult vb = vb_decouple(batch.thetas[j], batch.lambdas.col(j), w,
                                  series_[j].post.n);
        if (vb.fallback) fallbacks[j] = 1;
        series_[j].post = std::move(vb.state);
      });
      for (int f : fallbacks) diag.vb_fallbacks += f;
    } else {
      diag.ess = cfg_.n_mc;
    }

    if (cfg_.parents.enabled && day > 0 && day % cfg_.parents.dt == 0)
      maintain_parents(obs);

    parallel_for(m, [&](int j) {
      SeriesState& st = series_[j];
      if (!st.started) return;
      Eigen::VectorXd g = Eigen::VectorXd::Ones(st.post.dim());
      for (const auto& mb : st.sets.down) {
        const int slot = slot_of(j, mb.series);
        g[n_endo() + slot] = downset_decay_entry(mb.age + 1, cfg_.parents.dt);
      }
      st.prior = evolve(st.post, g, cfg_.discounts, n_endo());
    });

    // advance down-set decay and prune completed members
    for (int j = 0; j < m; ++j) {
      SeriesState& st = series_[j];
      if (!st.started) continue;
      for (auto& mb : st.sets.down) ++mb.age;
      std::vector<int> done;
      for (const auto& mb : st.sets.down)
        if (mb.age >= cfg_.parents.dt) done.push_back(mb.series);
      for (int sid : done) remove_parent(j, sid);
      for (auto& mb : st.sets.up) ++mb.age;
    }

    double min_eig = std::numeric_limits<double>::infinity();
    for (const auto& s : series_) {
      if (!s.started || s.post.dim() == 0) continue;
      min_eig = std::min(min_eig, min_eigenvalue(s.post.c));
    }
    diag.min_eig = std::isfinite(min_eig) ? min_eig : 0.0;
    return diag;
  }

 private:
  struct SeriesState {
    bool started = false;
    DlmState post;
    PriorState prior;
    ParentSets sets;
    std::vector<int> parent_order;  // coefficient slot -> parent series
  };

  std::string ids_hint(int j) const {
    return j < static_cast<int>(ids_.size()) ? ids_[j] : std::to_string(j);
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out(n_series());
    for (int j = 0; j < n_series(); ++j) out[j] = ids_hint(j);
    return out;
  }

  void start_series(int j) {
    SeriesState& st = series_[j];
    const int p = n_endo();
    st.prior.a = Eigen::VectorXd::Zero(p);
    st.prior.r_mat = Eigen::MatrixXd::Identity(p, p) * cfg_.prior_var;
    st.prior.r_dof = cfg_.prior_dof;
    st.prior.s = cfg_.prior_scale;
    st.post = DlmState{st.prior.a, st.prior.r_mat, st.prior.r_dof, st.prior.s};
    st.started = true;
  }

  int slot_of(int j, int parent) const {
    const auto& order = series_[j].parent_order;
    for (int k = 0; k < static_cast<int>(order.size()); ++k)
      if (order[k] == parent) return k;
    throw std::logic_error("engine: parent has no coefficient slot");
  }

  Eigen::VectorXd full_features(
      int j, const Eigen::VectorXd& endo,
      const std::vector<std::optional<double>>& obs) const {
    const auto& order = series_[j].parent_order;
    Eigen::VectorXd f(n_endo() + static_cast<int>(order.size()));
    f.head(n_endo()) = endo;
    for (int k = 0; k < static_cast<int>(order.size()); ++k)
      f[n_endo() + k] = obs[order[k]] ? *obs[order[k]] : 0.0;
    return f;
  }

  std::vector<const DlmState*> post_ptrs() const {
    std::vector<const DlmState*> out(n_series(), nullptr);
    for (int j = 0; j < n_series(); ++j)
      if (series_[j].started) out[j] = &series_[j].post;
    return out;
  }

  std::vector<const PriorState*> prior_ptrs() const {
    std::vector<const PriorState*> out(n_series(), nullptr);
    for (int j = 0; j < n_series(); ++j)
      if (series_[j].started) out[j] = &series_[j].prior;
    return out;
  }

  std::vector<Eigen::VectorXd> endo_dense(
      const std::vector<std::optional<Eigen::VectorXd>>& endo) const {
    std::vector<Eigen::VectorXd> out(n_series());
    for (int j = 0; j < n_series(); ++j)
      if (endo[j] && series_[j].started) out[j] = *endo[j];
    return out;
  }

  std::vector<std::vector<std::pair<int, int>>> parent_maps() const {
    std::vector<std::vector<std::pair<int, int>>> maps(n_series());
    for (int j = 0; j < n_series(); ++j) {
      const auto& order = series_[j].parent_order;
      for (int k = 0; k < static_cast<int>(order.size()); ++k)
        maps[j].emplace_back(n_endo() + k, order[k]);
    }
    return maps;
  }

  JointForecastConfig jf_config() const {
    JointForecastConfig jf;
    jf.n_mc = cfg_.n_mc;
    jf.interval_prob = cfg_.interval_prob;
    return jf;
  }

  std::vector<Eigen::SparseMatrix<double>> assemble_gammas(
      const SampleBatch& batch) const {
    const int m = n_series();
    Eigen::SparseMatrix<double> pattern(m, m);
    std::vector<Eigen::Triplet<double>> trips;
    for (int j = 0; j < m; ++j) trips.emplace_back(j, j, 1.0);
    for (int j = 0; j < m; ++j) {
      const auto& order = series_[j].parent_order;
      for (int p : order) trips.emplace_back(j, p, 0.5);  // placeholder
    }
    pattern.setFromTriplets(trips.begin(), trips.end());
    pattern.makeCompressed();
    std::vector<Eigen::SparseMatrix<double>> out(cfg_.n_mc, pattern);
    for (int i = 0; i < cfg_.n_mc; ++i) {
      for (int j = 0; j < m; ++j) {
        if (!series_[j].started) continue;
        const auto& order = series_[j].parent_order;
        for (int k = 0; k < static_cast<int>(order.size()); ++k)
          out[i].coeffRef(j, order[k]) =
              -batch.thetas[j](i, n_endo() + k);
      }
    }
    return out;
  }

  void maintain_parents(const std::vector<std::optional<double>>& obs) {
    const Eigen::MatrixXd prec = wishart_.precision();
    std::vector<bool> eligible(n_series());
    for (int j = 0; j < n_series(); ++j)
      eligible[j] = series_[j].started && obs[j].has_value();
    for (int j = 0; j < n_series(); ++j) {
      SeriesState& st = series_[j];
      if (!st.started) continue;
      std::vector<std::pair<int, double>> scores;
      auto add_scores = [&](const std::vector<ParentMember>& members) {
        for (const auto& mb : members) {
          const int idx = n_endo() + slot_of(j, mb.series);
          const double sd = std::sqrt(std::max(st.post.c(idx, idx), 1e-300));
          scores.emplace_back(mb.series, std::abs(st.post.m[idx]) / sd);
        }
      };
      add_scores(st.sets.core);
      add_scores(st.sets.up);
      PromoteResult pr = promote_and_retire(st.sets, scores, cfg_.parents);
      st.sets = pr.sets;
      for (int sid : pr.dropped) remove_parent(j, sid);
      for (int cand : propose_candidates(prec, j, cfg_.parents, st.sets, eligible))
        add_parent(j, cand);
    }
  }

  void add_parent(int j, int parent) {
    SeriesState& st = series_[j];
    st.sets.up.push_back({parent, 0});
    st.parent_order.push_back(parent);
    const int p = st.post.dim();
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(p + 1);
    m2.head(p) = st.post.m;
    Eigen::MatrixXd c2 = Eigen::MatrixXd::Zero(p + 1, p + 1);
    c2.topLeftCorner(p, p) = st.post.c;
    c2(p, p) = cfg_.parents.new_coef_var;
    st.post.m = std::move(m2);
    st.post.c = std::move(c2);
  }

  void remove_parent(int j, int parent) {
    SeriesState& st = series_[j];
    const int slot = slot_of(j, parent);
    const int idx = n_endo() + slot;
    auto drop_vec = [idx](Eigen::VectorXd& v) {
      Eigen::VectorXd out(v.size() - 1);
      out << v.head(idx), v.tail(v.size() - idx - 1);
      v = std::move(out);
    };
    auto drop_mat = [idx](Eigen::MatrixXd& mat) {
      const int p = static_cast<int>(mat.rows());
      Eigen::MatrixXd out(p - 1, p - 1);
      int ro = 0;
      for (int r = 0; r < p; ++r) {
        if (r == idx) continue;
        int co = 0;
        for (int c = 0; c < p; ++c) {
          if (c == idx) continue;
          out(ro, co++) = mat(r, c);
        }
        ++ro;
      }
      mat = std::move(out);
    };
    drop_vec(st.post.m);
    drop_mat(st.post.c);
    if (st.prior.dim() == st.post.dim() + 1) {
      drop_vec(st.prior.a);
      drop_mat(st.prior.r_mat);
    }
    st.parent_order.erase(st.parent_order.begin() + slot);
    auto scrub = [parent](std::vector<ParentMember>& v) {
      v.erase(std::remove_if(v.begin(), v.end(),
                             [parent](const ParentMember& mb) {
                               return mb.series == parent;
                             }),
              v.end());
    };
    scrub(st.sets.core);
    scrub(st.sets.up);
    scrub(st.sets.down);
  }

  EngineConfig cfg_;
  std::vector<std::string> endo_names_;
  RngSplitter rng_;
  WishartState wishart_;
  std::vector<SeriesState> series_;
  std::vector<std::string> ids_;
  mutable int last_forecast_rejections_ = 0;
};

}  // namespace sgdlm
