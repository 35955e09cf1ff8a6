#pragma once

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgdlm/data.hpp"
#include "sgdlm/rng.hpp"

namespace sgdlm {

enum class Generator { NullRandomWalk, HarKnown, FactorDriven };

inline Generator generator_from_string(const std::string& s) {
  if (s == "null") return Generator::NullRandomWalk;
  if (s == "har") return Generator::HarKnown;
  if (s == "factor") return Generator::FactorDriven;
  throw std::invalid_argument("sim.generator: unknown value '" + s + "'");
}

inline std::string to_string(Generator g) {
  switch (g) {
    case Generator::NullRandomWalk: return "null";
    case Generator::HarKnown: return "har";
    case Generator::FactorDriven: return "factor";
  }
  return "null";
}

struct SimSpec {
  Generator generator = Generator::NullRandomWalk;
  int n_series = 30;
  int n_days = 1500;
  std::uint64_t seed = 42;
  bool with_ohlc = false;

  // null world: constant per-series drift/vol drawn once
  double drift_min = -3e-4, drift_max = 3e-4;
  double vol_min = 0.005, vol_max = 0.03;

  // cascade world: recursion realized on the model's own multi-frequency
  // weighted RVs via implied squared returns. The weighted daily RV cannot
  // drop faster than its decay floor (~ -log rho per day), so innovations
  // are truncated there; the faster default decay keeps truncation rare.
  std::array<double, 3> har_beta{0.4, 0.3, 0.2};
  double har_sigma_eps = 0.02;
  double har_level = -9.2;  // stationary log daily variance target
  RvConfig har_rv = {0.9, 40, {1, 5, 20}, 1e-12};

  // factor world: series 0 carries its own latent AR(1) log-variance; every
  // follower's variance loads on the driver's *measured* weighted RV with a
  // one-day lag, so followers are functions of the driver's past returns
  // plus idiosyncratic noise and the influence is one-way by construction.
  double factor_ar = 0.98;
  double factor_shock = 0.12;
  double factor_load = 1.0;
  double idio_ar = 0.9;
  double idio_shock = 0.15;
  double base_vol = 0.012;
  // kernel assumed for the measured RVs; follower variances are chosen so
  // their measured RV under this kernel tracks a scaled copy of the
  // driver's measured RV (one-day lag), keeping the influence one-way and
  // contemporaneous in measurement space
  RvConfig factor_rv;

  void validate() const {
    if (n_series < 1) throw std::invalid_argument("sim.n_series < 1");
    if (n_days < 100) throw std::invalid_argument("sim.n_days < 100");
    if (generator == Generator::HarKnown) har_rv.validate();
  }
};

struct GroundTruth {
  // null
  std::vector<double> drift, vol;
  // har
  std::array<double, 3> har_beta{};
  std::vector<double> har_c;  // per series (gap calibration differs)
  double har_sigma_eps = 0;
  std::vector<std::vector<double>> har_eps;  // per series, per day (post burn-in)
  int har_clamps = 0;
  // factor
  int driver = 0;
  std::vector<std::vector<double>> log_var;  // realized latent variance paths
};

struct SimOutput {
  Panel panel;
  GroundTruth truth;
};

// Weekday timeline starting 2000-01-03 (a Monday).
inline std::vector<std::string> make_dates(int n) {
  std::vector<std::string> out;
  out.reserve(n);
  // days since civil epoch for 2000-01-03 computed via Howard Hinnant's
  // algorithm; weekday cycling keeps it branch-light.
  int y = 2000, m = 1, d = 3;
  int dow = 0;  // 0 = Monday
  auto days_in_month = [](int yy, int mm) {
    static const int dm[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    if (mm == 2 && ((yy % 4 == 0 && yy % 100 != 0) || yy % 400 == 0)) return 29;
    return dm[mm - 1];
  };
  char buf[40];
  while (static_cast<int>(out.size()) < n) {
    if (dow < 5) {
      std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
      out.emplace_back(buf);
    }
    dow = (dow + 1) % 7;
    if (++d > days_in_month(y, m)) {
      d = 1;
      if (++m > 12) {
        m = 1;
        ++y;
      }
    }
  }
  return out;
}

namespace detail {

// High/low/open synthesis around a close path.
inline void add_ohlc(PriceSeries& s, const RngSplitter& rng, int j) {
  auto gen = rng.stream(rng_tag::kSimOhlc, static_cast<std::uint64_t>(j));
  std::normal_distribution<double> normal(0.0, 1.0);
  s.ohlc.resize(s.close.size());
  double prev_close = 0.0;
  for (size_t t = 0; t < s.close.size(); ++t) {
    if (!s.close[t]) {
      prev_close = 0.0;
      continue;
    }
    const double c = *s.close[t];
    const double o = prev_close > 0.0 ? prev_close : c;
    const double span = 0.004 * (1.0 + std::abs(normal(gen)));
    OhlcBar b;
    b.open = o;
    b.close = c;
    b.high = std::max(o, c) * std::exp(span * std::abs(normal(gen)) + 1e-6);
    b.low = std::min(o, c) * std::exp(-span * std::abs(normal(gen)) - 1e-6);
    s.ohlc[t] = b;
    prev_close = c;
  }
}

inline PriceSeries prices_from_returns(const std::string& id,
                                       const std::vector<double>& returns) {
  PriceSeries s;
  s.id = id;
  s.close.resize(returns.size() + 1);
  double logp = std::log(100.0);
  s.close[0] = std::exp(logp);
  for (size_t t = 0; t < returns.size(); ++t) {
    logp += returns[t];
    s.close[t + 1] = std::exp(logp);
  }
  return s;
}

inline std::string series_name(int j) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "S%03d", j);
  return buf;
}

}  // namespace detail

inline SimOutput generate(const SimSpec& spec) {
  spec.validate();
  const RngSplitter rng(spec.seed);
  SimOutput out;
  out.panel.dates = make_dates(spec.n_days);

  if (spec.generator == Generator::NullRandomWalk) {
    auto param_gen = rng.stream(rng_tag::kSimFactor, 0xa11);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int j = 0; j < spec.n_series; ++j) {
      const double drift =
          spec.drift_min + (spec.drift_max - spec.drift_min) * u01(param_gen);
      const double vol =
          spec.vol_min + (spec.vol_max - spec.vol_min) * u01(param_gen);
      out.truth.drift.push_back(drift);
      out.truth.vol.push_back(vol);
      auto gen = rng.stream(rng_tag::kSimReturns, static_cast<std::uint64_t>(j));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<double> r(spec.n_days - 1);
      for (auto& x : r) x = drift + vol * normal(gen);
      out.panel.series.push_back(
          detail::prices_from_returns(detail::series_name(j), r));
    }
  } else if (spec.generator == Generator::HarKnown) {
    // Realize the cascade recursion on the measured multi-frequency RVs:
    // at each step the next squared return is solved from the targeted
    // next-day weighted daily RV, so the generated panel satisfies
    //   log RV^d_{t+1} = c + b_d log RV^d_t + b_w log RV^w_t + b_m log RV^m_t + eps
    // on the same definitions the model regresses on. The weekly/monthly
    // log RVs sit below the daily one by Jensen-type gaps, so the intercept
    // is calibrated in two passes: measure the gaps on a draft path, then
    // regenerate with the intercept that centers the floor headroom.
    const RvConfig& rv = spec.har_rv;
    if (rv.scales.size() != 3)
      throw std::invalid_argument("sim har: needs exactly three scales");
    out.truth.har_beta = spec.har_beta;
    out.truth.har_sigma_eps = spec.har_sigma_eps;
    out.truth.har_eps.resize(spec.n_series);
    const int burn = rv.window + rv.scales.back() + 160;
    const double rho1 = scale_decay(rv.rho, rv.window, 1);
    const double w0 = 1.0 - rho1;
    const double bsum =
        spec.har_beta[0] + spec.har_beta[1] + spec.har_beta[2];

    struct HarPath {
      std::vector<double> returns;
      std::vector<double> eps;
      int clamps = 0;
      double gap_w = 0, gap_m = 0;  // measured mean(x_s) - mean(x_d)
      double c = 0;
    };

    auto run_pass = [&](int j, double gap_w, double gap_m) {
      HarPath path;
      path.c = (1.0 - bsum) * spec.har_level - spec.har_beta[1] * gap_w -
               spec.har_beta[2] * gap_m;
      auto gen = rng.stream(rng_tag::kSimReturns, static_cast<std::uint64_t>(j));
      auto sign_gen = rng.stream(rng_tag::kSimSigns, static_cast<std::uint64_t>(j));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      const double sd0 = std::exp(0.5 * spec.har_level);
      std::vector<double>& r = path.returns;
      r.reserve(spec.n_days - 1 + burn);
      for (int t = 0; t < burn; ++t) r.push_back(sd0 * normal(gen));
      PriceSeries tmp = detail::prices_from_returns("tmp", r);
      auto measured = [&](int scale, int t_price) {
        auto v = realized_variance(tmp, rv, scale, t_price);
        if (!v) throw std::logic_error("sim har: rv not ready during build");
        return std::log(std::max(*v, rv.log_floor));
      };
      double sum_d = 0, sum_w = 0, sum_m = 0;
      int n_meas = 0;
      for (int step = 0; step < spec.n_days - 1; ++step) {
        const int t_price = static_cast<int>(r.size());
        const double x_d = measured(rv.scales[0], t_price);
        const double x_w = measured(rv.scales[1], t_price);
        const double x_m = measured(rv.scales[2], t_price);
        sum_d += x_d;
        sum_w += x_w;
        sum_m += x_m;
        ++n_meas;
        double tail = 0.0;
        double w = w0 * rho1;
        for (int i = 0; i < rv.window - 2; ++i) {
          const double rr = r[r.size() - 1 - i];
          tail += w * rr * rr;
          w *= rho1;
        }
        const double det_part = path.c + spec.har_beta[0] * x_d +
                                spec.har_beta[1] * x_w +
                                spec.har_beta[2] * x_m;
        const double floor_target = std::log(std::max(tail, rv.log_floor));
        double eps = spec.har_sigma_eps * normal(gen);
        if (det_part + eps < floor_target) {
          eps = floor_target - det_part;  // r^2 = 0 that day
          ++path.clamps;
        }
        const double target = det_part + eps;
        const double r2 = std::max((std::exp(target) - tail) / w0, 0.0);
        const double sign = u01(sign_gen) < 0.5 ? -1.0 : 1.0;
        r.push_back(sign * std::sqrt(r2));
        path.eps.push_back(eps);
        tmp.close.push_back(*tmp.close.back() * std::exp(r.back()));
      }
      path.gap_w = sum_w / n_meas - sum_d / n_meas;
      path.gap_m = sum_m / n_meas - sum_d / n_meas;
      return path;
    };

    for (int j = 0; j < spec.n_series; ++j) {
      HarPath draft = run_pass(j, 0.0, 0.0);
      HarPath refined = run_pass(j, draft.gap_w, draft.gap_m);
      HarPath final_path = run_pass(j, refined.gap_w, refined.gap_m);
      out.truth.har_c.push_back(final_path.c);
      out.truth.har_eps[j] = std::move(final_path.eps);
      out.truth.har_clamps += final_path.clamps;
      PriceSeries tmp = detail::prices_from_returns("tmp", final_path.returns);
      PriceSeries s;
      s.id = detail::series_name(j);
      s.close.assign(tmp.close.end() - spec.n_days, tmp.close.end());
      out.panel.series.push_back(std::move(s));
    }
  } else {
    // Factor world: series 0's latent log-variance is an AR(1). Followers
    // target a measured RV equal to a scaled copy of the driver's measured
    // RV with a one-day lag; their daily variances come from unwinding the
    // measurement kernel, so every follower is a function of the driver's
    // past returns plus idiosyncratic noise and the influence is one-way.
    const RvConfig& frv = spec.factor_rv;
    frv.validate();
    out.truth.driver = 0;
    out.truth.log_var.resize(spec.n_series);
    const double base_lv = 2.0 * std::log(spec.base_vol);
    const int burn = frv.window + 30;
    const int total = spec.n_days + burn;
    auto fgen = rng.stream(rng_tag::kSimFactor, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> h(total, 0.0);
    for (int t = 1; t < total; ++t)
      h[t] = spec.factor_ar * h[t - 1] + spec.factor_shock * normal(fgen);
    // driver prices over the full (burn + kept) range
    PriceSeries driver_full;
    {
      auto gen = rng.stream(rng_tag::kSimReturns, 0);
      std::normal_distribution<double> n01(0.0, 1.0);
      std::vector<double> r(total - 1);
      for (int t = 1; t < total; ++t)
        r[t - 1] = std::exp(0.5 * (base_lv + h[t])) * n01(gen);
      driver_full = detail::prices_from_returns("drv", r);
    }
    // the driver's measured log RV, the signal followers track
    std::vector<double> x_d(total, base_lv);
    double x_mean = 0;
    int x_n = 0;
    for (int t = 0; t < total; ++t) {
      auto v = realized_variance(driver_full, frv, 1, t);
      if (v) {
        x_d[t] = std::log(std::max(*v, frv.log_floor));
        x_mean += x_d[t];
        ++x_n;
      }
    }
    x_mean /= std::max(x_n, 1);
    const double rho1 = scale_decay(frv.rho, frv.window, 1);
    for (int j = 0; j < spec.n_series; ++j) {
      std::vector<double>& lv = out.truth.log_var[j];
      lv.assign(spec.n_days, base_lv);
      if (j == out.truth.driver) {
        PriceSeries s;
        s.id = detail::series_name(j);
        s.close.assign(driver_full.close.end() - spec.n_days,
                       driver_full.close.end());
        for (int t = 0; t < spec.n_days; ++t) lv[t] = base_lv + h[burn + t];
        out.panel.series.push_back(std::move(s));
        continue;
      }
      auto gen = rng.stream(rng_tag::kSimReturns, static_cast<std::uint64_t>(j));
      auto igen = rng.stream(rng_tag::kSimFactor, 100 + static_cast<std::uint64_t>(j));
      std::normal_distribution<double> n01(0.0, 1.0);
      std::vector<double> r(spec.n_days - 1);
      double idio = 0.0;
      auto target = [&](int tc) {  // target measured RV at constructed index tc
        return std::exp(base_lv +
                        spec.factor_load * (x_d[tc - 1] - x_mean));
      };
      for (int t = 1; t < spec.n_days; ++t) {
        const int tc = burn + t;
        idio = spec.idio_ar * idio + spec.idio_shock * n01(igen);
        // unwind RV_t ~ rho RV_{t-1} + (1 - rho) r^2 for the daily variance
        const double unwound =
            (target(tc) - rho1 * target(tc - 1)) / (1.0 - rho1);
        const double var_t = std::max(unwound, 1e-10) * std::exp(idio);
        lv[t] = std::log(var_t);
        r[t - 1] = std::sqrt(var_t) * n01(gen);
      }
      out.panel.series.push_back(
          detail::prices_from_returns(detail::series_name(j), r));
    }
  }

  if (spec.with_ohlc)
    for (int j = 0; j < spec.n_series; ++j)
      detail::add_ohlc(out.panel.series[j], rng, j);
  for (auto& s : out.panel.series) s.validate();
  return out;
}

}  // namespace sgdlm
