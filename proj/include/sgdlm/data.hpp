#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sgdlm/csv.hpp"
#include "sgdlm/stats.hpp"

namespace sgdlm {

struct OhlcBar {
  double open = 0, high = 0, low = 0, close = 0;
};

// One asset aligned to a shared trading-day timeline; nullopt marks a
// missing day (e.g. the series had not started trading yet).
struct PriceSeries {
  std::string id;
  std::vector<std::optional<double>> close;
  std::vector<std::optional<OhlcBar>> ohlc;  // empty, or same length as close

  bool has_ohlc() const { return !ohlc.empty(); }

  void validate() const {
    if (!ohlc.empty() && ohlc.size() != close.size())
      throw std::invalid_argument("series " + id + ": ohlc/close length mismatch");
    for (const auto& c : close)
      if (c && *c <= 0.0)
        throw std::invalid_argument("series " + id + ": non-positive price");
    for (const auto& b : ohlc) {
      if (!b) continue;
      if (b->open <= 0 || b->high <= 0 || b->low <= 0 || b->close <= 0)
        throw std::invalid_argument("series " + id + ": non-positive OHLC field");
    }
  }
};

struct Panel {
  std::vector<std::string> dates;  // strictly increasing ISO-8601
  std::vector<PriceSeries> series;

  int n_days() const { return static_cast<int>(dates.size()); }
  int n_series() const { return static_cast<int>(series.size()); }
};

struct RvConfig {
  double rho = 0.98;
  int window = 40;                    // price-window length in days
  std::vector<int> scales = {1, 5, 20};
  double log_floor = 1e-12;           // RV floor before taking logs

  void validate() const {
    if (!(rho > 0.0 && rho < 1.0))
      throw std::invalid_argument("rv.rho must lie in (0,1)");
    if (scales.empty()) throw std::invalid_argument("rv.scales empty");
    for (size_t i = 0; i < scales.size(); ++i) {
      if (scales[i] <= 0) throw std::invalid_argument("rv.scales must be positive");
      if (i > 0 && scales[i] <= scales[i - 1])
        throw std::invalid_argument("rv.scales must be increasing");
    }
    if (window <= scales.back())
      throw std::invalid_argument("rv.window must exceed the largest scale");
  }
};

// Decay adjusted so the weights of the L-s available lag-s returns in an
// L-day window sum to 1 - rho^(L-1) at every scale.
inline double scale_decay(double rho, int window, int scale) {
  return std::pow(rho, static_cast<double>(window - 1) /
                           static_cast<double>(window - scale));
}

inline std::vector<std::optional<double>> log_returns(const PriceSeries& s, int lag) {
  if (lag <= 0) throw std::invalid_argument("log_returns: lag must be positive");
  s.validate();
  const int n = static_cast<int>(s.close.size());
  std::vector<std::optional<double>> out(n);
  for (int t = lag; t < n; ++t) {
    if (s.close[t] && s.close[t - lag])
      out[t] = std::log(*s.close[t]) - std::log(*s.close[t - lag]);
  }
  return out;
}

namespace detail {
// True when every close in [t-window+1, t] is present.
inline bool window_present(const PriceSeries& s, int window, int t) {
  if (t - window + 1 < 0 || t >= static_cast<int>(s.close.size())) return false;
  for (int i = t - window + 1; i <= t; ++i)
    if (!s.close[i]) return false;
  return true;
}
}  // namespace detail

// Exponentially weighted realized variance of lag-`scale` log-returns over
// the window of `cfg.window` prices ending at t. nullopt when the window is
// not fully present.
inline std::optional<double> realized_variance(const PriceSeries& s,
                                               const RvConfig& cfg, int scale,
                                               int t) {
  cfg.validate();
  if (scale <= 0 || scale >= cfg.window)
    throw std::invalid_argument("realized_variance: invalid scale");
  if (!detail::window_present(s, cfg.window, t)) return std::nullopt;
  const double rho_s = scale_decay(cfg.rho, cfg.window, scale);
  double w = 1.0 - rho_s;
  double acc = 0.0;
  for (int i = 0; i <= cfg.window - scale - 1; ++i) {
    const double r = std::log(*s.close[t - i]) - std::log(*s.close[t - i - scale]);
    acc += w * r * r;
    w *= rho_s;
  }
  return acc / static_cast<double>(scale);
}

// Signed leverage pair at one scale: exponentially weighted past positive
// and negative lag-`scale` returns with the same kernel as the RV.
inline std::optional<std::pair<double, double>> leverage_terms(
    const PriceSeries& s, const RvConfig& cfg, int scale, int t) {
  if (!detail::window_present(s, cfg.window, t)) return std::nullopt;
  const double rho_s = scale_decay(cfg.rho, cfg.window, scale);
  double w = 1.0 - rho_s;
  double pos = 0.0, neg = 0.0;
  for (int i = 0; i <= cfg.window - scale - 1; ++i) {
    const double r = std::log(*s.close[t - i]) - std::log(*s.close[t - i - scale]);
    pos += w * std::max(r, 0.0);
    neg += w * std::min(r, 0.0);
    w *= rho_s;
  }
  const double inv = 1.0 / static_cast<double>(scale);
  return std::make_pair(pos * inv, neg * inv);
}

// (r_low, CH, COHL) for day t; needs the bar at t and the low at t-1.
// A degenerate bar (high == low) yields CH = COHL = 0.
inline std::optional<std::array<double, 3>> ohlc_features(const PriceSeries& s,
                                                          int t) {
  if (!s.has_ohlc() || t < 1) return std::nullopt;
  if (!s.ohlc[t] || !s.ohlc[t - 1]) return std::nullopt;
  const OhlcBar& b = *s.ohlc[t];
  const OhlcBar& prev = *s.ohlc[t - 1];
  if (b.high < std::max(b.open, b.close) || b.low > std::min(b.open, b.close))
    throw std::invalid_argument("series " + s.id + ": inconsistent OHLC bar");
  const double r_low = std::log(b.low) - std::log(prev.low);
  double ch = 0.0, cohl = 0.0;
  if (b.high > b.low) {
    ch = (b.high - b.close) / (b.high - b.low) - 0.5;
    cohl = (b.close - b.open) / (b.high - b.low);
  }
  return std::array<double, 3>{r_low, ch, cohl};
}

struct VariogramResult {
  std::array<double, 5> rv{};  // lags 1..5, rescaled so lag 1 equals 1
  bool degenerate = false;     // lag-1 RV was zero
};

// Rescaled RV as a function of the return lag, over the window ending at t.
inline VariogramResult variogram(const PriceSeries& s, double rho, int window,
                                 int t) {
  RvConfig cfg;
  cfg.rho = rho;
  cfg.window = window;
  cfg.scales = {1, 2, 3, 4, 5};
  cfg.validate();
  VariogramResult out;
  std::array<double, 5> raw{};
  for (int l = 1; l <= 5; ++l) {
    auto rv = realized_variance(s, cfg, l, t);
    if (!rv)
      throw std::runtime_error("variogram: insufficient data for series " + s.id);
    raw[l - 1] = *rv;
  }
  if (raw[0] <= 0.0) {
    out.degenerate = true;
    return out;
  }
  for (int l = 0; l < 5; ++l) out.rv[l] = raw[l] / raw[0];
  return out;
}

// --- CSV ingestion -------------------------------------------------------

// Format: date,id,open,high,low,close. One row per series-day; open/high/low
// may be empty (close-only data). Absent rows mark missing days.
inline Panel load_panel_csv(const std::string& path) {
  csv::Table t = csv::read_table(path);
  const std::vector<std::string> want = {"date", "id", "open", "high", "low", "close"};
  if (t.header != want)
    throw std::runtime_error("data csv: expected header date,id,open,high,low,close");
  std::set<std::string> date_set;
  std::set<std::string> id_set;
  for (const auto& r : t.rows) {
    if (r.size() != 6) throw std::runtime_error("data csv: malformed row");
    date_set.insert(r[0]);
    id_set.insert(r[1]);
  }
  Panel panel;
  panel.dates.assign(date_set.begin(), date_set.end());
  std::map<std::string, int> date_idx;
  for (int i = 0; i < panel.n_days(); ++i) date_idx[panel.dates[i]] = i;
  std::map<std::string, int> sid;
  for (const auto& id : id_set) {
    sid[id] = panel.n_series();
    PriceSeries s;
    s.id = id;
    s.close.resize(panel.dates.size());
    s.ohlc.resize(panel.dates.size());
    panel.series.push_back(std::move(s));
  }
  for (const auto& r : t.rows) {
    PriceSeries& s = panel.series[sid[r[1]]];
    const int d = date_idx[r[0]];
    if (r[5].empty()) continue;  // explicit missing close
    const double close = std::stod(r[5]);
    s.close[d] = close;
    if (!r[2].empty() && !r[3].empty() && !r[4].empty()) {
      OhlcBar b;
      b.open = std::stod(r[2]);
      b.high = std::stod(r[3]);
      b.low = std::stod(r[4]);
      b.close = close;
      s.ohlc[d] = b;
    }
  }
  for (auto& s : panel.series) {
    bool any = false;
    for (const auto& b : s.ohlc) any = any || b.has_value();
    if (!any) s.ohlc.clear();
    s.validate();
  }
  return panel;
}

inline void write_panel_csv(const Panel& panel, const std::string& path) {
  csv::Writer w(path);
  w.row({"date", "id", "open", "high", "low", "close"});
  for (int t = 0; t < panel.n_days(); ++t) {
    for (const auto& s : panel.series) {
      if (!s.close[t]) continue;
      std::string o, h, l;
      if (s.has_ohlc() && s.ohlc[t]) {
        o = csv::fmt(s.ohlc[t]->open);
        h = csv::fmt(s.ohlc[t]->high);
        l = csv::fmt(s.ohlc[t]->low);
      }
      w.row({panel.dates[t], s.id, o, h, l, csv::fmt(*s.close[t])});
    }
  }
}

// --- Feature pipeline ----------------------------------------------------

struct FeatureFlags {
  bool har = true;       // multi-scale log-RV regressors
  bool leverage = true;  // signed past-return terms per scale
  bool ohlc = false;     // intraday-bar extension
};

// Names of the endogenous block for a given configuration. The offset comes
// first; "rv_<scale>" regressors follow; leverage and OHLC terms after.
inline std::vector<std::string> endo_feature_names(const RvConfig& rv,
                                                   const FeatureFlags& flags) {
  auto tag = [](int s) {
    if (s == 1) return std::string("d");
    if (s == 5) return std::string("w");
    if (s == 20) return std::string("m");
    return std::to_string(s);
  };
  std::vector<std::string> names = {"offset"};
  if (flags.har) {
    for (int s : rv.scales) names.push_back("rv_" + tag(s));
  } else {
    names.push_back("rv_" + tag(rv.scales.front()));
  }
  if (flags.leverage) {
    const std::vector<int>& scales =
        flags.har ? rv.scales : std::vector<int>{rv.scales.front()};
    for (int s : scales) {
      names.push_back("lev_" + tag(s) + "_pos");
      names.push_back("lev_" + tag(s) + "_neg");
    }
  }
  if (flags.ohlc) {
    names.push_back("ohlc_rlow");
    names.push_back("ohlc_ch");
    names.push_back("ohlc_cohl");
  }
  return names;
}

// Per-day model inputs: the standardized observation (log daily RV) and the
// standardized endogenous regressor block built from data through the
// previous day. Missing data maps to 0, the running mean, and the series is
// reported as not ready so callers can skip its update.
class FeaturePipeline {
 public:
  FeaturePipeline(const Panel& panel, const RvConfig& rv, FeatureFlags flags,
                  int std_warmup = 250)
      : panel_(panel), rv_(rv), flags_(flags) {
    rv_.validate();
    names_ = endo_feature_names(rv_, flags_);
    const int m = panel_.n_series();
    const int T = panel_.n_days();
    const std::vector<int>& scales = used_scales();
    raw_logrv_.assign(scales.size(), Grid(m, std::vector<std::optional<double>>(T)));
    if (flags_.leverage)
      raw_lev_.assign(scales.size(),
                      LevGrid(m, std::vector<std::optional<std::pair<double, double>>>(T)));
    if (flags_.ohlc)
      raw_ohlc_.assign(m, std::vector<std::optional<std::array<double, 3>>>(T));
    for (int j = 0; j < m; ++j) {
      const PriceSeries& s = panel_.series[j];
      s.validate();
      for (int t = 0; t < T; ++t) {
        for (size_t k = 0; k < scales.size(); ++k) {
          auto v = realized_variance(s, rv_, scales[k], t);
          if (v) raw_logrv_[k][j][t] = std::log(std::max(*v, rv_.log_floor));
          if (flags_.leverage) {
            auto lev = leverage_terms(s, rv_, scales[k], t);
            if (lev) raw_lev_[k][j][t] = *lev;
          }
        }
        if (flags_.ohlc && s.has_ohlc()) {
          auto f = ohlc_features(s, t);
          if (f) raw_ohlc_[j][t] = *f;
        }
      }
    }
    // One standardizer per (series, named quantity); slot 0 doubles as the
    // observation transform since rv_d *is* the lagged observation.
    std_.assign(m, std::vector<ExpandingStandardizer>(
                       names_.size() - 1, ExpandingStandardizer(std_warmup)));
  }

  const std::vector<std::string>& endo_names() const { return names_; }
  int n_series() const { return panel_.n_series(); }
  int n_days() const { return panel_.n_days(); }
  const std::string& date(int t) const { return panel_.dates[t]; }
  const std::string& series_id(int j) const { return panel_.series[j].id; }

  // Raw log daily RV at day t (observation space).
  std::optional<double> obs_raw(int j, int t) const {
    return raw_logrv_[0][j][t];
  }

  bool obs_ready(int j) const { return std_[j][0].ready(); }
  double obs_mean(int j) const { return std_[j][0].mean(); }
  double obs_scale(int j) const { return std_[j][0].scale(); }

  // Standardized observation for day t using statistics through t-1.
  std::optional<double> obs_std(int j, int t) const {
    auto raw = obs_raw(j, t);
    if (!raw || !obs_ready(j)) return std::nullopt;
    return std_[j][0].standardize(*raw);
  }

  // Endogenous regressors for predicting day t (data through t-1),
  // standardized. False when the series is not ready at t.
  bool endo_features(int j, int t, Eigen::VectorXd& out) const {
    out.resize(static_cast<int>(names_.size()));
    out.setZero();
    out[0] = 1.0;
    if (t < 1) return false;
    if (!raw_logrv_[0][j][t - 1] || !obs_ready(j)) return false;
    int k = 1;
    const std::vector<int>& scales = used_scales();
    for (size_t si = 0; si < scales.size(); ++si) {
      const auto& v = raw_logrv_[si][j][t - 1];
      out[k] = v ? std_[j][k - 1].standardize(*v) : 0.0;
      ++k;
    }
    if (flags_.leverage) {
      for (size_t si = 0; si < scales.size(); ++si) {
        const auto& lev = raw_lev_[si][j][t - 1];
        out[k] = lev ? std_[j][k - 1].standardize(lev->first) : 0.0;
        out[k + 1] = lev ? std_[j][k].standardize(lev->second) : 0.0;
        k += 2;
      }
    }
    if (flags_.ohlc) {
      const auto& f = raw_ohlc_[j][t - 1];
      for (int c = 0; c < 3; ++c)
        out[k + c] = f ? std_[j][k + c - 1].standardize((*f)[c]) : 0.0;
      k += 3;
    }
    return true;
  }

  // Raw (unstandardized) values behind endo_features, for feature dumps.
  std::vector<std::optional<double>> raw_values(int j, int t) const {
    std::vector<std::optional<double>> out(names_.size() - 1);
    if (t < 1) return out;
    int k = 0;
    const std::vector<int>& scales = used_scales();
    for (size_t si = 0; si < scales.size(); ++si)
      out[k++] = raw_logrv_[si][j][t - 1];
    if (flags_.leverage) {
      for (size_t si = 0; si < scales.size(); ++si) {
        const auto& lev = raw_lev_[si][j][t - 1];
        if (lev) {
          out[k] = lev->first;
          out[k + 1] = lev->second;
        }
        k += 2;
      }
    }
    if (flags_.ohlc) {
      const auto& f = raw_ohlc_[j][t - 1];
      if (f)
        for (int c = 0; c < 3; ++c) out[k + c] = (*f)[c];
      k += 3;
    }
    return out;
  }

  // Scale of the named regressor's standardizer (index into endo_names,
  // skipping the offset).
  double feature_scale(int j, int feature_idx) const {
    return std_[j][feature_idx - 1].scale();
  }
  double feature_mean(int j, int feature_idx) const {
    return std_[j][feature_idx - 1].mean();
  }

  // Pushes day-t raw values into the expanding statistics. Call after all
  // of day t's reads.
  void roll(int t) {
    const std::vector<int>& scales = used_scales();
    for (int j = 0; j < n_series(); ++j) {
      int k = 0;
      for (size_t si = 0; si < scales.size(); ++si) {
        const auto& v = raw_logrv_[si][j][t];
        if (v) std_[j][k].update(*v);
        ++k;
      }
      if (flags_.leverage) {
        for (size_t si = 0; si < scales.size(); ++si) {
          const auto& lev = raw_lev_[si][j][t];
          if (lev) {
            std_[j][k].update(lev->first);
            std_[j][k + 1].update(lev->second);
          }
          k += 2;
        }
      }
      if (flags_.ohlc) {
        const auto& f = raw_ohlc_[j][t];
        if (f)
          for (int c = 0; c < 3; ++c) std_[j][k + c].update((*f)[c]);
        k += 3;
      }
    }
  }

 private:
  using Grid = std::vector<std::vector<std::optional<double>>>;
  using LevGrid = std::vector<std::vector<std::optional<std::pair<double, double>>>>;

  const std::vector<int>& used_scales() const {
    if (flags_.har) return rv_.scales;
    static const std::vector<int> daily = {1};
    return daily;
  }

  Panel panel_;
  RvConfig rv_;
  FeatureFlags flags_;
  std::vector<std::string> names_;
  std::vector<Grid> raw_logrv_;   // [scale][series][day]
  std::vector<LevGrid> raw_lev_;  // [scale][series][day]
  std::vector<std::vector<std::optional<std::array<double, 3>>>> raw_ohlc_;
  std::vector<std::vector<ExpandingStandardizer>> std_;  // [series][named value]
};

}  // namespace sgdlm
