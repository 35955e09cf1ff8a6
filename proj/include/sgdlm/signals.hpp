#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgdlm/runner.hpp"
#include "sgdlm/stats.hpp"

namespace sgdlm {

// Daily absolute-coefficient sums per economic group.
struct GroupSeries {
  std::vector<double> rv, lev, core;
};

struct CoefficientGroups {
  std::vector<std::string> dates;
  std::vector<std::string> ids;
  std::vector<GroupSeries> per_series;          // indexed like ids
  GroupSeries market;                           // cross-series sums
  std::vector<std::optional<double>> market_logrv;  // EW mean of raw log RV
};

enum class CoefTag { Rv, Lev, Core, Other };

inline CoefTag classify_coefficient(const std::string& name) {
  if (name.rfind("rv_", 0) == 0) return CoefTag::Rv;
  if (name.rfind("lev_", 0) == 0) return CoefTag::Lev;
  if (name.rfind("pa:", 0) == 0) return CoefTag::Core;
  if (name == "offset" || name.rfind("ohlc_", 0) == 0) return CoefTag::Other;
  throw std::invalid_argument("group_coefficients: unknown coefficient tag '" +
                              name + "'");
}

// Aggregates a coefficient dump into per-series and market-level group
// series. Days with no coefficients for a series contribute zeros.
inline CoefficientGroups group_coefficients(
    const std::vector<CoefRow>& rows, const std::vector<std::string>& dates,
    const std::vector<std::string>& ids,
    const std::vector<std::vector<std::optional<double>>>& obs_raw) {
  CoefficientGroups out;
  out.dates = dates;
  out.ids = ids;
  const int T = static_cast<int>(dates.size());
  const int m = static_cast<int>(ids.size());
  std::map<std::string, int> did, sid;
  for (int t = 0; t < T; ++t) did[dates[t]] = t;
  for (int j = 0; j < m; ++j) sid[ids[j]] = j;
  auto zeroed = [T] {
    GroupSeries g;
    g.rv.assign(T, 0.0);
    g.lev.assign(T, 0.0);
    g.core.assign(T, 0.0);
    return g;
  };
  out.per_series.assign(m, zeroed());
  out.market = zeroed();
  for (const auto& r : rows) {
    auto dit = did.find(r.date);
    auto sit = sid.find(r.id);
    if (dit == did.end() || sit == sid.end())
      throw std::invalid_argument("group_coefficients: row outside panel");
    GroupSeries& g = out.per_series[sit->second];
    const double a = std::abs(r.value);
    switch (classify_coefficient(r.name)) {
      case CoefTag::Rv: g.rv[dit->second] += a; break;
      case CoefTag::Lev: g.lev[dit->second] += a; break;
      case CoefTag::Core: g.core[dit->second] += a; break;
      case CoefTag::Other: break;
    }
  }
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < m; ++j) {
      out.market.rv[t] += out.per_series[j].rv[t];
      out.market.lev[t] += out.per_series[j].lev[t];
      out.market.core[t] += out.per_series[j].core[t];
    }
  }
  out.market_logrv.assign(T, std::nullopt);
  for (int t = 0; t < T; ++t) {
    double acc = 0.0;
    int n = 0;
    for (int j = 0; j < m; ++j)
      if (obs_raw[t][j]) {
        acc += *obs_raw[t][j];
        ++n;
      }
    if (n > 0) out.market_logrv[t] = acc / n;
  }
  return out;
}

// A {-1,0,+1} stream where value[t] was computed at sampling time
// source[t] <= t-1 and held until the next sampling time.
struct SignalStream {
  std::vector<int> value;
  std::vector<int> source;
};

// Scale-space change point: at sampling times spaced `lag` apart, the sign
// of x_t - x_{t-lag}, with a dead-band of deadband_frac times the trailing
// interquartile range. Signals are invariant to positive rescaling of x.
inline SignalStream change_point(const std::vector<double>& x, int lag,
                                 double deadband_frac = 0.01,
                                 int deadband_window = 250) {
  if (lag < 1) throw std::invalid_argument("change_point: lag must be >= 1");
  const int T = static_cast<int>(x.size());
  SignalStream s;
  s.value.assign(T, 0);
  s.source.assign(T, -1);
  int held_sig = 0, held_src = -1;
  for (int t = 0; t < T; ++t) {
    // the signal sampled at g covers days g+1 .. g+lag
    if (held_src >= 0 && t > held_src && t <= held_src + lag) {
      s.value[t] = held_sig;
      s.source[t] = held_src;
    }
    if (t >= lag && t % lag == 0) {
      const double diff = x[t] - x[t - lag];
      double band = 0.0;
      if (deadband_frac > 0.0) {
        const int lo = std::max(0, t - deadband_window + 1);
        std::vector<double> win(x.begin() + lo, x.begin() + t + 1);
        if (win.size() >= 20) band = deadband_frac * interquartile_range(win);
      }
      held_sig = std::abs(diff) <= band ? 0 : (diff > 0.0 ? 1 : -1);
      held_src = t;
    }
  }
  return s;
}

// Change point on the exogenous-minus-endogenous spread.
inline SignalStream spread_signal(const std::vector<double>& core,
                                  const std::vector<double>& rv, int lag,
                                  double deadband_frac = 0.01,
                                  int deadband_window = 250) {
  if (core.size() != rv.size())
    throw std::invalid_argument("spread_signal: length mismatch");
  std::vector<double> diff(core.size());
  for (size_t i = 0; i < core.size(); ++i) diff[i] = core[i] - rv[i];
  return change_point(diff, lag, deadband_frac, deadband_window);
}

struct PositionStream {
  std::vector<int> value;
  std::vector<int> source;  // latest signal source per day; -1 when flat
};

// Sums aligned signal streams; a position needs |sum| strictly above the
// threshold. Monotone: flipping one stream -1 -> +1 never lowers the sum.
inline PositionStream combine_signals(const std::vector<SignalStream>& streams,
                                      double threshold = 0.0) {
  if (streams.empty())
    throw std::invalid_argument("combine_signals: no streams");
  const int T = static_cast<int>(streams[0].value.size());
  for (const auto& s : streams)
    if (static_cast<int>(s.value.size()) != T)
      throw std::invalid_argument("combine_signals: misaligned streams");
  PositionStream out;
  out.value.assign(T, 0);
  out.source.assign(T, -1);
  for (int t = 0; t < T; ++t) {
    int sum = 0, src = -1;
    for (const auto& s : streams) {
      sum += s.value[t];
      src = std::max(src, s.source[t]);
    }
    if (std::abs(sum) > threshold) {
      out.value[t] = sum > 0 ? 1 : -1;
      out.source[t] = src;
    }
  }
  return out;
}

struct SeriesStats {
  double hit_rate = 0.0;
  int n_scored = 0;
  int n_trades = 0;
  double pnl = 0.0;
};

struct Trade {
  int series = 0;
  int open = 0, close = 0;  // day indexes
  int direction = 0;
  double pnl = 0.0;
};

struct BacktestResult {
  std::vector<double> daily_return;  // EW mean of position * move
  std::vector<double> curve;         // cumulative
  double hit_rate = 0.0;
  double max_drawdown = 0.0;
  double median_trade_length = 0.0;
  std::vector<SeriesStats> per_series;
  std::vector<Trade> trades;
};

// Equal-weighted directional backtest. Position p_t is scored on the move
// target_t - target_{t-1}; provenance is checked so p_t never derives from
// data at or after t.
inline BacktestResult ew_backtest(
    const std::vector<PositionStream>& positions,
    const std::vector<std::vector<std::optional<double>>>& targets) {
  const int m = static_cast<int>(positions.size());
  if (m == 0 || static_cast<int>(targets.size()) != m)
    throw std::invalid_argument("ew_backtest: inputs misaligned");
  const int T = static_cast<int>(positions[0].value.size());
  for (int j = 0; j < m; ++j)
    if (static_cast<int>(positions[j].value.size()) != T ||
        static_cast<int>(targets[j].size()) != T)
      throw std::invalid_argument("ew_backtest: inputs misaligned");
  for (int j = 0; j < m; ++j)
    for (int t = 0; t < T; ++t)
      if (positions[j].value[t] != 0 && positions[j].source[t] >= t)
        throw std::runtime_error("ew_backtest: lookahead detected (position at " +
                                 std::to_string(t) + " sourced at " +
                                 std::to_string(positions[j].source[t]) + ")");

  BacktestResult res;
  res.daily_return.assign(T, 0.0);
  res.curve.assign(T, 0.0);
  res.per_series.assign(m, SeriesStats{});
  int hits = 0, scored = 0;
  for (int t = 1; t < T; ++t) {
    double acc = 0.0;
    int n = 0;
    for (int j = 0; j < m; ++j) {
      if (!targets[j][t] || !targets[j][t - 1]) continue;
      const double move = *targets[j][t] - *targets[j][t - 1];
      const int pos = positions[j].value[t];
      acc += pos * move;
      ++n;
      if (pos != 0) {
        res.per_series[j].pnl += pos * move;
        if (move != 0.0) {
          ++scored;
          ++res.per_series[j].n_scored;
          if ((pos > 0) == (move > 0)) {
            ++hits;
            res.per_series[j].hit_rate += 1.0;
          }
        }
      }
    }
    res.daily_return[t] = n > 0 ? acc / n : 0.0;
    res.curve[t] = res.curve[t - 1] + res.daily_return[t];
  }
  for (auto& st : res.per_series)
    if (st.n_scored > 0) st.hit_rate /= st.n_scored;
  res.hit_rate = scored > 0 ? static_cast<double>(hits) / scored : 0.0;

  double peak = 0.0;
  for (double v : res.curve) {
    peak = std::max(peak, v);
    res.max_drawdown = std::max(res.max_drawdown, peak - v);
  }

  std::vector<double> lengths;
  for (int j = 0; j < m; ++j) {
    int run = 0, dir = 0, open = 0;
    double pnl = 0.0;
    for (int t = 1; t <= T; ++t) {
      const int pos = t < T ? positions[j].value[t] : 0;
      if (pos == dir && pos != 0) {
        ++run;
        if (t < T && targets[j][t] && targets[j][t - 1])
          pnl += pos * (*targets[j][t] - *targets[j][t - 1]);
        continue;
      }
      if (dir != 0 && run > 0) {
        lengths.push_back(run);
        res.trades.push_back({j, open, t - 1, dir, pnl});
        ++res.per_series[j].n_trades;
      }
      dir = pos;
      run = pos != 0 ? 1 : 0;
      open = t;
      pnl = 0.0;
      if (pos != 0 && t < T && targets[j][t] && targets[j][t - 1])
        pnl += pos * (*targets[j][t] - *targets[j][t - 1]);
    }
  }
  res.median_trade_length = lengths.empty() ? 0.0 : median(lengths);
  return res;
}

// Oracle-facing variant without provenance: positions[j][t] scored on the
// move ending at t, exactly as supplied.
inline BacktestResult ew_backtest_raw(
    const std::vector<std::vector<int>>& positions,
    const std::vector<std::vector<std::optional<double>>>& targets) {
  std::vector<PositionStream> ps(positions.size());
  for (size_t j = 0; j < positions.size(); ++j) {
    ps[j].value = positions[j];
    ps[j].source.assign(positions[j].size(), -1);
  }
  return ew_backtest(ps, targets);
}

// In-sample lag choice: hit rate of the change-point signal against the
// next-day move of the target over days before `cutoff`; ties prefer the
// shorter lag.
inline int select_lag(const std::vector<double>& group,
                      const std::vector<double>& target,
                      const std::vector<int>& lags, int cutoff,
                      double deadband_frac = 0.01, int deadband_window = 250) {
  if (lags.empty()) throw std::invalid_argument("select_lag: no lags");
  cutoff = std::min<int>(cutoff, static_cast<int>(group.size()));
  int best_lag = lags.front();
  double best_score = -1.0;
  for (int lag : lags) {
    SignalStream s = change_point(group, lag, deadband_frac, deadband_window);
    int hits = 0, scored = 0;
    for (int t = 1; t < cutoff; ++t) {
      if (s.value[t] == 0) continue;
      const double move = target[t] - target[t - 1];
      if (move == 0.0) continue;
      ++scored;
      if ((s.value[t] > 0) == (move > 0)) ++hits;
    }
    const double score = scored > 0 ? static_cast<double>(hits) / scored : 0.0;
    if (score > best_score) {
      best_score = score;
      best_lag = lag;
    }
  }
  return best_lag;
}

}  // namespace sgdlm
