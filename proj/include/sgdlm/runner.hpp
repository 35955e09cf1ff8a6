#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgdlm/csv.hpp"
#include "sgdlm/data.hpp"
#include "sgdlm/engine.hpp"

namespace sgdlm {

struct ForecastRow {
  std::string date, id;
  double mean = 0, lo = 0, hi = 0;  // raw log-RV space
  double entropy = 0, ess = 0;
};

struct CoefRow {
  std::string date, id, name;
  double value = 0;  // model (standardized) space
};

struct DiagRow {
  std::string date;
  double entropy = 0, ess = 0;
  int rejections = 0;
  double min_eig = 0;
  int coupled = 0, tempered = 0, vb_fallbacks = 0;
};

struct ParentRow {
  std::string date, child, parent, set;
  double score = 0;
};

struct StateRow {
  std::string date, id, name;
  double m = 0, c_diag = 0, n = 0, s = 0;
};

struct ScaleRow {
  std::string date, id, name;
  double mean = 0, scale = 0;
};

struct FeatureRow {
  std::string date, id, name;
  double value = 0;
};

struct PipelineConfig {
  RvConfig rv;
  FeatureFlags features;
  EngineConfig engine;
  int std_warmup = 250;  // expanding z-score warm-up before features emit
  bool dump_state = false;
  bool dump_features = false;
};

struct RunResult {
  std::vector<std::string> endo_names;
  std::vector<std::string> ids;
  std::vector<std::string> dates;
  std::vector<ForecastRow> forecasts;
  std::vector<CoefRow> coefficients;
  std::vector<DiagRow> diagnostics;
  std::vector<ParentRow> parents;
  std::vector<StateRow> states;
  std::vector<ScaleRow> scales;
  std::vector<FeatureRow> features;
  // observed raw log daily RV, [day][series]
  std::vector<std::vector<std::optional<double>>> obs_raw;
};

// Day loop with a strict forecast-then-update discipline: the forecast row
// for day t is produced before y_t is touched and de-standardized with
// statistics through t-1.
inline RunResult run_pipeline(const Panel& panel, const PipelineConfig& cfg) {
  FeaturePipeline pipe(panel, cfg.rv, cfg.features, cfg.std_warmup);
  const int m = pipe.n_series();
  const int T = pipe.n_days();
  Engine engine(m, pipe.endo_names(), cfg.engine);
  std::vector<std::string> ids(m);
  for (int j = 0; j < m; ++j) ids[j] = pipe.series_id(j);
  engine.set_series_ids(ids);

  RunResult out;
  out.endo_names = pipe.endo_names();
  out.ids = ids;
  out.dates = panel.dates;
  out.obs_raw.assign(T, std::vector<std::optional<double>>(m));

  for (int t = 0; t < T; ++t) {
    const std::string& date = panel.dates[t];
    std::vector<std::optional<Eigen::VectorXd>> endo(m);
    for (int j = 0; j < m; ++j) {
      Eigen::VectorXd x;
      if (pipe.endo_features(j, t, x)) endo[j] = std::move(x);
    }
    // capture de-standardization stats through t-1
    std::vector<std::pair<double, double>> obs_ms(m);
    for (int j = 0; j < m; ++j)
      obs_ms[j] = {pipe.obs_mean(j), pipe.obs_scale(j)};

    auto fcs = engine.forecast(endo, static_cast<std::uint64_t>(t));
    for (int j = 0; j < m; ++j) {
      if (!fcs[j].valid) continue;
      ForecastRow row;
      row.date = date;
      row.id = ids[j];
      row.mean = fcs[j].mean * obs_ms[j].second + obs_ms[j].first;
      row.lo = fcs[j].lo * obs_ms[j].second + obs_ms[j].first;
      row.hi = fcs[j].hi * obs_ms[j].second + obs_ms[j].first;
      out.forecasts.push_back(std::move(row));
    }

    std::vector<std::optional<double>> obs(m);
    for (int j = 0; j < m; ++j) {
      obs[j] = pipe.obs_std(j, t);
      out.obs_raw[t][j] = pipe.obs_raw(j, t);
    }
    DayDiagnostics diag = engine.step(obs, endo, static_cast<std::uint64_t>(t));
    // backfill the day's recoupling diagnostics onto its forecast rows
    for (auto it = out.forecasts.rbegin();
         it != out.forecasts.rend() && it->date == date; ++it) {
      it->entropy = diag.entropy;
      it->ess = diag.ess;
    }
    DiagRow drow;
    drow.date = date;
    drow.entropy = diag.entropy;
    drow.ess = diag.ess;
    drow.rejections = diag.rejections;
    drow.min_eig = diag.min_eig;
    drow.coupled = diag.coupled ? 1 : 0;
    drow.tempered = diag.tempered ? 1 : 0;
    drow.vb_fallbacks = diag.vb_fallbacks;
    out.diagnostics.push_back(std::move(drow));

    for (int j = 0; j < m; ++j) {
      if (!engine.started(j)) continue;
      const DlmState& post = engine.posterior(j);
      const auto names = engine.coefficient_names(j);
      for (int k = 0; k < post.dim(); ++k) {
        out.coefficients.push_back({date, ids[j], names[k], post.m[k]});
        if (cfg.dump_state)
          out.states.push_back(
              {date, ids[j], names[k], post.m[k], post.c(k, k), post.n, post.s});
      }
      const auto& sets = engine.parent_sets(j);
      auto emit_set = [&](const std::vector<ParentMember>& v, const char* tag) {
        for (const auto& mb : v) {
          double score = 0.0;
          const auto& order = engine.parent_order(j);
          for (int kk = 0; kk < static_cast<int>(order.size()); ++kk) {
            if (order[kk] == mb.series) {
              const int idx = engine.n_endo() + kk;
              score = std::abs(post.m[idx]) /
                      std::sqrt(std::max(post.c(idx, idx), 1e-300));
            }
          }
          out.parents.push_back({date, ids[j], ids[mb.series], tag, score});
        }
      };
      emit_set(sets.core, "core");
      emit_set(sets.up, "up");
      emit_set(sets.down, "down");
      // model-space scale bookkeeping so coefficients stay interpretable
      out.scales.push_back({date, ids[j], "obs", pipe.obs_mean(j), pipe.obs_scale(j)});
      for (int k = 1; k < static_cast<int>(out.endo_names.size()); ++k)
        if (out.endo_names[k].rfind("rv_", 0) == 0)
          out.scales.push_back({date, ids[j], out.endo_names[k],
                                pipe.feature_mean(j, k), pipe.feature_scale(j, k)});
    }

    if (cfg.dump_features) {
      for (int j = 0; j < m; ++j) {
        auto raw = pipe.raw_values(j, t);
        for (size_t k = 0; k < raw.size(); ++k)
          if (raw[k])
            out.features.push_back(
                {date, ids[j], out.endo_names[k + 1], *raw[k]});
      }
    }

    pipe.roll(t);
  }
  return out;
}

// --- CSV emission ---------------------------------------------------------

inline void write_forecasts_csv(const std::vector<ForecastRow>& rows,
                                const std::string& path) {
  csv::Writer w(path);
  w.row({"date", "id", "forecast_mean", "interval_lo", "interval_hi", "entropy",
         "ess"});
  for (const auto& r : rows)
    w.row({r.date, r.id, csv::fmt(r.mean), csv::fmt(r.lo), csv::fmt(r.hi),
           csv::fmt(r.entropy), csv::fmt(r.ess)});
}

inline void write_coefficients_csv(const std::vector<CoefRow>& rows,
                                   const std::string& path) {
  csv::Writer w(path);
  w.row({"date", "id", "coef_name", "value"});
  for (const auto& r : rows) w.row({r.date, r.id, r.name, csv::fmt(r.value)});
}

inline void write_diagnostics_csv(const std::vector<DiagRow>& rows,
                                  const std::string& path) {
  csv::Writer w(path);
  w.row({"date", "entropy", "ess", "rejections", "min_eig", "coupled",
         "tempered", "vb_fallbacks"});
  for (const auto& r : rows)
    w.row({r.date, csv::fmt(r.entropy), csv::fmt(r.ess),
           std::to_string(r.rejections), csv::fmt(r.min_eig),
           std::to_string(r.coupled), std::to_string(r.tempered),
           std::to_string(r.vb_fallbacks)});
}

inline void write_parents_csv(const std::vector<ParentRow>& rows,
                              const std::string& path) {
  csv::Writer w(path);
  w.row({"date", "child_id", "parent_id", "set", "score"});
  for (const auto& r : rows)
    w.row({r.date, r.child, r.parent, r.set, csv::fmt(r.score)});
}

inline void write_states_csv(const std::vector<StateRow>& rows,
                             const std::string& path) {
  csv::Writer w(path);
  w.row({"date", "id", "coef_name", "m", "c_diag", "n", "s"});
  for (const auto& r : rows)
    w.row({r.date, r.id, r.name, csv::fmt(r.m), csv::fmt(r.c_diag),
           csv::fmt(r.n), csv::fmt(r.s)});
}

inline void write_scales_csv(const std::vector<ScaleRow>& rows,
                             const std::string& path) {
  csv::Writer w(path);
  w.row({"date", "id", "name", "mean", "scale"});
  for (const auto& r : rows)
    w.row({r.date, r.id, r.name, csv::fmt(r.mean), csv::fmt(r.scale)});
}

inline void write_features_csv(const std::vector<FeatureRow>& rows,
                               const std::string& path) {
  csv::Writer w(path);
  w.row({"date", "id", "feature_name", "value"});
  for (const auto& r : rows) w.row({r.date, r.id, r.name, csv::fmt(r.value)});
}

inline void write_run_outputs(const RunResult& res, const std::string& out_dir,
                              const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_forecasts_csv(res.forecasts, out_dir + "/forecasts.csv");
  write_coefficients_csv(res.coefficients, out_dir + "/coefficients.csv");
  write_diagnostics_csv(res.diagnostics, out_dir + "/diagnostics.csv");
  write_parents_csv(res.parents, out_dir + "/parents.csv");
  write_scales_csv(res.scales, out_dir + "/standardizer.csv");
  if (cfg.dump_state) write_states_csv(res.states, out_dir + "/state.csv");
  if (cfg.dump_features)
    write_features_csv(res.features, out_dir + "/features.csv");
}

}  // namespace sgdlm
