// Command-line front end: simulate, run, variogram, backtest, metrics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "sgdlm/config.hpp"
#include "sgdlm/data.hpp"
#include "sgdlm/metrics.hpp"
#include "sgdlm/runner.hpp"
#include "sgdlm/signals.hpp"
#include "sgdlm/sim.hpp"

namespace fs = std::filesystem;
using namespace sgdlm;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;  // raw key=value overrides
  std::string data_path, out_dir, sim_gen;
  int series = -1, days = -1;
  std::string seed;
  bool no_parents = false, no_har = false, no_leverage = false, ohlc = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "flat key=value config file");
  cmd->add_option("--set", o.sets, "extra section.key=value override")
      ->take_all();
  cmd->add_option("--data", o.data_path, "input CSV (date,id,open,high,low,close)");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--sim", o.sim_gen, "simulate instead of reading data: null|har|factor");
  cmd->add_option("--series", o.series, "simulated series count");
  cmd->add_option("--days", o.days, "simulated day count");
  cmd->add_option("--seed", o.seed, "master seed (engine and simulator)");
  cmd->add_flag("--no-parents", o.no_parents, "disable the parent graph");
  cmd->add_flag("--no-har", o.no_har, "endogenous block = offset + previous log-RV only");
  cmd->add_flag("--no-leverage", o.no_leverage, "drop leverage regressors");
  cmd->add_flag("--ohlc", o.ohlc, "enable OHLC regressors (and bar synthesis in sims)");
}

RunConfig resolve(const CommonOpts& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = load_config(o.config_path);
  if (!o.data_path.empty()) cfg.data_path = o.data_path;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (!o.sim_gen.empty()) {
    cfg.sim.generator = generator_from_string(o.sim_gen);
    cfg.data_path.clear();
  }
  if (o.series > 0) cfg.sim.n_series = o.series;
  if (o.days > 0) cfg.sim.n_days = o.days;
  if (!o.seed.empty()) {
    cfg.seed = std::stoull(o.seed);
    cfg.sim.seed = cfg.seed;
  }
  if (o.no_parents) cfg.parents.enabled = false;
  if (o.no_har) cfg.features.har = false;
  if (o.no_leverage) cfg.features.leverage = false;
  if (o.ohlc) {
    cfg.features.ohlc = true;
    cfg.sim.with_ohlc = true;
  }
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got " + kv);
    apply_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

Panel load_or_simulate(const RunConfig& cfg) {
  if (!cfg.data_path.empty()) return load_panel_csv(cfg.data_path);
  return generate(cfg.sim).panel;
}

// Raw log daily RV per [day][series], the common prediction target.
std::vector<std::vector<std::optional<double>>> observed_logrv(
    const Panel& panel, const RvConfig& rv) {
  std::vector<std::vector<std::optional<double>>> out(
      panel.n_days(), std::vector<std::optional<double>>(panel.n_series()));
  for (int j = 0; j < panel.n_series(); ++j)
    for (int t = 0; t < panel.n_days(); ++t) {
      auto v = realized_variance(panel.series[j], rv, rv.scales.front(), t);
      if (v) out[t][j] = std::log(std::max(*v, rv.log_floor));
    }
  return out;
}

int cmd_simulate(const CommonOpts& o) {
  RunConfig cfg = resolve(o);
  SimOutput sim = generate(cfg.sim);
  fs::path out = cfg.out_dir.empty() ? "sim.csv" : cfg.out_dir;
  if (!out.has_extension()) {
    fs::create_directories(out);
    out /= "sim.csv";
  } else if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  write_panel_csv(sim.panel, out.string());
  std::cout << "wrote " << out.string() << " (" << sim.panel.n_series()
            << " series x " << sim.panel.n_days() << " days)\n";
  return 0;
}

int cmd_run(const CommonOpts& o, int kstep) {
  RunConfig cfg = resolve(o);
  Panel panel = load_or_simulate(cfg);
  PipelineConfig pc = cfg.pipeline();
  RunResult res = run_pipeline(panel, pc);
  fs::create_directories(cfg.out_dir);
  write_run_outputs(res, cfg.out_dir, pc);
  {
    std::ofstream f(cfg.out_dir + "/run_config.txt");
    f << serialize(cfg);
  }
  if (kstep > 0) {
    // recursive multi-horizon forecast from the final state; only the plain
    // regressor set is closed under its own predictions
    FeaturePipeline pipe(panel, cfg.rv, cfg.features, cfg.std_warmup);
    Engine engine(pipe.n_series(), pipe.endo_names(), pc.engine);
    std::vector<std::string> ids(pipe.n_series());
    for (int j = 0; j < pipe.n_series(); ++j) ids[j] = pipe.series_id(j);
    engine.set_series_ids(ids);
    std::vector<std::optional<Eigen::VectorXd>> endo(pipe.n_series());
    for (int t = 0; t < pipe.n_days(); ++t) {
      std::vector<std::optional<double>> obs(pipe.n_series());
      for (int j = 0; j < pipe.n_series(); ++j) {
        Eigen::VectorXd x;
        endo[j] = std::nullopt;
        if (pipe.endo_features(j, t, x)) endo[j] = std::move(x);
        obs[j] = pipe.obs_std(j, t);
      }
      engine.step(obs, endo, static_cast<std::uint64_t>(t));
      pipe.roll(t);
    }
    auto path = engine.forecast_k_steps(endo, pipe.n_days(), kstep);
    csv::Writer w(cfg.out_dir + "/kstep.csv");
    w.row({"horizon", "id", "forecast_mean", "interval_lo", "interval_hi"});
    for (int h = 0; h < static_cast<int>(path.size()); ++h)
      for (int j = 0; j < pipe.n_series(); ++j) {
        if (!path[h][j].valid) continue;
        const double mu = pipe.obs_mean(j), sc = pipe.obs_scale(j);
        w.row({std::to_string(h + 1), ids[j],
               csv::fmt(path[h][j].mean * sc + mu),
               csv::fmt(path[h][j].lo * sc + mu),
               csv::fmt(path[h][j].hi * sc + mu)});
      }
  }
  std::cout << "run complete: " << res.forecasts.size() << " forecast rows, "
            << res.coefficients.size() << " coefficient rows -> " << cfg.out_dir
            << "\n";
  return 0;
}

int cmd_variogram(const CommonOpts& o, double rho, int window) {
  RunConfig cfg = resolve(o);
  Panel panel = load_or_simulate(cfg);
  fs::path out = cfg.out_dir.empty() ? "variogram.csv" : cfg.out_dir;
  if (!out.has_extension()) {
    fs::create_directories(out);
    out /= "variogram.csv";
  } else if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  csv::Writer w(out.string());
  w.row({"id", "lag", "rv", "degenerate"});
  for (const auto& s : panel.series) {
    VariogramResult res = variogram(s, rho, window, panel.n_days() - 1);
    for (int l = 1; l <= 5; ++l)
      w.row({s.id, std::to_string(l), csv::fmt(res.rv[l - 1]),
             res.degenerate ? "1" : "0"});
  }
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

std::vector<CoefRow> load_coefficients(const std::string& path) {
  csv::Table t = csv::read_table(path);
  const std::vector<std::string> want = {"date", "id", "coef_name", "value"};
  if (t.header != want)
    throw std::runtime_error("coefficients csv: unexpected header");
  std::vector<CoefRow> rows;
  rows.reserve(t.rows.size());
  for (const auto& r : t.rows)
    rows.push_back({r[0], r[1], r[2], std::stod(r[3])});
  return rows;
}

int cmd_backtest(const CommonOpts& o, const std::string& coef_path,
                 const std::string& target_mode, double threshold_opt) {
  RunConfig cfg = resolve(o);
  if (cfg.data_path.empty())
    throw std::invalid_argument("backtest: --data is required");
  Panel panel = load_panel_csv(cfg.data_path);
  auto obs = observed_logrv(panel, cfg.rv);
  std::vector<std::string> ids(panel.n_series());
  for (int j = 0; j < panel.n_series(); ++j) ids[j] = panel.series[j].id;
  auto coef_rows = load_coefficients(coef_path);
  CoefficientGroups groups =
      group_coefficients(coef_rows, panel.dates, ids, obs);
  const double threshold =
      threshold_opt >= 0 ? threshold_opt : cfg.signals.threshold;

  int cutoff = panel.n_days() / 2;
  if (!cfg.signals.cutoff_date.empty()) {
    cutoff = 0;
    while (cutoff < panel.n_days() &&
           panel.dates[cutoff] < cfg.signals.cutoff_date)
      ++cutoff;
  }

  auto streams_for = [&](const GroupSeries& g) {
    std::vector<SignalStream> streams;
    for (int lag : cfg.signals.lags) {
      streams.push_back(change_point(g.rv, lag, cfg.signals.deadband_frac,
                                     cfg.signals.deadband_window));
      streams.push_back(change_point(g.lev, lag, cfg.signals.deadband_frac,
                                     cfg.signals.deadband_window));
      streams.push_back(change_point(g.core, lag, cfg.signals.deadband_frac,
                                     cfg.signals.deadband_window));
      streams.push_back(spread_signal(g.core, g.rv, lag,
                                      cfg.signals.deadband_frac,
                                      cfg.signals.deadband_window));
    }
    return streams;
  };

  std::vector<PositionStream> positions;
  std::vector<std::vector<std::optional<double>>> targets;  // [series][day]
  if (target_mode == "series") {
    for (int j = 0; j < panel.n_series(); ++j) {
      positions.push_back(
          combine_signals(streams_for(groups.per_series[j]), threshold));
      std::vector<std::optional<double>> tj(panel.n_days());
      for (int t = 0; t < panel.n_days(); ++t) tj[t] = obs[t][j];
      targets.push_back(std::move(tj));
    }
  } else {
    std::vector<std::optional<double>> target;
    if (target_mode == "market") {
      target = groups.market_logrv;
    } else if (target_mode.rfind("index:", 0) == 0) {
      csv::Table t = csv::read_table(target_mode.substr(6));
      if (t.header.size() != 2 || t.header[0] != "date")
        throw std::runtime_error("index csv: expected header date,value");
      std::map<std::string, double> by_date;
      for (const auto& r : t.rows) by_date[r[0]] = std::stod(r[1]);
      target.assign(panel.n_days(), std::nullopt);
      for (int t2 = 0; t2 < panel.n_days(); ++t2) {
        auto it = by_date.find(panel.dates[t2]);
        if (it != by_date.end()) target[t2] = it->second;
      }
    } else {
      throw std::invalid_argument("backtest: bad --target " + target_mode);
    }
    positions.push_back(combine_signals(streams_for(groups.market), threshold));
    targets.push_back(std::move(target));
  }

  BacktestResult res = ew_backtest(positions, targets);
  fs::create_directories(cfg.out_dir);
  {
    csv::Writer w(cfg.out_dir + "/report.csv");
    w.row({"date", "portfolio_value", "market_logrv"});
    for (int t = 0; t < panel.n_days(); ++t)
      w.row({panel.dates[t], csv::fmt(res.curve[t]),
             groups.market_logrv[t] ? csv::fmt(*groups.market_logrv[t]) : ""});
  }
  {
    csv::Writer w(cfg.out_dir + "/trades.csv");
    w.row({"id", "open_date", "close_date", "direction", "days", "pnl"});
    for (const auto& tr : res.trades)
      w.row({target_mode == "series" ? ids[tr.series] : target_mode,
             panel.dates[tr.open], panel.dates[tr.close],
             std::to_string(tr.direction),
             std::to_string(tr.close - tr.open + 1), csv::fmt(tr.pnl)});
  }
  {
    csv::Writer w(cfg.out_dir + "/summary.csv");
    w.row({"hit_rate", "max_drawdown", "median_trade_length", "n_trades",
           "cutoff_day"});
    w.row({csv::fmt(res.hit_rate), csv::fmt(res.max_drawdown),
           csv::fmt(res.median_trade_length),
           std::to_string(static_cast<int>(res.trades.size())),
           std::to_string(cutoff)});
  }
  std::cout << "backtest: hit_rate=" << res.hit_rate
            << " trades=" << res.trades.size() << " -> " << cfg.out_dir << "\n";
  return 0;
}

struct ModelStream {
  std::string name;
  std::vector<std::optional<double>> pred;   // [day*m + j] flattened lazily
  std::vector<std::optional<double>> width;
};

int cmd_metrics(const CommonOpts& o, const std::string& forecast_path,
                bool with_baselines, std::vector<double> threshold_qs,
                double width_factor) {
  RunConfig cfg = resolve(o);
  if (cfg.data_path.empty())
    throw std::invalid_argument("metrics: --data is required");
  Panel panel = load_panel_csv(cfg.data_path);
  const int T = panel.n_days();
  const int m = panel.n_series();
  auto obs = observed_logrv(panel, cfg.rv);
  std::map<std::string, int> did, sid;
  for (int t = 0; t < T; ++t) did[panel.dates[t]] = t;
  for (int j = 0; j < m; ++j) sid[panel.series[j].id] = j;

  auto flat = [m](int t, int j) { return t * m + j; };
  std::map<std::string, std::pair<std::vector<std::optional<double>>,
                                  std::vector<std::optional<double>>>>
      models;  // name -> (pred, width)
  auto& full = models["full"];
  full.first.assign(T * m, std::nullopt);
  full.second.assign(T * m, std::nullopt);
  {
    csv::Table t = csv::read_table(forecast_path);
    for (const auto& r : t.rows) {
      auto dit = did.find(r[0]);
      auto sit = sid.find(r[1]);
      if (dit == did.end() || sit == sid.end()) continue;
      const int idx = flat(dit->second, sit->second);
      full.first[idx] = std::stod(r[2]);
      full.second[idx] = std::stod(r[4]) - std::stod(r[3]);
    }
  }

  if (with_baselines) {
    auto& tm1 = models["t-1"];
    auto& har = models["har"];
    auto& plain = models["plain"];
    for (auto* mdl : {&tm1, &har, &plain}) {
      mdl->first.assign(T * m, std::nullopt);
      mdl->second.assign(T * m, std::nullopt);
    }
    for (int j = 0; j < m; ++j) {
      std::vector<std::optional<double>> obs_j(T);
      for (int t = 0; t < T; ++t) obs_j[t] = obs[t][j];
      BaselineStream p = persistence_baseline(obs_j);
      BaselineStream h =
          ls_baseline(har_features(panel.series[j], cfg.rv, true), obs_j);
      for (int t = 0; t < T; ++t) {
        tm1.first[flat(t, j)] = p.pred[t];
        har.first[flat(t, j)] = h.pred[t];
        har.second[flat(t, j)] = h.width[t];
      }
    }
    RunConfig plain_cfg = cfg;
    plain_cfg.features.har = false;
    plain_cfg.features.leverage = false;
    plain_cfg.features.ohlc = false;
    plain_cfg.parents.enabled = false;
    RunResult pr = run_pipeline(panel, plain_cfg.pipeline());
    for (const auto& r : pr.forecasts) {
      const int idx = flat(did[r.date], sid[r.id]);
      plain.first[idx] = r.mean;
      plain.second[idx] = r.hi - r.lo;
    }
  }

  fs::create_directories(cfg.out_dir);
  csv::Writer wcsv(cfg.out_dir + "/report.csv");
  wcsv.row({"model", "metric", "filter", "threshold_q", "value"});
  std::ostringstream txt;

  // point metrics: median over series
  txt << "point metrics (median over series)\n";
  txt << "  model      mad      rmse     r2       mz\n";
  for (auto& [name, md] : models) {
    std::vector<double> mads, rmses, r2s, mzs;
    for (int j = 0; j < m; ++j) {
      std::vector<double> pv, ov;
      for (int t = 0; t < T; ++t) {
        const auto& p = md.first[flat(t, j)];
        if (p && obs[t][j]) {
          pv.push_back(*p);
          ov.push_back(*obs[t][j]);
        }
      }
      if (pv.size() < 30) continue;
      PointMetrics pm = point_metrics(pv, ov);
      mads.push_back(pm.mad);
      rmses.push_back(pm.rmse);
      if (pm.mz_defined) {
        r2s.push_back(pm.r2);
        mzs.push_back(pm.mz);
      }
    }
    if (mads.empty()) continue;
    const double mad = median(mads), rmse = median(rmses);
    const double r2 = r2s.empty() ? 0 : median(r2s);
    const double mz = mzs.empty() ? 0 : median(mzs);
    char line[160];
    std::snprintf(line, sizeof(line), "  %-9s %-8.4f %-8.4f %-8.4f %-8.4f\n",
                  name.c_str(), mad, rmse, r2, mz);
    txt << line;
    wcsv.row({name, "median_adv", "", "", csv::fmt(mad)});
    wcsv.row({name, "median_rmse", "", "", csv::fmt(rmse)});
    wcsv.row({name, "median_r2", "", "", csv::fmt(r2)});
    wcsv.row({name, "mz", "", "", mzs.empty() ? "NA" : csv::fmt(mz)});
  }

  // coverage tables on pooled days, fixed width across models per row
  for (MoveFilter filter : {MoveFilter::Abs, MoveFilter::Positive}) {
    const char* fname = filter == MoveFilter::Abs ? "abs" : "positive";
    txt << "\ncoverage (" << fname << " moves)\n";
    txt << "  thresh_q  model     mean_move  width     pct_in   n\n";
    for (double q : threshold_qs) {
      // pooled |move| quantile defines the threshold value
      std::vector<double> mv_pool;
      for (int j = 0; j < m; ++j)
        for (int t = 1; t < T; ++t)
          if (obs[t][j] && obs[t - 1][j]) {
            double mvv = *obs[t][j] - *obs[t - 1][j];
            mv_pool.push_back(filter == MoveFilter::Abs ? std::abs(mvv) : mvv);
          }
      if (mv_pool.empty()) continue;
      const double thr = quantile(mv_pool, q);
      for (auto& [name, md] : models) {
        std::vector<double> pv, wv, ov, mvv;
        for (int j = 0; j < m; ++j)
          for (int t = 1; t < T; ++t) {
            const auto& p = md.first[flat(t, j)];
            const auto& wd = md.second[flat(t, j)];
            if (!p || !wd || !obs[t][j] || !obs[t - 1][j]) continue;
            pv.push_back(*p);
            wv.push_back(*wd);
            ov.push_back(*obs[t][j]);
            mvv.push_back(*obs[t][j] - *obs[t - 1][j]);
          }
        if (pv.empty()) continue;
        // target width: just under twice the mean selected move
        std::vector<double> sel_moves;
        for (size_t i = 0; i < mvv.size(); ++i) {
          const double v = filter == MoveFilter::Abs ? std::abs(mvv[i]) : mvv[i];
          if (v >= thr) sel_moves.push_back(std::abs(mvv[i]));
        }
        if (sel_moves.empty()) continue;
        const double target = width_factor * mean_of(sel_moves);
        CiRow row = ci_coverage(pv, wv, ov, mvv, filter, thr, target);
        if (row.omitted) {
          wcsv.row({name, "pct_in", fname, csv::fmt(q), "NA"});
          continue;
        }
        char line[200];
        std::snprintf(line, sizeof(line),
                      "  %-9.2f %-9s %-10.4f %-9.4f %-8.2f %d\n", q,
                      name.c_str(), row.mean_move, row.mean_width, row.pct_in,
                      row.n);
        txt << line;
        wcsv.row({name, "mean_move", fname, csv::fmt(q), csv::fmt(row.mean_move)});
        wcsv.row({name, "interval_size", fname, csv::fmt(q), csv::fmt(row.mean_width)});
        wcsv.row({name, "pct_in", fname, csv::fmt(q), csv::fmt(row.pct_in)});
      }
    }
  }
  std::ofstream(cfg.out_dir + "/report.txt") << txt.str();
  std::cout << txt.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled dynamic linear models for multi-frequency volatility"};
  app.require_subcommand(1);

  CommonOpts sim_o, run_o, var_o, bt_o, met_o;
  int kstep = 0;
  double var_rho = 0.98;
  int var_window = 180;
  std::string coef_path, target_mode = "series";
  double bt_threshold = -1.0;
  std::string forecast_path;
  bool with_baselines = false;
  std::vector<double> threshold_qs = {0.0, 0.5, 0.75, 0.9};
  double width_factor = 1.9;

  CLI::App* c_sim = app.add_subcommand("simulate", "generate a synthetic panel CSV");
  add_common(c_sim, sim_o);

  CLI::App* c_run = app.add_subcommand("run", "run the full day-by-day pipeline");
  add_common(c_run, run_o);
  c_run->add_option("--kstep", kstep, "emit a recursive k-step forecast from the final state");

  CLI::App* c_var = app.add_subcommand("variogram", "rescaled RV vs return lag per series");
  add_common(c_var, var_o);
  c_var->add_option("--rho", var_rho, "exponential decay");
  c_var->add_option("--window", var_window, "price window length");

  CLI::App* c_bt = app.add_subcommand("backtest", "change-point signals and EW portfolio");
  add_common(c_bt, bt_o);
  c_bt->add_option("--coefficients", coef_path, "coefficient dump from `run`")->required();
  c_bt->add_option("--target", target_mode, "series | market | index:<csv>");
  c_bt->add_option("--threshold", bt_threshold, "signal-sum threshold");

  CLI::App* c_met = app.add_subcommand("metrics", "forecast-quality report");
  add_common(c_met, met_o);
  c_met->add_option("--forecasts", forecast_path, "forecasts.csv from `run`")->required();
  c_met->add_flag("--baselines", with_baselines, "include t-1, HAR and plain comparators");
  c_met->add_option("--threshold-quantiles", threshold_qs, "move-size quantile rows")->take_all();
  c_met->add_option("--width-factor", width_factor, "interval target as a multiple of the mean move");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_sim->parsed()) return cmd_simulate(sim_o);
    if (c_run->parsed()) return cmd_run(run_o, kstep);
    if (c_var->parsed()) return cmd_variogram(var_o, var_rho, var_window);
    if (c_bt->parsed()) return cmd_backtest(bt_o, coef_path, target_mode, bt_threshold);
    if (c_met->parsed())
      return cmd_metrics(met_o, forecast_path, with_baselines, threshold_qs,
                         width_factor);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
