// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "sgdlm/engine.hpp"
#include "sgdlm/metrics.hpp"
#include "sgdlm/runner.hpp"
#include "sgdlm/signals.hpp"
#include "sgdlm/sim.hpp"

namespace {

using namespace sgdlm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void report(int criterion, const std::string& name, bool pass,
            const std::string& detail) {
  std::printf("[CRITERION %2d] %-28s %s  (%s)\n", criterion, name.c_str(),
              pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

struct CoefStats {
  // per series: time-mean of summed |exo|, summed |endo|, and per-name means
  std::vector<double> exo_mean, endo_mean;
  std::vector<std::map<std::string, double>> name_mean;
};

CoefStats aggregate_coefficients(const RunResult& res, int burn_in) {
  std::map<std::string, int> did, sid;
  for (size_t t = 0; t < res.dates.size(); ++t) did[res.dates[t]] = (int)t;
  for (size_t j = 0; j < res.ids.size(); ++j) sid[res.ids[j]] = (int)j;
  const int m = (int)res.ids.size();
  std::vector<double> exo(m, 0), endo(m, 0);
  std::vector<int> days(m, 0);
  std::vector<std::map<std::string, std::pair<double, int>>> acc(m);
  std::vector<int> last_day(m, -1);
  for (const auto& row : res.coefficients) {
    const int t = did[row.date];
    if (t < burn_in) continue;
    const int j = sid[row.id];
    if (t != last_day[j]) {
      ++days[j];
      last_day[j] = t;
    }
    const bool is_parent = row.name.rfind("pa:", 0) == 0;
    (is_parent ? exo[j] : endo[j]) += std::abs(row.value);
    if (!is_parent) {
      auto& slot = acc[j][row.name];
      slot.first += std::abs(row.value);
      ++slot.second;
    }
  }
  CoefStats out;
  for (int j = 0; j < m; ++j) {
    if (days[j] == 0) continue;
    out.exo_mean.push_back(exo[j] / days[j]);
    out.endo_mean.push_back(endo[j] / days[j]);
    std::map<std::string, double> nm;
    for (const auto& [name, slot] : acc[j])
      nm[name] = slot.first / std::max(slot.second, 1);
    out.name_mean.push_back(std::move(nm));
  }
  return out;
}

TEST(Acceptance, Criterion1_NullEnvironment) {
  const auto t0 = std::chrono::steady_clock::now();
  SimSpec spec;
  spec.generator = Generator::NullRandomWalk;
  spec.n_series = 30;
  spec.n_days = 1500;
  spec.seed = 42;
  SimOutput sim = generate(spec);
  PipelineConfig pc;  // defaults throughout
  RunResult res = run_pipeline(sim.panel, pc);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  CoefStats stats = aggregate_coefficients(res, 250);
  ASSERT_GT(stats.exo_mean.size(), 0u);
  double exo = 0, endo = 0;
  for (double v : stats.exo_mean) exo += v;
  for (double v : stats.endo_mean) endo += v;
  exo /= stats.exo_mean.size();
  endo /= stats.endo_mean.size();
  const double ratio = exo / endo;

  int rv_d_wins = 0;
  for (const auto& nm : stats.name_mean) {
    std::string best;
    double best_v = -1;
    for (const auto& [name, v] : nm)
      if (v > best_v) {
        best_v = v;
        best = name;
      }
    if (best == "rv_d") ++rv_d_wins;
  }
  const double win_frac =
      rv_d_wins / static_cast<double>(stats.name_mean.size());

  const bool pass = ratio < 0.1 && win_frac >= 0.8 && elapsed < 300.0;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "exo/endo=%.4f (<0.1), rv_d-largest=%.0f%% (>=80%%), %.0fs "
                "(<300s)",
                ratio, 100 * win_frac, elapsed);
  report(1, "null environment", pass, detail);
  EXPECT_LT(ratio, 0.1);
  EXPECT_GE(win_frac, 0.8);
  EXPECT_LT(elapsed, 300.0);
}

TEST(Acceptance, Criterion2_ConjugacyOracle) {
  DiscountConfig disc;
  disc.delta_phi = 1.0;
  disc.delta_gamma = 1.0;
  disc.beta_lambda = 1.0;
  PriorState prior;
  prior.a = VectorXd::Zero(1);
  prior.r_mat = MatrixXd::Identity(1, 1);
  prior.r_dof = 3.0;
  prior.s = 1.0;
  const PriorState prior0 = prior;
  std::mt19937_64 gen(4242);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> xs, ys;
  DlmState post;
  for (int t = 0; t < 200; ++t) {
    const double x = 1.0 + 0.5 * n01(gen);
    const double y = 0.8 * x + 0.4 * n01(gen);
    xs.push_back(x);
    ys.push_back(y);
    VectorXd f(1);
    f << x;
    post = kalman_update(prior, f, y);
    prior = evolve(post, VectorXd::Ones(1), disc, 1);
  }
  // batch Normal-Gamma regression posterior
  const double sigma0 = prior0.r_mat(0, 0) / prior0.s;
  double a_acc = 1.0 / sigma0, b_acc = prior0.a[0] / sigma0;
  double yty = prior0.a[0] * prior0.a[0] / sigma0;
  for (size_t i = 0; i < xs.size(); ++i) {
    a_acc += xs[i] * xs[i];
    b_acc += xs[i] * ys[i];
    yty += ys[i] * ys[i];
  }
  const double m_n = b_acc / a_acc;
  const double n_batch = prior0.r_dof + 200.0;
  const double beta_n =
      prior0.r_dof * prior0.s / 2.0 + 0.5 * (yty - m_n * m_n * a_acc);
  const double s_batch = 2.0 * beta_n / n_batch;
  const double c_batch = s_batch / a_acc;

  const double em = std::abs(post.m[0] - m_n) / std::abs(m_n);
  const double ec = std::abs(post.c(0, 0) - c_batch) / c_batch;
  const double en = std::abs(post.n - n_batch) / n_batch;
  const double es = std::abs(post.s - s_batch) / s_batch;
  const double worst = std::max({em, ec, en, es});
  const bool pass = worst < 1e-8;
  char detail[120];
  std::snprintf(detail, sizeof(detail), "max rel err %.2e (<1e-8)", worst);
  report(2, "conjugacy oracle", pass, detail);
  EXPECT_LT(worst, 1e-8);
}

TEST(Acceptance, Criterion3_VbSelfConsistency) {
  MatrixXd c(3, 3);
  c << 0.50, 0.10, 0.05,
       0.10, 0.40, 0.08,
       0.05, 0.08, 0.30;
  VectorXd m(3);
  m << 1.2, -0.8, 0.5;
  const double n0 = 12.0, s0 = 0.7;
  DlmState st;
  st.m = m;
  st.c = c;
  st.n = n0;
  st.s = s0;
  const int n_mc = 5000;
  RngSplitter rng(7);
  SampleBatch b = sample_posteriors({&st}, n_mc, rng, 0, {"gen"});
  b.weights = VectorXd::Constant(n_mc, 1.0 / n_mc);
  VbResult vb = vb_decouple(b.thetas[0], b.lambdas.col(0), b.weights, n0);
  const double tol = 5.0 / std::sqrt(static_cast<double>(n_mc));
  const double em = (vb.state.m - m).norm() / m.norm();
  const double ec = (vb.state.c - c).norm() / c.norm();
  const double en = std::abs(vb.state.n - n0) / n0;
  const double es = std::abs(vb.state.s - s0) / s0;
  const bool pass = !vb.fallback && em < tol && ec < tol && en < tol &&
                    es < tol && vb.residual < 1e-10;
  char detail[200];
  std::snprintf(detail, sizeof(detail),
                "rel err m=%.4f C=%.4f n=%.4f s=%.4f (tol %.4f), residual %.1e",
                em, ec, en, es, tol, vb.residual);
  report(3, "vb self-consistency", pass, detail);
  EXPECT_FALSE(vb.fallback);
  EXPECT_LT(em, tol);
  EXPECT_LT(ec, tol);
  EXPECT_LT(en, tol);
  EXPECT_LT(es, tol);
  EXPECT_LT(vb.residual, 1e-10);
}

Eigen::SparseMatrix<double> to_sparse(const MatrixXd& m) {
  Eigen::SparseMatrix<double> s(m.rows(), m.cols());
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j)
      if (m(i, j) != 0.0) t.emplace_back(i, j, m(i, j));
  s.setFromTriplets(t.begin(), t.end());
  s.makeCompressed();
  return s;
}

TEST(Acceptance, Criterion4_RecouplingIdentities) {
  bool uniform_ok = true, pointmass_ok = true, det_ok = true;
  {
    const int n = 500;
    std::vector<Eigen::SparseMatrix<double>> mats(
        n, to_sparse(MatrixXd::Identity(8, 8)));
    RecoupleResult r = recouple_weights(mats);
    for (int i = 0; i < n; ++i)
      uniform_ok = uniform_ok && r.weights[i] == 1.0 / n;
    uniform_ok = uniform_ok && r.entropy == 0.0;
  }
  {
    const int n = 128;
    std::vector<Eigen::SparseMatrix<double>> mats;
    for (int i = 0; i < n; ++i) {
      MatrixXd g = MatrixXd::Identity(4, 4);
      if (i != 17) g *= 1e-200;
      mats.push_back(to_sparse(g));
    }
    RecoupleResult r = recouple_weights(mats);
    pointmass_ok = r.weights[17] == 1.0 &&
                   r.entropy == std::log(static_cast<double>(n));
  }
  double worst_det = 0.0;
  {
    std::mt19937_64 gen(31337);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int rep = 0; rep < 100; ++rep) {
      MatrixXd gamma = MatrixXd::Zero(10, 10);
      for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j)
          if (i != j && u(gen) > 0.15) gamma(i, j) = u(gen);
      const MatrixXd img = MatrixXd::Identity(10, 10) - gamma;
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      auto s = to_sparse(img);
      lu.compute(s);
      ASSERT_EQ(lu.info(), Eigen::Success);
      const double sparse_det =
          std::exp(lu.logAbsDeterminant());
      const double dense_det = std::abs(img.partialPivLu().determinant());
      worst_det = std::max(
          worst_det, std::abs(sparse_det - dense_det) /
                         std::max(1e-300, std::abs(dense_det)));
    }
    det_ok = worst_det < 1e-8;
  }
  const bool pass = uniform_ok && pointmass_ok && det_ok;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "uniform H==0 %s, pointmass H==logN %s, det err %.1e (<1e-8)",
                uniform_ok ? "yes" : "no", pointmass_ok ? "yes" : "no",
                worst_det);
  report(4, "recoupling identities", pass, detail);
  EXPECT_TRUE(uniform_ok);
  EXPECT_TRUE(pointmass_ok);
  EXPECT_TRUE(det_ok);
}

TEST(Acceptance, Criterion5_Calibration) {
  // two decoupled series; observations drawn from the model's own
  // one-step predictive; engine forecasts scored on the next draw. The
  // self-generated loop needs static parameters: with beta_lambda < 1 the
  // scale estimate ratchets on its own heavy-tailed draws, and a lagged
  // observation regressor couples the loop explosively, so the series
  // regress on an exogenous unit-variance signal instead.
  EngineConfig cfg;
  cfg.parents.enabled = false;
  cfg.discounts.delta_phi = 1.0;
  cfg.discounts.delta_gamma = 1.0;
  cfg.discounts.beta_lambda = 1.0;
  cfg.seed = 11;
  Engine engine(2, {"offset", "exog"}, cfg);
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int warm = 1000, scored = 5000;
  int inside = 0, total = 0;
  std::vector<double> preds, obs_list;
  for (int t = 0; t < warm + scored; ++t) {
    std::vector<std::optional<VectorXd>> endo(2);
    for (int j = 0; j < 2; ++j) {
      VectorXd x(2);
      x << 1.0, n01(gen);
      endo[j] = x;
    }
    auto fc = engine.forecast(endo, t);
    std::vector<std::optional<double>> y(2);
    for (int j = 0; j < 2; ++j) {
      double draw;
      if (engine.started(j)) {
        const Forecast f = forecast_one(engine.prior(j), *endo[j]);
        std::gamma_distribution<double> chi2(f.dof / 2.0, 2.0 / f.dof);
        draw = f.mean + std::sqrt(f.q) * n01(gen) / std::sqrt(chi2(gen));
      } else {
        draw = n01(gen);
      }
      y[j] = draw;
      if (t >= warm && fc[j].valid) {
        ++total;
        if (draw >= fc[j].lo && draw <= fc[j].hi) ++inside;
        preds.push_back(fc[j].mean);
        obs_list.push_back(draw);
      }
    }
    engine.step(y, endo, t);
  }
  const double coverage = 100.0 * inside / total;
  const OlsFit mz = ols(preds, obs_list);
  const bool pass =
      coverage >= 87.0 && coverage <= 93.0 && mz.slope >= 0.95 && mz.slope <= 1.05;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "coverage %.2f%% (87-93), MZ slope %.3f (0.95-1.05), n=%d",
                coverage, mz.slope, total);
  report(5, "predictive calibration", pass, detail);
  EXPECT_GE(coverage, 87.0);
  EXPECT_LE(coverage, 93.0);
  EXPECT_GE(mz.slope, 0.95);
  EXPECT_LE(mz.slope, 1.05);
}

TEST(Acceptance, Criterion6_HarRecovery) {
  SimSpec spec;
  spec.generator = Generator::HarKnown;
  spec.n_series = 3;
  spec.n_days = 2000;
  spec.seed = 2025;
  spec.har_sigma_eps = 0.02;
  SimOutput sim = generate(spec);
  PipelineConfig pc;  // full model defaults (parents on)
  pc.rv = spec.har_rv;  // regress on the definitions the world was built on
  RunResult res = run_pipeline(sim.panel, pc);

  // de-standardize: beta_raw = beta_model * scale_obs / scale_feature
  std::map<std::string, int> did, sid;
  for (size_t t = 0; t < res.dates.size(); ++t) did[res.dates[t]] = (int)t;
  for (size_t j = 0; j < res.ids.size(); ++j) sid[res.ids[j]] = (int)j;
  const int m = (int)res.ids.size();
  // scale[day][series][name]
  std::vector<std::map<std::string, double>> obs_scale(res.dates.size() * m);
  for (const auto& row : res.scales)
    obs_scale[did[row.date] * m + sid[row.id]][row.name] = row.scale;

  std::vector<std::map<std::string, std::pair<double, int>>> acc(m);
  for (const auto& row : res.coefficients) {
    const int t = did[row.date];
    if (t < 1000) continue;
    if (row.name.rfind("rv_", 0) != 0) continue;
    const int j = sid[row.id];
    const auto& scales = obs_scale[t * m + j];
    auto so = scales.find("obs");
    auto sf = scales.find(row.name);
    if (so == scales.end() || sf == scales.end()) continue;
    auto& slot = acc[j][row.name];
    slot.first += row.value * so->second / sf->second;
    ++slot.second;
  }
  auto median_over_series = [&](const std::string& name) {
    std::vector<double> v;
    for (int j = 0; j < m; ++j) {
      auto it = acc[j].find(name);
      if (it != acc[j].end() && it->second.second > 0)
        v.push_back(it->second.first / it->second.second);
    }
    return median(v);
  };
  const double bd = median_over_series("rv_d");
  const double bw = median_over_series("rv_w");
  const double bm = median_over_series("rv_m");
  const bool pass = std::abs(bd - 0.4) < 0.15 && std::abs(bw - 0.3) < 0.15 &&
                    std::abs(bm - 0.2) < 0.15;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "beta_d=%.3f (0.4), beta_w=%.3f (0.3), beta_m=%.3f (0.2), "
                "+/-0.15",
                bd, bw, bm);
  report(6, "HAR recovery", pass, detail);
  EXPECT_NEAR(bd, 0.4, 0.15);
  EXPECT_NEAR(bw, 0.3, 0.15);
  EXPECT_NEAR(bm, 0.2, 0.15);
}

TEST(Acceptance, Criterion7_VariogramFlatness) {
  const int n_paths = 10000, window = 180;
  RngSplitter rng(555);
  std::array<double, 5> acc{};
  for (int path = 0; path < n_paths; ++path) {
    auto gen = rng.stream(1, path);
    std::normal_distribution<double> n01(0.0, 1.0);
    PriceSeries s;
    s.id = "p";
    s.close.emplace_back(100.0);
    double logp = std::log(100.0);
    for (int i = 0; i < window + 6; ++i) {
      logp += 0.01 * n01(gen);
      s.close.emplace_back(std::exp(logp));
    }
    auto res = variogram(s, 0.98, window, (int)s.close.size() - 1);
    ASSERT_FALSE(res.degenerate);
    for (int l = 0; l < 5; ++l) acc[l] += res.rv[l];
  }
  double max_dev = 0;
  for (int l = 0; l < 5; ++l)
    max_dev = std::max(max_dev, std::abs(acc[l] / acc[0] - 1.0));

  int shrunk = 0;
  for (int path = 0; path < n_paths; ++path) {
    auto gen = rng.stream(2, path);
    std::normal_distribution<double> n01(0.0, 1.0);
    PriceSeries s;
    s.id = "p";
    s.close.emplace_back(100.0);
    double logp = std::log(100.0), r = 0.0;
    for (int i = 0; i < window + 6; ++i) {
      r = -0.5 * r + 0.01 * n01(gen);
      logp += r;
      s.close.emplace_back(std::exp(logp));
    }
    auto res = variogram(s, 0.98, window, (int)s.close.size() - 1);
    if (res.rv[4] < res.rv[0]) ++shrunk;
  }
  const double frac = shrunk / static_cast<double>(n_paths);
  const bool pass = max_dev < 0.05 && frac >= 0.95;
  char detail[140];
  std::snprintf(detail, sizeof(detail),
                "iid max dev %.4f (<0.05), mean-reverting RV5<RV1 in %.1f%% "
                "(>=95%%)",
                max_dev, 100 * frac);
  report(7, "variogram flatness", pass, detail);
  EXPECT_LT(max_dev, 0.05);
  EXPECT_GE(frac, 0.95);
}

TEST(Acceptance, Criterion8_DownsetDecay) {
  // a retired parent's coefficient follows G entries 1 - 1/(dt+1-l) and is
  // exactly zero after dt evolves
  const int dt = 10;
  DiscountConfig disc;
  DlmState post;
  post.m = VectorXd::Zero(2);
  post.m << 0.3, 0.7;  // endo coef, retired parent coef
  post.c = MatrixXd::Identity(2, 2) * 0.05;
  post.n = 20.0;
  post.s = 1.0;
  bool entries_ok = true;
  for (int l = 1; l <= dt; ++l) {
    const double g = downset_decay_entry(l, dt);
    entries_ok = entries_ok && g >= 0.0 && g <= 1.0;
    VectorXd gd(2);
    gd << 1.0, g;
    PriorState prior = evolve(post, gd, disc, 1);
    post.m = prior.a;
    post.c = prior.r_mat;
    post.n = prior.r_dof;
    post.s = prior.s;
  }
  const bool exact_zero = post.m[1] == 0.0;
  const bool endo_alive = post.m[0] != 0.0;
  const bool pass = exact_zero && endo_alive && entries_ok;
  char detail[120];
  std::snprintf(detail, sizeof(detail),
                "coef after %d evolves = %.1e (exactly 0), G in [0,1] %s", dt,
                post.m[1], entries_ok ? "yes" : "no");
  report(8, "down-set decay", pass, detail);
  EXPECT_TRUE(exact_zero);
  EXPECT_TRUE(endo_alive);
  EXPECT_TRUE(entries_ok);
}

TEST(Acceptance, Criterion9_AntiLookaheadReplay) {
  SimSpec spec;
  spec.generator = Generator::FactorDriven;
  spec.n_series = 8;
  spec.n_days = 460;
  spec.seed = 77;
  SimOutput sim = generate(spec);
  PipelineConfig pc;
  pc.engine.n_mc = 150;
  pc.engine.parents.dt = 5;
  RunResult full = run_pipeline(sim.panel, pc);

  const int keep = 380;
  Panel trunc = sim.panel;
  trunc.dates.resize(keep);
  for (auto& s : trunc.series) {
    s.close.resize(keep);
    if (!s.ohlc.empty()) s.ohlc.resize(keep);
  }
  RunResult part = run_pipeline(trunc, pc);

  bool identical = part.forecasts.size() <= full.forecasts.size();
  size_t compared = 0;
  for (size_t i = 0; identical && i < part.forecasts.size(); ++i) {
    const auto& a = part.forecasts[i];
    const auto& b = full.forecasts[i];
    identical = a.date == b.date && a.id == b.id && a.mean == b.mean &&
                a.lo == b.lo && a.hi == b.hi;
    ++compared;
  }
  char detail[120];
  std::snprintf(detail, sizeof(detail),
                "%zu truncated-run forecast rows bit-identical", compared);
  report(9, "anti-lookahead replay", identical, detail);
  EXPECT_TRUE(identical);
  EXPECT_GT(compared, 0u);
}

TEST(Acceptance, Criterion10_FactorDrivenParents) {
  SimSpec spec;
  spec.generator = Generator::FactorDriven;
  spec.n_series = 10;  // driver + nine followers
  spec.n_days = 1200;
  spec.seed = 8;
  SimOutput sim = generate(spec);
  PipelineConfig pc;  // defaults
  RunResult res = run_pipeline(sim.panel, pc);

  std::map<std::string, int> did;
  for (size_t t = 0; t < res.dates.size(); ++t) did[res.dates[t]] = (int)t;
  const std::string driver_id = res.ids[0];
  const int burn = 400;
  const int T = (int)res.dates.size();
  std::vector<int> driver_core_count(T, 0);        // followers with driver in core
  std::vector<std::map<std::string, int>> in_driver_core_days;
  std::map<std::string, int> follower_days_in_driver_core;
  int post_days = T - burn;
  for (const auto& row : res.parents) {
    if (row.set != "core") continue;
    const int t = did[row.date];
    if (t < burn) continue;
    if (row.parent == driver_id && row.child != driver_id)
      ++driver_core_count[t];
    if (row.child == driver_id) ++follower_days_in_driver_core[row.parent];
  }
  int majority_days = 0;
  for (int t = burn; t < T; ++t)
    if (driver_core_count[t] >= 7) ++majority_days;
  const double frac_majority = majority_days / static_cast<double>(post_days);

  double worst_occupancy = 0;
  for (const auto& [id, days] : follower_days_in_driver_core)
    worst_occupancy =
        std::max(worst_occupancy, days / static_cast<double>(post_days));

  const bool pass = frac_majority > 0.5 && worst_occupancy < 0.5;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "driver in >=7/9 cores on %.0f%% of days (>50%%), max "
                "follower occupancy of driver core %.0f%% (<50%%)",
                100 * frac_majority, 100 * worst_occupancy);
  report(10, "factor-driven parents", pass, detail);
  EXPECT_GT(frac_majority, 0.5);
  EXPECT_LT(worst_occupancy, 0.5);
}

}  // namespace
