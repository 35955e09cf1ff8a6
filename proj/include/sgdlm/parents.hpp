#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "sgdlm/linalg.hpp"

namespace sgdlm {

struct ParentConfig {
  bool enabled = true;
  int n_core = 5;
  int n_up = 5;
  int n_down = 5;
  int dt = 10;     // maintenance cadence, probation length and decay horizon
  int n_max = 5;   // candidates proposed per maintenance round
  // the precision ranking needs an effective window well above the universe
  // size, so the Wishart discounts sit closer to one than the DLM blocks
  double delta_w = 0.995;
  double beta_w = 0.995;
  double new_coef_var = 1e-4;  // prior variance of a freshly added parent

  void validate() const {
    if (n_core < 0 || n_up < 0 || n_down < 0 || n_max < 0)
      throw std::invalid_argument("parents: negative capacity");
    if (dt <= 0) throw std::invalid_argument("parents.dt must be positive");
    if (!(delta_w > 0.0 && delta_w <= 1.0) || !(beta_w > 0.0 && beta_w <= 1.0))
      throw std::invalid_argument("parents: discount outside (0,1]");
    if (!(new_coef_var > 0.0))
      throw std::invalid_argument("parents.new_coef_var must be positive");
  }
};

// Discount Wishart filter over the cross-section: D accumulates shrunk
// outer products, h tracks an effective sample count.
class WishartState {
 public:
  WishartState(int m, double delta_w, double beta_w)
      : d_(Eigen::MatrixXd::Identity(m, m)),
        h_(static_cast<double>(m) + 2.0),
        delta_w_(delta_w),
        beta_w_(beta_w) {
    if (!(delta_w_ > 0.0 && delta_w_ <= 1.0) || !(beta_w_ > 0.0 && beta_w_ <= 1.0))
      throw std::invalid_argument("wishart: discount outside (0,1]");
  }

  void update(const Eigen::VectorXd& y) {
    if (y.size() != d_.rows())
      throw std::invalid_argument("wishart: observation dim mismatch");
    d_ = delta_w_ * d_ + y * y.transpose();
    symmetrize(d_);
    h_ = beta_w_ * h_ + 1.0;
  }

  // Precision estimate (h - m) D^-1 via shrink-then-invert; the scalar
  // factor is floored at 1 so entry rankings never flip sign.
  Eigen::MatrixXd precision() const {
    const int m = static_cast<int>(d_.rows());
    Eigen::MatrixXd dp = shrink_to_pd(d_);
    Eigen::LLT<Eigen::MatrixXd> llt(dp);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("wishart: D singular after shrinkage");
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(m, m));
    symmetrize(inv);
    return std::max(h_ - static_cast<double>(m), 1.0) * inv;
  }

  const Eigen::MatrixXd& d() const { return d_; }
  double h() const { return h_; }

 private:
  Eigen::MatrixXd d_;
  double h_;
  double delta_w_;
  double beta_w_;
};

struct ParentMember {
  int series = -1;
  int age = 0;  // up: days since entry; down: completed decay steps
};

struct ParentSets {
  std::vector<ParentMember> core;
  std::vector<ParentMember> up;
  std::vector<ParentMember> down;

  bool contains(int series) const {
    auto in = [series](const std::vector<ParentMember>& v) {
      for (const auto& p : v)
        if (p.series == series) return true;
      return false;
    };
    return in(core) || in(up) || in(down);
  }
  int total() const {
    return static_cast<int>(core.size() + up.size() + down.size());
  }
};

// Top-n_max series by absolute precision element against j, excluding j
// itself and anything already in the sets, truncated to the remaining
// up-set capacity. `eligible[i]` gates candidacy (missing data, not yet
// started, ...).
inline std::vector<int> propose_candidates(const Eigen::MatrixXd& precision,
                                           int j, const ParentConfig& cfg,
                                           const ParentSets& sets,
                                           const std::vector<bool>& eligible) {
  const int m = static_cast<int>(precision.rows());
  const int room =
      std::min(cfg.n_max, cfg.n_up - static_cast<int>(sets.up.size()));
  if (room <= 0) return {};
  std::vector<std::pair<double, int>> ranked;
  for (int i = 0; i < m; ++i) {
    if (i == j || !eligible[i] || sets.contains(i)) continue;
    ranked.emplace_back(std::abs(precision(j, i)), i);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> out;
  for (const auto& [score, idx] : ranked) {
    if (static_cast<int>(out.size()) >= room) break;
    out.push_back(idx);
  }
  return out;
}

struct PromoteResult {
  ParentSets sets;
  std::vector<int> dropped;  // retired past down-set capacity; remove at once
};

// Promotion/retirement round. Up members with age >= dt compete with the
// core on the supplied signal-to-noise scores; the top n_core stay or enter,
// the rest retire to the down set (oldest-scored overflow is dropped
// outright). Ties break on series id for reproducibility.
inline PromoteResult promote_and_retire(
    const ParentSets& sets, const std::vector<std::pair<int, double>>& scores,
    const ParentConfig& cfg) {
  auto score_of = [&scores](int series) {
    for (const auto& [id, sc] : scores)
      if (id == series) return sc;
    throw std::invalid_argument("promote_and_retire: missing score for member");
  };
  PromoteResult res;
  std::vector<std::pair<double, int>> pool;  // (score, series)
  for (const auto& mb : sets.core) pool.emplace_back(score_of(mb.series), mb.series);
  for (const auto& mb : sets.up) {
    if (mb.age >= cfg.dt)
      pool.emplace_back(score_of(mb.series), mb.series);
    else
      res.sets.up.push_back(mb);
  }
  std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> retired;
  for (size_t k = 0; k < pool.size(); ++k) {
    if (static_cast<int>(k) < cfg.n_core)
      res.sets.core.push_back({pool[k].second, 0});
    else
      retired.push_back(pool[k].second);
  }
  res.sets.down = sets.down;
  for (int series : retired) {
    if (static_cast<int>(res.sets.down.size()) < cfg.n_down)
      res.sets.down.push_back({series, 0});
    else
      res.dropped.push_back(series);
  }
  return res;
}

// G-diagonal decay entry while a retired coefficient winds down:
// 1 - 1/(dt + 1 - l) for decay step l in [1, dt]; zero at l = dt.
inline double downset_decay_entry(int l, int dt) {
  if (l < 1 || l > dt)
    throw std::invalid_argument("downset_decay_entry: step outside [1, dt]");
  return 1.0 - 1.0 / static_cast<double>(dt + 1 - l);
}

}  // namespace sgdlm
