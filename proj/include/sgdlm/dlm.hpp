#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "sgdlm/linalg.hpp"
#include "sgdlm/special.hpp"

namespace sgdlm {

struct DiscountConfig {
  double delta_phi = 0.99;    // endogenous-block discount
  double delta_gamma = 0.95;  // parent-block discount
  double beta_lambda = 0.95;  // precision (volatility) discount

  void validate() const {
    auto chk = [](double d, const char* name) {
      if (!(d > 0.0 && d <= 1.0))
        throw std::invalid_argument(std::string("discounts.") + name +
                                    " must lie in (0,1]");
    };
    chk(delta_phi, "delta_phi");
    chk(delta_gamma, "delta_gamma");
    chk(beta_lambda, "beta_lambda");
  }
};

// Posterior Normal-Gamma. Conventions: theta | lambda ~ N(m, C/(s lambda)),
// lambda ~ Gamma(n/2, rate n s / 2), so E[lambda] = 1/s.
struct DlmState {
  Eigen::VectorXd m;
  Eigen::MatrixXd c;
  double n = 0;
  double s = 1;

  int dim() const { return static_cast<int>(m.size()); }
};

// Evolved prior with the same conventions; r_dof is the discounted dof.
struct PriorState {
  Eigen::VectorXd a;
  Eigen::MatrixXd r_mat;
  double r_dof = 0;
  double s = 1;

  int dim() const { return static_cast<int>(a.size()); }
};

// One conjugate filtering step.
inline DlmState kalman_update(const PriorState& prior, const Eigen::VectorXd& f,
                              double y) {
  if (f.size() != prior.a.size())
    throw std::invalid_argument("kalman_update: feature/state dim mismatch");
  const double e = y - f.dot(prior.a);
  const Eigen::VectorXd rf = prior.r_mat * f;
  const double q = prior.s + f.dot(rf);
  if (!(q > 0.0))
    throw std::runtime_error("kalman_update: non-positive predictive scale q");
  const Eigen::VectorXd gain = rf / q;
  const double z = (prior.r_dof + e * e / q) / (prior.r_dof + 1.0);
  DlmState post;
  post.m = prior.a + gain * e;
  post.c = (prior.r_mat - gain * gain.transpose() * q) * z;
  symmetrize(post.c);
  post.n = prior.r_dof + 1.0;
  post.s = z * prior.s;
  return post;
}

// Discount evolution to the next prior. g_diag is the diagonal of the state
// evolution matrix (down-set decay entries; ones elsewhere). The first
// n_endo coefficients form the endogenous block; the rest are parents.
// R = B + W reduces to a congruence diag(v) B diag(v) with v_i = 1/sqrt(d),
// so positive semi-definiteness is preserved exactly.
inline PriorState evolve(const DlmState& post, const Eigen::VectorXd& g_diag,
                         const DiscountConfig& cfg, int n_endo) {
  cfg.validate();
  const int p = post.dim();
  if (g_diag.size() != p)
    throw std::invalid_argument("evolve: G diagonal dim mismatch");
  if (n_endo < 0 || n_endo > p)
    throw std::invalid_argument("evolve: invalid endogenous block size");
  Eigen::VectorXd v(p);
  for (int i = 0; i < p; ++i)
    v[i] = 1.0 / std::sqrt(i < n_endo ? cfg.delta_phi : cfg.delta_gamma);
  PriorState prior;
  prior.a = g_diag.cwiseProduct(post.m);
  const Eigen::MatrixXd b =
      g_diag.asDiagonal() * post.c * g_diag.asDiagonal();
  prior.r_mat = v.asDiagonal() * b * v.asDiagonal();
  symmetrize(prior.r_mat);
  prior.r_dof = cfg.beta_lambda * post.n;
  prior.s = post.s;
  return prior;
}

struct Forecast {
  double mean = 0;
  double q = 0;    // predictive scale (variance up to the t factor)
  double dof = 0;

  double half_width(double prob) const {
    return student_t_central_halfwidth(dof, prob) * std::sqrt(q);
  }
};

// One-step predictive: Student-t with mean F'a, scale sqrt(q), dof r.
inline Forecast forecast_one(const PriorState& prior, const Eigen::VectorXd& f) {
  if (f.size() != prior.a.size())
    throw std::invalid_argument("forecast_one: feature/state dim mismatch");
  Forecast fc;
  fc.mean = f.dot(prior.a);
  fc.q = prior.s + f.dot(prior.r_mat * f);
  if (!(fc.q > 0.0))
    throw std::runtime_error("forecast_one: non-positive predictive scale");
  fc.dof = prior.r_dof;
  return fc;
}

}  // namespace sgdlm
