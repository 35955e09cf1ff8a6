#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sgdlm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline void symmetrize(MatrixXd& m) {
  m = (0.5 * (m + m.transpose())).eval();
}

inline double min_eigenvalue(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("min_eigenvalue: eigensolver failed");
  return es.eigenvalues().minCoeff();
}

// Diagonal shrinkage toward positive definiteness:
//   M' = (1 - g) M + g diag(M)+
// with the smallest g on a fixed ladder whose result clears the floor
// 1e-10 * trace / p. An all-zero input maps to a tiny identity.
inline MatrixXd shrink_to_pd(const MatrixXd& m_in) {
  const int p = static_cast<int>(m_in.rows());
  MatrixXd m = m_in;
  symmetrize(m);
  VectorXd dpos = m.diagonal().cwiseMax(0.0);
  const double dtrace = dpos.sum();
  if (dtrace <= 0.0) return MatrixXd::Identity(p, p) * 1e-12;
  const double floor = 1e-10 * dtrace / static_cast<double>(p);
  constexpr double ladder[] = {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  for (double g : ladder) {
    MatrixXd cand = (1.0 - g) * m;
    cand.diagonal() += g * dpos;
    if (min_eigenvalue(cand) >= floor) return cand;
  }
  MatrixXd cand = MatrixXd::Zero(p, p);
  cand.diagonal() = dpos.cwiseMax(floor);
  return cand;
}

// Lower Cholesky factor of a (possibly shrunk) covariance. Throws with the
// caller-supplied label on failure.
inline MatrixXd safe_cholesky(const MatrixXd& m, const std::string& label) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("cholesky failed after shrinkage: " + label);
  return llt.matrixL();
}

}  // namespace sgdlm
