#include "vimo/marginalization.hpp"

#include <Eigen/Dense>

#include "vimo/errors.hpp"

namespace vimo {

SchurReduced schurMarginalize(const MatX& H, const VecX& g, int marg_dim) {
  const int n = static_cast<int>(H.rows());
  const int r = n - marg_dim;
  if (marg_dim <= 0 || r < 0) {
    throw ValidationError("schurMarginalize: bad partition");
  }
  const MatX Hmm = 0.5 * (H.topLeftCorner(marg_dim, marg_dim) +
                          H.topLeftCorner(marg_dim, marg_dim).transpose());
  const MatX Hmr = H.topRightCorner(marg_dim, r);
  const MatX Hrm = H.bottomLeftCorner(r, marg_dim);
  const VecX gm = g.head(marg_dim);

  Eigen::SelfAdjointEigenSolver<MatX> es(Hmm);
  const double lmax = es.eigenvalues().cwiseAbs().maxCoeff();
  VecX inv = VecX::Zero(marg_dim);
  for (int i = 0; i < marg_dim; ++i) {
    if (es.eigenvalues()(i) > 1e-10 * std::max(lmax, 1e-300)) {
      inv(i) = 1.0 / es.eigenvalues()(i);
    }
  }
  const MatX Hmm_pinv =
      es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();

  SchurReduced out;
  out.H = H.bottomRightCorner(r, r) - Hrm * Hmm_pinv * Hmr;
  out.H = 0.5 * (out.H + out.H.transpose()).eval();
  out.g = g.tail(r) - Hrm * Hmm_pinv * gm;
  return out;
}

PriorFactor priorFromInformation(const MatX& H, const VecX& g) {
  const int n = static_cast<int>(H.rows());
  // Eigen convention: A = P' L D L' P, so J0 = D^(1/2) L' P satisfies
  // J0' J0 = H, and r0 = D^(-1/2) L^-1 P g satisfies J0' r0 = g.
  Eigen::LDLT<MatX> ldlt(MatX(0.5 * (H + H.transpose())));
  const VecX d = ldlt.vectorD();
  const double dmax = std::max(d.cwiseAbs().maxCoeff(), 1e-300);

  const MatX l = ldlt.matrixL();
  const MatX p_dense = ldlt.transpositionsP() * MatX::Identity(n, n);
  const MatX lt_p = l.transpose() * p_dense;
  const VecX pg = ldlt.transpositionsP() * g;
  const VecX linv_pg = l.triangularView<Eigen::UnitLower>().solve(pg);

  std::vector<int> keep;
  keep.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (d(i) > 1e-12 * dmax) keep.push_back(i);
  }

  PriorFactor out;
  out.J0.resize(static_cast<int>(keep.size()), n);
  out.r0.resize(static_cast<int>(keep.size()));
  for (size_t k = 0; k < keep.size(); ++k) {
    const int i = keep[k];
    const double sq = std::sqrt(d(i));
    out.J0.row(static_cast<int>(k)) = sq * lt_p.row(i);
    out.r0(static_cast<int>(k)) = linv_pg(i) / sq;
  }
  return out;
}

VecX solveNormalEquations(const MatX& H, const VecX& g, double lambda, double diag_floor) {
  MatX damped = H;
  for (int i = 0; i < damped.rows(); ++i) {
    damped(i, i) += lambda * std::max(H(i, i), diag_floor);
  }
  Eigen::LDLT<MatX> ldlt(damped);
  if (ldlt.info() != Eigen::Success) {
    throw NumericalError("solveNormalEquations: LDLT factorization failed");
  }
  VecX dx = ldlt.solve(-g);
  if (!dx.allFinite()) {
    throw NumericalError("solveNormalEquations: non-finite solution");
  }
  return dx;
}

}  // namespace vimo
