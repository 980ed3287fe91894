#pragma once

#include "vimo/so3.hpp"

namespace vimo {

struct SchurReduced {
  MatX H;  // retained-block information
  VecX g;  // retained-block gradient
};

/// Eliminate the first marg_dim variables of the quadratic model
/// cost(dx) = dx' H dx + 2 g' dx + const. The marginal block is inverted
/// with an eigenvalue pseudo-inverse so gauge-free directions are tolerated.
SchurReduced schurMarginalize(const MatX& H, const VecX& g, int marg_dim);

struct PriorFactor {
  MatX J0;
  VecX r0;
};

/// Square-root factor with J0' J0 = H and J0' r0 = g; rows belonging to
/// (numerically) zero pivots are dropped. H must be symmetric PSD.
PriorFactor priorFromInformation(const MatX& H, const VecX& g);

/// Damped normal-equation step: solves (H + lambda * D) dx = -g with
/// D = diag(max(H_ii, floor)). Throws NumericalError when the solve fails.
VecX solveNormalEquations(const MatX& H, const VecX& g, double lambda, double diag_floor = 1e-9);

}  // namespace vimo
