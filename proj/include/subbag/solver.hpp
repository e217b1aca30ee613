#pragma once

#include <optional>
#include <string>

#include "subbag/families.hpp"

namespace subbag {

enum class BcMode { none, bc1, bc2, bc3 };

std::string to_string(BcMode mode);
BcMode parse_bc_mode(const std::string& text);

struct SolveConfig {
  int max_iter = 100;
  double tol = 1e-10;              // on the infinity norm of the applied step
  int max_halvings = 30;
  double residual_tol = 1e-8;      // per record, on the infinity norm of the residual
  std::optional<Vector> start;     // zeros when empty
};

struct SubsampleEstimate {
  Vector theta;
  BcMode bc_mode = BcMode::none;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;           // infinity norm of the (corrected, for bc3) residual
};

/// Damped Newton for sum psi_theta(z_i) = 0 over the block.
SubsampleEstimate newton_solve(const PsiFamily& family, const BlockView& block,
                               const SolveConfig& config = {});

/// k^-1 sum dpsi at theta.
Matrix v_hat(const PsiFamily& family, const BlockView& block, const Vector& theta);
/// k^-1 sum d2psi at theta, d x d^2.
Matrix v2_hat(const PsiFamily& family, const BlockView& block, const Vector& theta);

/// Sample bias estimate B_hat(theta) and the pieces it is built from.
struct BiasEstimate {
  Matrix v;           // V_hat
  Vector bracket;     // the bracketed term, so that V_hat * b = -bracket
  Vector b;
};

BiasEstimate bias_terms(const PsiFamily& family, const BlockView& block, const Vector& theta);
Vector b_hat(const PsiFamily& family, const BlockView& block, const Vector& theta);

/// bc1: theta_hat - B(theta_hat)/k with the analytic bias.
/// bc2: theta_hat - B_hat(theta_hat)/k.
/// bc3: root of sum psi + V_hat B_hat, by Newton steps on the uncorrected
///      Jacobian starting from theta_hat.
SubsampleEstimate solve_bc(const PsiFamily& family, const BlockView& block, BcMode mode,
                           const SolveConfig& config = {});

/// The subsample estimator used by the engine: plain solve plus the family's
/// finalize step for BcMode::none, otherwise solve_bc.
SubsampleEstimate estimate_subsample(const PsiFamily& family, const BlockView& block, BcMode mode,
                                     const SolveConfig& config = {});

/// Rejects bias-correction modes the family cannot honour.
void check_bc_mode(const PsiFamily& family, BcMode mode);

}  // namespace subbag
