#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subbag/simulation.hpp"

namespace subbag {

inline constexpr double kMaxEnumeratedSubsets = 1e6;

/// Average of the subsample estimator over every size-k subset of the data,
/// visited in lexicographic order.
Vector complete_u_oracle(const PsiFamily& family, const BlockView& data, std::uint64_t k_n,
                         BcMode mode = BcMode::none, const SolveConfig& config = {});

struct PopulationMoments {
  Vector theta0;
  Matrix sigma;  // Var psi
  Matrix v;      // E dpsi
  Matrix v2;     // E d2psi, d x d^2
  Matrix h;      // E[psi' kron dpsi], d x d^2
  Vector b;      // -V^-1 { -H vec(V^-1) + 1/2 V2 (V^-1 kron V^-1) vec(Sigma) }
  Matrix xi;     // V^-1 Sigma V^-T
  bool analytic = false;
};

/// Assembles b and xi from the other fields.
void complete_moments(PopulationMoments& moments);

/// Moments at the DGP's true parameter: analytic for the mean family under
/// normal_mean, Monte Carlo over mc_size fresh records otherwise.
PopulationMoments population_moments(const PsiFamily& family, const DgpSpec& dgp,
                                     std::size_t mc_size, std::uint64_t seed);

/// The second-order expansion term of one subsample, evaluated at moments.theta0.
Vector expansion_term(const PsiFamily& family, const BlockView& block,
                      const PopulationMoments& moments);

struct UStatDiagnostics {
  std::uint64_t n = 0;
  std::uint64_t k_n = 0;
  std::uint64_t m_n = 0;
  double zeta_1 = 0.0;       // analytic, unit variance
  double zeta_k = 0.0;
  double zeta_1_mc = 0.0;    // Monte Carlo
  double zeta_k_mc = 0.0;
  double a_n = 0.0;          // (k/N) zeta_k / (k zeta_1)
  double predicted_var = 0.0;
  double empirical_var = 0.0;
  std::size_t mc_size = 0;
};

/// Scalar mean kernel over standard normal data: analytic and Monte Carlo zetas,
/// the two-term variance prediction, and the variance of the subbagging mean
/// over mc_size independent (data, plan) draws.
UStatDiagnostics ustat_variance_check(std::uint64_t n, std::uint64_t k_n, std::uint64_t m_n,
                                      std::size_t mc_size, std::uint64_t seed);

struct DerivativeReport {
  std::string family;
  std::size_t trials = 0;
  std::size_t dpsi_failures = 0;
  std::size_t d2psi_failures = 0;
  double max_dpsi_error = 0.0;   // relative, with a floor of 1 on the scale
  double max_d2psi_error = 0.0;
  bool passed() const { return dpsi_failures == 0 && d2psi_failures == 0; }
};

/// Central finite differences of psi against dpsi and of dpsi against d2psi at
/// random (theta, z).
DerivativeReport derivative_check(const PsiFamily& family, std::size_t trials, std::uint64_t seed,
                                  double dpsi_tol = 1e-6, double d2psi_tol = 1e-5);

}  // namespace subbag
