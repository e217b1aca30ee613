#include "subbag/solver.hpp"

#include <cmath>
#include <functional>

namespace subbag {

std::string to_string(BcMode mode) {
  switch (mode) {
    case BcMode::none: return "none";
    case BcMode::bc1: return "bc1";
    case BcMode::bc2: return "bc2";
    case BcMode::bc3: return "bc3";
  }
  return "unknown";
}

BcMode parse_bc_mode(const std::string& text) {
  if (text == "none") return BcMode::none;
  if (text == "bc1") return BcMode::bc1;
  if (text == "bc2") return BcMode::bc2;
  if (text == "bc3") return BcMode::bc3;
  throw Error(ErrorKind::usage, "unknown bias-correction mode '" + text +
                                    "' (expected none, bc1, bc2, bc3)");
}

namespace {

void check_block(const PsiFamily& family, const BlockView& block) {
  if (block.rows == 0) throw Error(ErrorKind::usage, "empty block");
  if (block.cols != family.dim_z()) {
    throw Error(ErrorKind::usage, family.name() + " expects records of width " +
                                      std::to_string(family.dim_z()) + ", got " +
                                      std::to_string(block.cols));
  }
}

// Residual and Jacobian at theta.
using EvalFn = std::function<void(const Vector&, Vector&, Matrix&)>;

SubsampleEstimate damped_newton(const EvalFn& eval, Vector theta, const SolveConfig& config,
                                std::size_t k) {
  require(config.tol > 0 && config.max_iter >= 1, "solver needs tol > 0 and max_iter >= 1");
  Vector r;
  Matrix jac;
  eval(theta, r, jac);
  double norm = r.norm();

  SubsampleEstimate out;
  Vector candidate;
  Vector r_candidate;
  Matrix jac_candidate;
  for (int iter = 1; iter <= config.max_iter && !out.converged; ++iter) {
    if (r.lpNorm<Eigen::Infinity>() == 0.0) {
      checked_lu(jac, "Jacobian");  // an exact root must still be isolated
      out.converged = true;
      break;
    }
    const Vector step = checked_lu(jac, "Jacobian").solve(r);
    double t = 1.0;
    for (int h = 0;; ++h) {
      candidate = theta - t * step;
      bool ok = true;
      try {
        eval(candidate, r_candidate, jac_candidate);
      } catch (const Error& e) {
        if (!e.is_numerical()) throw;
        ok = false;
      }
      const double cand_norm = ok ? r_candidate.norm() : HUGE_VAL;
      if (cand_norm < norm || cand_norm == 0.0 || h == config.max_halvings) {
        if (!ok) {
          throw Error(ErrorKind::non_convergence,
                      "step halving could not reach a finite residual");
        }
        break;
      }
      t *= 0.5;
    }
    theta.swap(candidate);
    r.swap(r_candidate);
    jac.swap(jac_candidate);
    norm = r.norm();
    out.iterations = iter;
    if (t * step.lpNorm<Eigen::Infinity>() <= config.tol) out.converged = true;
  }

  out.theta = std::move(theta);
  out.residual = r.lpNorm<Eigen::Infinity>();
  if (!out.converged) {
    throw Error(ErrorKind::non_convergence,
                "no convergence within " + std::to_string(config.max_iter) + " iterations");
  }
  if (out.residual > static_cast<double>(k) * config.residual_tol) {
    throw Error(ErrorKind::non_convergence,
                "step converged but residual " + std::to_string(out.residual) +
                    " exceeds the tolerance");
  }
  return out;
}

Vector start_point(const PsiFamily& family, const SolveConfig& config) {
  const auto d = static_cast<Eigen::Index>(family.dim_theta());
  if (!config.start) return Vector::Zero(d);
  require(config.start->size() == d, "initial value has the wrong length");
  return *config.start;
}

}  // namespace

SubsampleEstimate newton_solve(const PsiFamily& family, const BlockView& block,
                               const SolveConfig& config) {
  check_block(family, block);
  auto eval = [&](const Vector& theta, Vector& r, Matrix& jac) {
    auto sums = eval_psi_sum(family, block, theta);
    r = std::move(sums.psi);
    jac = std::move(sums.dpsi);
  };
  return damped_newton(eval, start_point(family, config), config, block.rows);
}

Matrix v_hat(const PsiFamily& family, const BlockView& block, const Vector& theta) {
  check_block(family, block);
  return eval_psi_sum(family, block, theta).dpsi / static_cast<double>(block.rows);
}

Matrix v2_hat(const PsiFamily& family, const BlockView& block, const Vector& theta) {
  check_block(family, block);
  const auto d = static_cast<Eigen::Index>(family.dim_theta());
  Matrix v2 = Matrix::Zero(d, d * d);
  for (std::size_t i = 0; i < block.rows; ++i) {
    family.accumulate(theta, block.row(i), nullptr, nullptr, &v2);
  }
  return v2 / static_cast<double>(block.rows);
}

BiasEstimate bias_terms(const PsiFamily& family, const BlockView& block, const Vector& theta) {
  check_block(family, block);
  const auto d = static_cast<Eigen::Index>(family.dim_theta());
  const double k = static_cast<double>(block.rows);

  BiasEstimate out;
  out.v = v_hat(family, block, theta);
  const auto lu = checked_lu(out.v, "V_hat");

  Vector psi(d);
  Matrix dpsi(d, d);
  Matrix v2 = Matrix::Zero(d, d * d);
  Vector first = Vector::Zero(d);
  Matrix outer = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < block.rows; ++i) {
    psi.setZero();
    dpsi.setZero();
    family.accumulate(theta, block.row(i), &psi, &dpsi, &v2);
    const Vector u = lu.solve(psi);
    first.noalias() += (dpsi - out.v) * u;
    outer.noalias() += u * u.transpose();
  }
  v2 /= k;
  outer /= k;
  // sum_i u_i kron u_i equals vec(sum_i u_i u_i') in the blocked layout
  out.bracket = -first / k + 0.5 * v2 * vec(outer);
  out.b = -lu.solve(out.bracket);
  if (!out.b.allFinite()) throw Error(ErrorKind::non_finite, "non-finite bias estimate");
  return out;
}

Vector b_hat(const PsiFamily& family, const BlockView& block, const Vector& theta) {
  return bias_terms(family, block, theta).b;
}

void check_bc_mode(const PsiFamily& family, BcMode mode) {
  if (mode == BcMode::none) return;
  if (!family.supports_bias_correction()) {
    throw Error(ErrorKind::usage, family.name() +
                                      " is already bias-free by construction; use --bc none");
  }
  if (mode == BcMode::bc1) {
    const Vector probe = Vector::Zero(static_cast<Eigen::Index>(family.dim_theta()));
    if (!family.analytic_bias(probe)) {
      throw Error(ErrorKind::no_closed_form_bias,
                  family.name() + " has no closed-form bias; bc1 is unavailable (use bc2 or bc3)");
    }
  }
}

SubsampleEstimate solve_bc(const PsiFamily& family, const BlockView& block, BcMode mode,
                           const SolveConfig& config) {
  require(mode != BcMode::none, "solve_bc needs a bias-correction mode");
  check_bc_mode(family, mode);
  SubsampleEstimate plain = newton_solve(family, block, config);
  const double k = static_cast<double>(block.rows);

  if (mode == BcMode::bc1) {
    plain.theta -= *family.analytic_bias(plain.theta) / k;
  } else if (mode == BcMode::bc2) {
    plain.theta -= b_hat(family, block, plain.theta) / k;
  } else {
    auto eval = [&](const Vector& theta, Vector& r, Matrix& jac) {
      auto sums = eval_psi_sum(family, block, theta);
      const auto bias = bias_terms(family, block, theta);
      r = sums.psi - bias.bracket;
      jac = std::move(sums.dpsi);
    };
    SubsampleEstimate corrected = damped_newton(eval, plain.theta, config, block.rows);
    corrected.iterations += plain.iterations;
    corrected.bc_mode = mode;
    return corrected;
  }
  plain.bc_mode = mode;
  return plain;
}

SubsampleEstimate estimate_subsample(const PsiFamily& family, const BlockView& block, BcMode mode,
                                     const SolveConfig& config) {
  if (mode != BcMode::none) return solve_bc(family, block, mode, config);
  SubsampleEstimate est = newton_solve(family, block, config);
  est.theta = family.finalize(est.theta, block.rows);
  return est;
}

}  // namespace subbag
