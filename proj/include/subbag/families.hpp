#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "subbag/data_source.hpp"
#include "subbag/linalg.hpp"

namespace subbag {

/// An estimating-equation family psi_theta(z).
///
/// Second derivatives use the blocked d x d^2 layout
///   d2psi(i, j*d + l) = d^2 psi_i / (d theta_j d theta_l),
/// so that d2psi * (a kron b) = sum_{j,l} d^2 psi / (d theta_j d theta_l) a_j b_l.
class PsiFamily {
 public:
  virtual ~PsiFamily() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim_theta() const = 0;
  virtual std::size_t dim_z() const = 0;
  /// Solving the estimating equations on a subsample gives an unbiased estimator.
  virtual bool is_unbiased() const = 0;

  /// Adds psi, dpsi and d2psi at (theta, z) into the non-null outputs, which
  /// must already have the right shape.
  virtual void accumulate(const Vector& theta, std::span<const double> z, Vector* psi,
                          Matrix* dpsi, Matrix* d2psi) const = 0;

  /// B_theta such that E(theta_hat_k) - theta = B_theta / k + o(1/k), when known.
  virtual std::optional<Vector> analytic_bias(const Vector&) const { return std::nullopt; }

  /// Applied to every plain subsample solution (identity unless overridden).
  virtual Vector finalize(const Vector& theta, std::size_t /*k*/) const { return theta; }

  /// False when finalize already removes the bias, so bc modes would double-correct.
  virtual bool supports_bias_correction() const { return true; }

  /// Overwrites the non-null outputs with the values at (theta, z).
  void evaluate(const Vector& theta, std::span<const double> z, Vector* psi, Matrix* dpsi,
                Matrix* d2psi) const;
};

class MeanFamily final : public PsiFamily {
 public:
  explicit MeanFamily(std::size_t p);
  std::string name() const override { return "mean"; }
  std::size_t dim_theta() const override { return p_; }
  std::size_t dim_z() const override { return p_; }
  bool is_unbiased() const override { return true; }
  void accumulate(const Vector& theta, std::span<const double> z, Vector* psi, Matrix* dpsi,
                  Matrix* d2psi) const override;
  std::optional<Vector> analytic_bias(const Vector&) const override {
    return Vector::Zero(static_cast<Eigen::Index>(p_));
  }

 private:
  std::size_t p_;
};

/// theta = (mu, vech(Sigma)); psi = (z - mu, vech((z - mu)(z - mu)') - vech(Sigma)).
class MeanCovFamily : public PsiFamily {
 public:
  explicit MeanCovFamily(std::size_t p);
  std::string name() const override { return "meancov"; }
  std::size_t dim_theta() const override { return p_ + p_ * (p_ + 1) / 2; }
  std::size_t dim_z() const override { return p_; }
  bool is_unbiased() const override { return false; }
  void accumulate(const Vector& theta, std::span<const double> z, Vector* psi, Matrix* dpsi,
                  Matrix* d2psi) const override;
  /// (0, -vech(Sigma)).
  std::optional<Vector> analytic_bias(const Vector& theta) const override;

 protected:
  std::size_t p_;
};

/// Covariance part rescaled by k/(k - 1) after the solve.
class MeanCovUnbiasedFamily final : public MeanCovFamily {
 public:
  using MeanCovFamily::MeanCovFamily;
  std::string name() const override { return "meancov-unbiased"; }
  bool is_unbiased() const override { return true; }
  std::optional<Vector> analytic_bias(const Vector& theta) const override {
    return Vector::Zero(theta.size());
  }
  Vector finalize(const Vector& theta, std::size_t k) const override;
  bool supports_bias_correction() const override { return false; }
};

/// z = (y, x); psi = x (y - x'beta).
class OlsFamily final : public PsiFamily {
 public:
  explicit OlsFamily(std::size_t n_features);
  std::string name() const override { return "ols"; }
  std::size_t dim_theta() const override { return d_; }
  std::size_t dim_z() const override { return d_ + 1; }
  bool is_unbiased() const override { return true; }
  void accumulate(const Vector& theta, std::span<const double> z, Vector* psi, Matrix* dpsi,
                  Matrix* d2psi) const override;
  std::optional<Vector> analytic_bias(const Vector&) const override {
    return Vector::Zero(static_cast<Eigen::Index>(d_));
  }

 private:
  std::size_t d_;
};

/// z = (y, x), y in {0, 1}; psi = x (y - sigmoid(x'theta)). No closed-form bias.
class LogisticFamily final : public PsiFamily {
 public:
  explicit LogisticFamily(std::size_t n_features);
  std::string name() const override { return "logistic"; }
  std::size_t dim_theta() const override { return d_; }
  std::size_t dim_z() const override { return d_ + 1; }
  bool is_unbiased() const override { return false; }
  void accumulate(const Vector& theta, std::span<const double> z, Vector* psi, Matrix* dpsi,
                  Matrix* d2psi) const override;

  /// Per-record log-likelihood y*eta - log(1 + exp(eta)); psi is its gradient.
  double log_likelihood(const Vector& theta, std::span<const double> z) const;

 private:
  std::size_t d_;
};

/// Builds a family by CLI name: mean | meancov | meancov-unbiased | ols | logistic.
/// `record_cols` is the width of the records the family will see.
std::unique_ptr<PsiFamily> make_family(const std::string& name, std::size_t record_cols);
const std::vector<std::string>& family_names();

/// Whether the named family reads records as (y, x...).
bool family_uses_response(const std::string& name);

struct PsiSums {
  Vector psi;
  Matrix dpsi;
};

/// Sum over the block of psi and dpsi at theta.
PsiSums eval_psi_sum(const PsiFamily& family, const BlockView& block, const Vector& theta);

/// Lower-triangular columns of a square matrix, stacked.
Vector vech(const Matrix& a);
/// Inverse of vech for a symmetric matrix.
Matrix unvech(const Vector& v, std::size_t p);
/// L_p with vech(A) = L_p vec(A).
Matrix elimination_matrix(std::size_t p);
/// Position of (row, col), row >= col, inside vech.
std::size_t vech_index(std::size_t row, std::size_t col, std::size_t p);

}  // namespace subbag
