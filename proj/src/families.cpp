#include "subbag/families.hpp"

#include <cmath>

namespace subbag {

void PsiFamily::evaluate(const Vector& theta, std::span<const double> z, Vector* psi,
                         Matrix* dpsi, Matrix* d2psi) const {
  const auto d = static_cast<Eigen::Index>(dim_theta());
  if (psi) psi->setZero(d);
  if (dpsi) dpsi->setZero(d, d);
  if (d2psi) d2psi->setZero(d, d * d);
  accumulate(theta, z, psi, dpsi, d2psi);
}

MeanFamily::MeanFamily(std::size_t p) : p_(p) { require(p >= 1, "mean family needs p >= 1"); }

void MeanFamily::accumulate(const Vector& theta, std::span<const double> z, Vector* psi,
                            Matrix* dpsi, Matrix*) const {
  if (psi) {
    for (std::size_t i = 0; i < p_; ++i) (*psi)(i) += z[i] - theta(i);
  }
  if (dpsi) dpsi->diagonal().array() -= 1.0;
}

MeanCovFamily::MeanCovFamily(std::size_t p) : p_(p) {
  require(p >= 1, "meancov family needs p >= 1");
}

void MeanCovFamily::accumulate(const Vector& theta, std::span<const double> z, Vector* psi,
                               Matrix* dpsi, Matrix* d2psi) const {
  const std::size_t p = p_;
  const auto d = static_cast<Eigen::Index>(dim_theta());
  Vector e(p);
  for (std::size_t i = 0; i < p; ++i) e(i) = z[i] - theta(i);
  for (std::size_t b = 0; b < p; ++b) {
    for (std::size_t a = b; a < p; ++a) {
      const auto r = static_cast<Eigen::Index>(p + vech_index(a, b, p));
      if (psi) (*psi)(r) += e(a) * e(b) - theta(r);
      if (dpsi) {
        (*dpsi)(r, a) -= e(b);
        (*dpsi)(r, b) -= e(a);
        (*dpsi)(r, r) -= 1.0;
      }
      if (d2psi) {
        (*d2psi)(r, b * d + a) += 1.0;
        (*d2psi)(r, a * d + b) += 1.0;
      }
    }
  }
  if (psi) psi->head(p) += e;
  if (dpsi) dpsi->topLeftCorner(p, p).diagonal().array() -= 1.0;
}

std::optional<Vector> MeanCovFamily::analytic_bias(const Vector& theta) const {
  Vector b = Vector::Zero(theta.size());
  b.tail(theta.size() - p_) = -theta.tail(theta.size() - p_);
  return b;
}

Vector MeanCovUnbiasedFamily::finalize(const Vector& theta, std::size_t k) const {
  require(k >= 2, "meancov-unbiased needs subsamples of size >= 2");
  Vector out = theta;
  out.tail(theta.size() - p_) *= static_cast<double>(k) / static_cast<double>(k - 1);
  return out;
}

OlsFamily::OlsFamily(std::size_t n_features) : d_(n_features) {
  require(n_features >= 1, "ols needs at least one regressor column");
}

void OlsFamily::accumulate(const Vector& theta, std::span<const double> z, Vector* psi,
                           Matrix* dpsi, Matrix*) const {
  const Eigen::Map<const Vector> x(z.data() + 1, static_cast<Eigen::Index>(d_));
  if (psi) *psi += x * (z[0] - x.dot(theta));
  if (dpsi) dpsi->noalias() -= x * x.transpose();
}

LogisticFamily::LogisticFamily(std::size_t n_features) : d_(n_features) {
  require(n_features >= 1, "logistic needs at least one regressor column");
}

namespace {

double sigmoid(double eta) {
  if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

}  // namespace

void LogisticFamily::accumulate(const Vector& theta, std::span<const double> z, Vector* psi,
                                Matrix* dpsi, Matrix* d2psi) const {
  const auto d = static_cast<Eigen::Index>(d_);
  const Eigen::Map<const Vector> x(z.data() + 1, d);
  const double s = sigmoid(x.dot(theta));
  const double w = s * (1.0 - s);
  if (psi) *psi += x * (z[0] - s);
  if (dpsi) dpsi->noalias() -= w * x * x.transpose();
  if (d2psi) {
    const double c = -w * (1.0 - 2.0 * s);
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index l = 0; l < d; ++l) d2psi->col(j * d + l) += (c * x(j) * x(l)) * x;
    }
  }
}

double LogisticFamily::log_likelihood(const Vector& theta, std::span<const double> z) const {
  const Eigen::Map<const Vector> x(z.data() + 1, static_cast<Eigen::Index>(d_));
  const double eta = x.dot(theta);
  // log(1 + e^eta) without overflow
  const double softplus = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
  return z[0] * eta - softplus;
}

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"mean", "meancov", "meancov-unbiased", "ols",
                                              "logistic"};
  return names;
}

bool family_uses_response(const std::string& name) { return name == "ols" || name == "logistic"; }

std::unique_ptr<PsiFamily> make_family(const std::string& name, std::size_t record_cols) {
  if (name == "mean") return std::make_unique<MeanFamily>(record_cols);
  if (name == "meancov") return std::make_unique<MeanCovFamily>(record_cols);
  if (name == "meancov-unbiased") return std::make_unique<MeanCovUnbiasedFamily>(record_cols);
  if (name == "ols" || name == "logistic") {
    require(record_cols >= 2, name + " records need a response and at least one regressor");
    if (name == "ols") return std::make_unique<OlsFamily>(record_cols - 1);
    return std::make_unique<LogisticFamily>(record_cols - 1);
  }
  throw Error(ErrorKind::usage,
              "unknown family '" + name + "' (expected mean, meancov, meancov-unbiased, ols, logistic)");
}

PsiSums eval_psi_sum(const PsiFamily& family, const BlockView& block, const Vector& theta) {
  const auto d = static_cast<Eigen::Index>(family.dim_theta());
  if (block.cols != family.dim_z() || theta.size() != d) {
    throw Error(ErrorKind::usage, family.name() + ": block has " + std::to_string(block.cols) +
                                      " columns and theta " + std::to_string(theta.size()) +
                                      " entries, expected " + std::to_string(family.dim_z()) +
                                      " and " + std::to_string(d));
  }
  PsiSums sums{Vector::Zero(d), Matrix::Zero(d, d)};
  for (std::size_t i = 0; i < block.rows; ++i) {
    family.accumulate(theta, block.row(i), &sums.psi, &sums.dpsi, nullptr);
  }
  if (!sums.psi.allFinite() || !sums.dpsi.allFinite()) {
    // locate the first offending record for the message
    Vector psi(d);
    Matrix dpsi(d, d);
    for (std::size_t i = 0; i < block.rows; ++i) {
      family.evaluate(theta, block.row(i), &psi, &dpsi, nullptr);
      if (!psi.allFinite() || !dpsi.allFinite()) {
        throw Error(ErrorKind::non_finite,
                    family.name() + ": non-finite psi at block row " + std::to_string(i));
      }
    }
    throw Error(ErrorKind::non_finite, family.name() + ": psi sum overflowed");
  }
  return sums;
}

std::size_t vech_index(std::size_t row, std::size_t col, std::size_t p) {
  return col * p - col * (col - 1) / 2 + (row - col);
}

Vector vech(const Matrix& a) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::usage, "vech needs a square matrix");
  const auto p = static_cast<std::size_t>(a.rows());
  Vector out(static_cast<Eigen::Index>(p * (p + 1) / 2));
  for (std::size_t b = 0; b < p; ++b) {
    for (std::size_t r = b; r < p; ++r) out(vech_index(r, b, p)) = a(r, b);
  }
  return out;
}

Matrix unvech(const Vector& v, std::size_t p) {
  require(static_cast<std::size_t>(v.size()) == p * (p + 1) / 2, "unvech size mismatch");
  Matrix out(p, p);
  for (std::size_t b = 0; b < p; ++b) {
    for (std::size_t r = b; r < p; ++r) out(r, b) = out(b, r) = v(vech_index(r, b, p));
  }
  return out;
}

Matrix elimination_matrix(std::size_t p) {
  Matrix l = Matrix::Zero(p * (p + 1) / 2, p * p);
  for (std::size_t b = 0; b < p; ++b) {
    for (std::size_t r = b; r < p; ++r) l(vech_index(r, b, p), r + b * p) = 1.0;
  }
  return l;
}

}  // namespace subbag
