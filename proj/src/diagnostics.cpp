#include "subbag/diagnostics.hpp"

#include <cmath>
#include <random>

namespace subbag {

Vector complete_u_oracle(const PsiFamily& family, const BlockView& data, std::uint64_t k_n,
                         BcMode mode, const SolveConfig& config) {
  const std::uint64_t n = data.rows;
  require(k_n >= 1 && k_n <= n, "complete-U oracle needs 1 <= k <= N");
  const double count = binomial(n, k_n);
  if (count > kMaxEnumeratedSubsets) {
    throw Error(ErrorKind::usage, "complete-U oracle would enumerate " + std::to_string(count) +
                                      " subsets (limit 1e6)");
  }
  const std::size_t p = data.cols;
  std::vector<std::uint64_t> idx(k_n);
  for (std::uint64_t i = 0; i < k_n; ++i) idx[i] = i;
  std::vector<double> values(k_n * p);
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(family.dim_theta()));
  std::uint64_t visited = 0;
  while (true) {
    for (std::uint64_t i = 0; i < k_n; ++i) {
      const auto row = data.row(idx[i]);
      std::copy(row.begin(), row.end(), values.begin() + i * p);
    }
    sum += estimate_subsample(family, BlockView{k_n, p, values}, mode, config).theta;
    ++visited;
    std::int64_t pos = static_cast<std::int64_t>(k_n) - 1;
    while (pos >= 0 && idx[pos] == n - k_n + static_cast<std::uint64_t>(pos)) --pos;
    if (pos < 0) break;
    ++idx[pos];
    for (std::uint64_t i = pos + 1; i < k_n; ++i) idx[i] = idx[i - 1] + 1;
  }
  return sum / static_cast<double>(visited);
}

void complete_moments(PopulationMoments& m) {
  const auto lu = checked_lu(m.v, "V");
  const Matrix v_inv = lu.inverse();
  const Vector inner = -m.h * vec(v_inv) + 0.5 * m.v2 * (kron(v_inv, v_inv) * vec(m.sigma));
  m.b = -lu.solve(inner);
  m.xi = v_inv * m.sigma * v_inv.transpose();
  m.xi = 0.5 * (m.xi + m.xi.transpose());
}

PopulationMoments population_moments(const PsiFamily& family, const DgpSpec& dgp,
                                     std::size_t mc_size, std::uint64_t seed) {
  PopulationMoments m;
  m.theta0 = true_parameter(family, dgp);
  const auto d = static_cast<Eigen::Index>(family.dim_theta());
  if (family.name() == "mean" && dgp.kind == DgpKind::normal_mean) {
    m.sigma = Matrix::Identity(d, d);
    m.v = -Matrix::Identity(d, d);
    m.v2 = Matrix::Zero(d, d * d);
    m.h = Matrix::Zero(d, d * d);
    m.analytic = true;
    complete_moments(m);
    return m;
  }
  require(mc_size >= 10000, "population moments need mc_size >= 1e4");
  DgpSpec big = dgp;
  big.n = mc_size;
  const MemorySource data = generate(big, seed);

  Vector psi(d);
  Matrix dpsi(d, d);
  Vector mean = Vector::Zero(d);
  Matrix outer = Matrix::Zero(d, d);
  m.v = Matrix::Zero(d, d);
  m.v2 = Matrix::Zero(d, d * d);
  m.h = Matrix::Zero(d, d * d);
  const auto view = data.view();
  for (std::size_t i = 0; i < view.rows; ++i) {
    psi.setZero();
    dpsi.setZero();
    family.accumulate(m.theta0, view.row(i), &psi, &dpsi, &m.v2);
    mean += psi;
    outer.noalias() += psi * psi.transpose();
    m.v += dpsi;
    for (Eigen::Index j = 0; j < d; ++j) m.h.middleCols(j * d, d) += psi(j) * dpsi;
  }
  const double count = static_cast<double>(view.rows);
  mean /= count;
  m.sigma = outer / count - mean * mean.transpose();
  m.v /= count;
  m.v2 /= count;
  m.h /= count;
  complete_moments(m);
  return m;
}

Vector expansion_term(const PsiFamily& family, const BlockView& block,
                      const PopulationMoments& moments) {
  const auto d = static_cast<Eigen::Index>(family.dim_theta());
  if (block.cols != family.dim_z() || moments.v.rows() != d) {
    throw Error(ErrorKind::usage, "expansion term: dimension mismatch");
  }
  const double root_k = std::sqrt(static_cast<double>(block.rows));
  Vector j = Vector::Zero(d);
  Matrix j1 = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < block.rows; ++i) {
    family.accumulate(moments.theta0, block.row(i), &j, &j1, nullptr);
  }
  j /= root_k;
  j1 = (j1 - static_cast<double>(block.rows) * moments.v) / root_k;
  const auto lu = checked_lu(moments.v, "V");
  const Vector u = lu.solve(j);
  const Matrix uu = u * u.transpose();
  return -lu.solve(-j1 * u + 0.5 * moments.v2 * vec(uu));
}

UStatDiagnostics ustat_variance_check(std::uint64_t n, std::uint64_t k_n, std::uint64_t m_n,
                                      std::size_t mc_size, std::uint64_t seed) {
  require(mc_size >= 2, "ustat check needs mc_size >= 2");
  UStatDiagnostics out;
  out.n = n;
  out.k_n = k_n;
  out.m_n = m_n;
  out.mc_size = mc_size;
  const double k = static_cast<double>(k_n);
  const double nn = static_cast<double>(n);
  out.zeta_1 = 1.0 / (k * k);
  out.zeta_k = 1.0 / k;
  out.a_n = (k / nn) * out.zeta_k / (k * out.zeta_1);
  out.predicted_var = 1.0 / nn + (1.0 - 1.0 / binomial(n, k_n)) / (k * static_cast<double>(m_n));

  // zeta_{1,k}: covariance of two kernels sharing one record; zeta_{k,k}: kernel variance
  Xoshiro256 rng(derive_seed(seed, ~std::uint64_t{0}));
  std::normal_distribution<double> normal;
  double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
  for (std::size_t t = 0; t < mc_size; ++t) {
    const double shared = normal(rng);
    double a = shared, b = shared;
    for (std::uint64_t i = 1; i < k_n; ++i) {
      a += normal(rng);
      b += normal(rng);
    }
    a /= k;
    b /= k;
    s1 += a;
    s2 += b;
    s11 += a * a;
    s22 += b * b;
    s12 += a * b;
  }
  const double mc = static_cast<double>(mc_size);
  out.zeta_1_mc = (s12 - s1 * s2 / mc) / (mc - 1);
  out.zeta_k_mc = 0.5 * ((s11 - s1 * s1 / mc) + (s22 - s2 * s2 / mc)) / (mc - 1);

  McConfig config;
  config.family = "mean";
  config.hyper.k_n = k_n;
  config.hyper.m_n = m_n;
  config.hyper.alpha = k * static_cast<double>(m_n) / nn;
  config.replications = mc_size;
  config.campaign_seed = seed;
  config.compute_asd = false;
  const auto result = run_replications(DgpSpec::with_defaults(DgpKind::normal_mean, n), config);
  const double sd = result.metrics.sd(0);
  out.empirical_var = sd * sd * mc / (mc - 1);
  return out;
}

DerivativeReport derivative_check(const PsiFamily& family, std::size_t trials, std::uint64_t seed,
                                  double dpsi_tol, double d2psi_tol) {
  require(trials >= 1, "derivative check needs at least one trial");
  DerivativeReport report;
  report.family = family.name();
  report.trials = trials;
  const auto d = static_cast<Eigen::Index>(family.dim_theta());
  const std::size_t p = family.dim_z();
  const bool binary_response = family.name() == "logistic";
  Xoshiro256 rng(seed);
  std::normal_distribution<double> normal;

  Vector theta(d), psi(d), psi_plus(d), psi_minus(d);
  Matrix dpsi(d, d), d2psi(d, d * d), dpsi_plus(d, d), dpsi_minus(d, d);
  std::vector<double> z(p);
  auto scaled_error = [](double numeric, double analytic) {
    return std::abs(numeric - analytic) / std::max(1.0, std::abs(analytic));
  };

  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& v : z) v = normal(rng);
    if (binary_response) z[0] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    for (Eigen::Index j = 0; j < d; ++j) theta(j) = normal(rng);
    family.evaluate(theta, z, &psi, &dpsi, &d2psi);

    double worst_first = 0.0;
    double worst_second = 0.0;
    for (Eigen::Index l = 0; l < d; ++l) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta(l)));
      Vector up = theta, down = theta;
      up(l) += h;
      down(l) -= h;
      family.evaluate(up, z, &psi_plus, &dpsi_plus, nullptr);
      family.evaluate(down, z, &psi_minus, &dpsi_minus, nullptr);
      const double width = up(l) - down(l);
      for (Eigen::Index i = 0; i < d; ++i) {
        worst_first = std::max(worst_first,
                               scaled_error((psi_plus(i) - psi_minus(i)) / width, dpsi(i, l)));
        for (Eigen::Index j = 0; j < d; ++j) {
          worst_second = std::max(
              worst_second, scaled_error((dpsi_plus(i, j) - dpsi_minus(i, j)) / width,
                                         d2psi(i, j * d + l)));
        }
      }
    }
    report.max_dpsi_error = std::max(report.max_dpsi_error, worst_first);
    report.max_d2psi_error = std::max(report.max_d2psi_error, worst_second);
    if (worst_first > dpsi_tol) ++report.dpsi_failures;
    if (worst_second > d2psi_tol) ++report.d2psi_failures;
  }
  return report;
}

}  // namespace subbag
