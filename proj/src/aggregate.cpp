#include "subbag/aggregate.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "subbag/parallel.hpp"

namespace subbag {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

SubbaggingResult run_subbagging(const RecordSource& source, const PsiFamily& family,
                                const HyperParams& hyper, std::uint64_t master_seed,
                                const SubbagOptions& options) {
  const auto plan = build_plan(source.n_rows(), hyper, master_seed);
  return run_subbagging(source, family, plan, hyper, options);
}

SubbaggingResult run_subbagging(const RecordSource& source, const PsiFamily& family,
                                const SamplingPlan& plan, const HyperParams& hyper,
                                const SubbagOptions& options) {
  check_bc_mode(family, options.bc_mode);
  if (source.n_cols() != family.dim_z()) {
    throw Error(ErrorKind::usage, family.name() + " expects records of width " +
                                      std::to_string(family.dim_z()) + " but the source yields " +
                                      std::to_string(source.n_cols()) + " columns");
  }
  require(options.ci_level > 0.0 && options.ci_level < 1.0, "ci level must lie in (0, 1)");
  const std::size_t m = plan.size();
  const std::size_t k = plan.k_n();

  SubbaggingResult result;
  result.hyper = hyper;
  result.hyper.k_n = k;
  result.hyper.m_n = m;
  result.n_total = source.n_rows();
  result.bc_mode = options.bc_mode;
  result.seed = plan.master_seed();
  result.batch_size = options.batch_size > 0
                          ? options.batch_size
                          : batch_size_for_budget(options.mem_budget, k, source.n_cols());
  result.batch_size = std::min(result.batch_size, m);

  std::vector<Vector> slots(m);
  std::vector<char> failed(m, 0);
  SolveConfig config = options.solve;
  bool start_fixed = !options.warm_start;

  auto solve_one = [&](const RecordBlock& block) {
    const std::size_t id = block.subsample_id;
    try {
      slots[id] = estimate_subsample(family, block.view(), options.bc_mode, config).theta;
    } catch (const Error& e) {
      if (options.skip_failed && e.is_numerical()) {
        failed[id] = 1;
        return;
      }
      throw e.with_context("subsample " + std::to_string(id));
    }
  };

  std::vector<RecordBlock> blocks;
  for (std::size_t first = 0; first < m; first += result.batch_size) {
    const std::size_t last = std::min(m, first + result.batch_size);
    auto t0 = Clock::now();
    blocks.clear();
    source.extract(
        plan, first, last, result.batch_size,
        [&](RecordBlock&& block) { blocks.push_back(std::move(block)); }, &result.extraction);
    result.wall_times.load += seconds_since(t0);

    t0 = Clock::now();
    std::size_t begin = 0;
    if (!start_fixed) {
      // subsample 0 seeds every other solve, whatever the worker count
      solve_one(blocks.front());
      if (!failed[0]) config.start = slots[0];
      start_fixed = true;
      begin = 1;
    }
    parallel_for(blocks.size() - begin, options.workers,
                 [&](std::size_t i) { solve_one(blocks[begin + i]); });
    result.wall_times.estimate += seconds_since(t0);
  }
  blocks.clear();
  blocks.shrink_to_fit();

  auto t0 = Clock::now();
  std::vector<Vector> kept;
  kept.reserve(m);
  for (std::size_t id = 0; id < m; ++id) {
    if (failed[id]) {
      result.failed_ids.push_back(id);
    } else {
      kept.push_back(std::move(slots[id]));
    }
  }
  result.failed_subsamples = result.failed_ids.size();
  if (kept.empty()) throw Error(ErrorKind::non_convergence, "every subsample solve failed");
  result.theta_bar = Vector::Zero(kept.front().size());
  for (const auto& theta : kept) result.theta_bar += theta;
  result.theta_bar /= static_cast<double>(kept.size());
  result.wall_times.estimate += seconds_since(t0);

  t0 = Clock::now();
  result.omega = variance_estimate(kept, result.theta_bar);
  result.sse = subbagging_se(result.omega, k, result.n_total);
  result.sse_adjusted = std::sqrt(1.0 + 1.0 / result.hyper.alpha) * result.sse;
  result.ci_level = options.ci_level;
  result.ci_adjusted = result.hyper.delta_m == 0.0;
  result.ci = confidence_intervals(result, options.ci_level);
  result.wall_times.se = seconds_since(t0);

  if (options.keep_estimates) result.estimates = std::move(kept);
  return result;
}

Matrix variance_estimate(const std::vector<Vector>& estimates, const Vector& theta_bar) {
  if (estimates.size() < 2) {
    throw Error(ErrorKind::usage, "the subbagging variance estimate needs at least 2 subsamples");
  }
  const auto d = theta_bar.size();
  Matrix omega = Matrix::Zero(d, d);
  for (const auto& theta : estimates) {
    require(theta.size() == d, "estimate length mismatch");
    const Vector e = theta - theta_bar;
    omega.noalias() += e * e.transpose();
  }
  omega /= static_cast<double>(estimates.size());
  // exact symmetry regardless of rounding in the rank-one updates
  return 0.5 * (omega + omega.transpose());
}

Vector subbagging_se(const Matrix& omega, std::uint64_t k_n, std::uint64_t n_total) {
  const double scale = static_cast<double>(k_n) / static_cast<double>(n_total);
  return (scale * omega.diagonal().array()).max(0.0).sqrt().matrix();
}

namespace {

struct SandwichSums {
  Matrix a;
  Matrix s;
  std::uint64_t n = 0;
  Vector psi;
  Matrix dpsi;

  explicit SandwichSums(Eigen::Index d)
      : a(Matrix::Zero(d, d)), s(Matrix::Zero(d, d)), psi(d), dpsi(d, d) {}

  void add(const PsiFamily& family, const Vector& theta, std::span<const double> z) {
    family.evaluate(theta, z, &psi, &dpsi, nullptr);
    a += dpsi;
    s.noalias() += psi * psi.transpose();
    ++n;
  }

  SandwichEstimate finish() const {
    SandwichEstimate out;
    out.v = a / static_cast<double>(n);
    out.sigma = s / static_cast<double>(n);
    const auto lu = checked_lu(out.v, "average Jacobian");
    const Matrix left = lu.solve(out.sigma);            // A^-1 S
    out.xi = lu.solve(left.transpose()).transpose();    // (A^-1 (A^-1 S)')' = A^-1 S A^-T
    out.xi = 0.5 * (out.xi + out.xi.transpose());
    if (!out.xi.allFinite()) throw Error(ErrorKind::non_finite, "non-finite sandwich estimate");
    return out;
  }
};

}  // namespace

SandwichEstimate sandwich_full(const RecordSource& source, const PsiFamily& family,
                               const Vector& theta) {
  require(source.n_cols() == family.dim_z(), "source width does not match the family");
  SandwichSums sums(static_cast<Eigen::Index>(family.dim_theta()));
  source.scan([&](std::uint64_t, std::span<const double> z) { sums.add(family, theta, z); });
  return sums.finish();
}

SandwichEstimate sandwich_full(const BlockView& data, const PsiFamily& family,
                               const Vector& theta) {
  require(data.cols == family.dim_z() && data.rows >= 1, "data width does not match the family");
  SandwichSums sums(static_cast<Eigen::Index>(family.dim_theta()));
  for (std::size_t i = 0; i < data.rows; ++i) sums.add(family, theta, data.row(i));
  return sums.finish();
}

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "normal quantile needs p in (0, 1)");
  // 1 - p is exact here, and the refinement below is accurate in the lower tail
  if (p > 0.5) return -normal_quantile(1.0 - p);
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  // Halley refinement
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

std::vector<Interval> confidence_intervals(const Vector& theta, const Vector& se, double level) {
  require(level > 0.0 && level < 1.0, "ci level must lie in (0, 1)");
  require(theta.size() == se.size(), "theta and se lengths differ");
  const double z = normal_quantile(0.5 * (1.0 + level));
  std::vector<Interval> out(static_cast<std::size_t>(theta.size()));
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    out[j] = {theta(j) - z * se(j), theta(j) + z * se(j)};
  }
  return out;
}

std::vector<Interval> confidence_intervals(const SubbaggingResult& result, double level) {
  const bool adjusted = result.hyper.delta_m == 0.0;
  return confidence_intervals(result.theta_bar, adjusted ? result.sse_adjusted : result.sse,
                              level);
}

HyperParams pilot_hyperparams(std::uint64_t n_total, HyperRequest request) {
  try {
    return select_hyperparams(n_total, request);
  } catch (const Error& e) {
    if (std::string(e.what()).find("m_n is 0") == std::string::npos) throw;
    throw Error(ErrorKind::usage, "the pilot at alpha=" + std::to_string(request.alpha) +
                                      " gives m_N = 0 for N=" + std::to_string(n_total) +
                                      "; use a larger pilot alpha (--pilot-alpha)");
  }
}

std::vector<AnticipationRow> anticipate_from(const SubbaggingResult& pilot,
                                             const std::vector<double>& alphas) {
  const double total = pilot.wall_times.total();
  std::vector<AnticipationRow> rows;
  rows.reserve(alphas.size());
  for (double alpha : alphas) {
    require(alpha > 0.0 && std::isfinite(alpha), "anticipation alphas must be positive");
    AnticipationRow row;
    row.alpha = alpha;
    row.sse_full = pilot.sse;
    row.sse_adjusted = std::sqrt(1.0 + 1.0 / alpha) * pilot.sse;
    row.seconds = alpha / pilot.hyper.alpha * total;
    rows.push_back(std::move(row));
  }
  return rows;
}

Anticipation anticipate(const RecordSource& source, const PsiFamily& family,
                        const HyperParams& pilot_hyper, std::uint64_t master_seed,
                        const std::vector<double>& alphas, const SubbagOptions& options) {
  require(!alphas.empty(), "anticipate needs at least one alpha");
  Anticipation out;
  out.pilot = run_subbagging(source, family, pilot_hyper, master_seed, options);
  out.rows = anticipate_from(out.pilot, alphas);
  return out;
}

}  // namespace subbag
