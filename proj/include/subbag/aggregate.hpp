#pragma once

#include <cstdint>
#include <vector>

#include "subbag/data_source.hpp"
#include "subbag/families.hpp"
#include "subbag/sampling.hpp"
#include "subbag/solver.hpp"

namespace subbag {

inline constexpr std::uint64_t kDefaultMemBudget = 256ull << 20;

struct WallTimes {
  double load = 0.0;      // extraction
  double estimate = 0.0;  // subsample solves and the average
  double se = 0.0;        // variance estimate, standard errors, intervals
  double total() const { return load + estimate + se; }
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

struct SubbagOptions {
  BcMode bc_mode = BcMode::none;
  SolveConfig solve;
  std::size_t workers = 1;
  /// Subsamples extracted per batch; 0 derives it from mem_budget.
  std::size_t batch_size = 0;
  std::uint64_t mem_budget = kDefaultMemBudget;
  /// Drop subsamples whose solve fails numerically instead of aborting.
  bool skip_failed = false;
  /// Start every subsample from subsample 0's solution.
  bool warm_start = true;
  double ci_level = 0.95;
  bool keep_estimates = false;
};

struct SubbaggingResult {
  Vector theta_bar;
  Matrix omega;
  HyperParams hyper;
  Vector sse;
  Vector sse_adjusted;
  double ci_level = 0.95;
  bool ci_adjusted = true;  // intervals built from sse_adjusted
  std::vector<Interval> ci;
  std::uint64_t n_total = 0;
  BcMode bc_mode = BcMode::none;
  std::uint64_t seed = 0;
  std::size_t failed_subsamples = 0;
  std::vector<std::size_t> failed_ids;
  WallTimes wall_times;
  std::size_t batch_size = 0;
  ExtractionStats extraction;
  std::vector<Vector> estimates;  // retained subsample estimates, when kept
};

/// Builds the plan from (hyper, master_seed) and runs it.
SubbaggingResult run_subbagging(const RecordSource& source, const PsiFamily& family,
                                const HyperParams& hyper, std::uint64_t master_seed,
                                const SubbagOptions& options = {});

/// Runs an explicit plan; hyper supplies alpha and delta_m for the standard errors.
SubbaggingResult run_subbagging(const RecordSource& source, const PsiFamily& family,
                                const SamplingPlan& plan, const HyperParams& hyper,
                                const SubbagOptions& options = {});

/// m^-1 sum (theta_s - theta_bar)(theta_s - theta_bar)'.
Matrix variance_estimate(const std::vector<Vector>& estimates, const Vector& theta_bar);

/// sqrt((k Omega)_jj / N).
Vector subbagging_se(const Matrix& omega, std::uint64_t k_n, std::uint64_t n_total);

struct SandwichEstimate {
  Matrix xi;     // A^-1 S A^-T
  Matrix v;      // A = N^-1 sum dpsi
  Matrix sigma;  // S = N^-1 sum psi psi'
};

/// One streaming pass over the source at theta.
SandwichEstimate sandwich_full(const RecordSource& source, const PsiFamily& family,
                               const Vector& theta);
SandwichEstimate sandwich_full(const BlockView& data, const PsiFamily& family, const Vector& theta);

/// Standard normal quantile (Acklam's rational approximation, refined by one
/// Halley step).
double normal_quantile(double p);

/// theta_j -/+ z_{(1 + level)/2} se_j.
std::vector<Interval> confidence_intervals(const Vector& theta, const Vector& se, double level);
/// Intervals from sse_adjusted when delta_m == 0, from sse otherwise.
std::vector<Interval> confidence_intervals(const SubbaggingResult& result, double level);

struct AnticipationRow {
  double alpha = 0.0;
  Vector sse_adjusted;
  Vector sse_full;
  double seconds = 0.0;
};

struct Anticipation {
  SubbaggingResult pilot;
  std::vector<AnticipationRow> rows;
};

/// Pilot hyperparameters at alpha = 0.01 (or request.alpha if the caller set
/// another pilot level); fails with advice when m_N would be 0.
HyperParams pilot_hyperparams(std::uint64_t n_total, HyperRequest request);

/// Runs the pilot once, then projects standard errors and wall time to `alphas`.
Anticipation anticipate(const RecordSource& source, const PsiFamily& family,
                        const HyperParams& pilot_hyper, std::uint64_t master_seed,
                        const std::vector<double>& alphas, const SubbagOptions& options = {});

/// Projection from an existing pilot result.
std::vector<AnticipationRow> anticipate_from(const SubbaggingResult& pilot,
                                             const std::vector<double>& alphas);

}  // namespace subbag
