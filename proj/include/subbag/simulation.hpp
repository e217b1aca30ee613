#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "subbag/aggregate.hpp"

namespace subbag {

enum class DgpKind { logistic, linear, normal_mean };

std::string to_string(DgpKind kind);
DgpKind parse_dgp(const std::string& text);

struct DgpSpec {
  DgpKind kind = DgpKind::logistic;
  std::uint64_t n = 10000;
  /// Regression coefficients (intercept first) or the normal mean.
  Vector theta0 = Vector::Zero(0);
  double noise = 1.0;  // error SD for linear

  /// Logistic and linear default to (0, 1); normal_mean to the scalar 0.
  static DgpSpec with_defaults(DgpKind kind, std::uint64_t n);
  /// Width of the generated records.
  std::size_t record_cols() const;
};

/// logistic and linear records are (y, 1, x_1, ..., x_{d-1}) with x_j ~ N(0, 1);
/// normal_mean records are Z ~ N(theta0, I).
MemorySource generate(const DgpSpec& dgp, std::uint64_t seed);

/// Writes the dataset in the f64-matrix format.
void spill(const MemorySource& data, const std::string& path);

enum class Estimator { subbagging, full_sample };

struct McConfig {
  std::string family = "logistic";
  HyperParams hyper;             // k_n, m_n, alpha, delta_m used for every replication
  Estimator estimator = Estimator::subbagging;
  BcMode bc_mode = BcMode::none;
  SolveConfig solve;
  std::size_t replications = 100;
  std::uint64_t campaign_seed = 1;
  std::size_t workers = 1;       // across replications
  double ci_level = 0.95;
  bool compute_asd = true;
  /// Evaluate the sandwich at the true parameter rather than at the full-sample estimate.
  bool asd_at_truth = true;
  bool skip_failed = false;
  /// When set, each replication's data is written there and read back out of core.
  std::optional<std::string> spill_dir;
};

/// What one replication contributes to the metrics.
struct ReplicationRecord {
  Vector theta;
  Vector se;           // SSE (full-sample estimator: sandwich SE at the estimate)
  Vector se_adjusted;
  Vector asd;          // sqrt((Xi_hat / N)_jj); empty when not computed
  std::vector<Interval> ci;
  std::vector<Interval> ci_adjusted;
  std::size_t failed_subsamples = 0;
  double seconds = 0.0;
};

struct McMetrics {
  std::size_t replications = 0;
  double alpha = 1.0;
  Vector theta0;
  Vector mean;
  Vector bias;
  Vector sd;
  Vector rmse;
  Vector asd;
  Vector sse;
  Vector cp;
  Vector alpha_adjusted_asd;
  Vector alpha_adjusted_sse;
  Vector alpha_adjusted_cp;
  std::size_t failed_subsamples = 0;
};

struct McResult {
  McMetrics metrics;
  std::vector<ReplicationRecord> records;
};

/// Replication r uses data seed derive_seed(campaign, 2r) and plan seed
/// derive_seed(campaign, 2r + 1).
std::uint64_t data_seed(std::uint64_t campaign_seed, std::size_t r);
std::uint64_t plan_seed(std::uint64_t campaign_seed, std::size_t r);

/// The family's parameter value under the DGP (e.g. (mu, vech I) for meancov).
Vector true_parameter(const PsiFamily& family, const DgpSpec& dgp);

ReplicationRecord run_replication(const DgpSpec& dgp, const McConfig& config, std::size_t r);
McResult run_replications(const DgpSpec& dgp, const McConfig& config);

/// Metrics over replication records; SD has divisor R and RMSE = sqrt(BIAS^2 + SD^2).
McMetrics summarize(const std::vector<ReplicationRecord>& records, const Vector& theta0,
                    double alpha);

}  // namespace subbag
