#include "subbag/simulation.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>

#include "subbag/parallel.hpp"

namespace subbag {

std::string to_string(DgpKind kind) {
  switch (kind) {
    case DgpKind::logistic: return "logistic";
    case DgpKind::linear: return "linear";
    case DgpKind::normal_mean: return "normal_mean";
  }
  return "unknown";
}

DgpKind parse_dgp(const std::string& text) {
  if (text == "logistic") return DgpKind::logistic;
  if (text == "linear") return DgpKind::linear;
  if (text == "normal_mean" || text == "normal-mean") return DgpKind::normal_mean;
  throw Error(ErrorKind::usage,
              "unknown dgp '" + text + "' (expected logistic, linear, normal_mean)");
}

DgpSpec DgpSpec::with_defaults(DgpKind kind, std::uint64_t n) {
  DgpSpec spec;
  spec.kind = kind;
  spec.n = n;
  if (kind == DgpKind::normal_mean) {
    spec.theta0 = Vector::Zero(1);
  } else {
    spec.theta0 = Vector(2);
    spec.theta0 << 0.0, 1.0;
  }
  return spec;
}

std::size_t DgpSpec::record_cols() const {
  const auto d = static_cast<std::size_t>(theta0.size());
  return kind == DgpKind::normal_mean ? d : d + 1;
}

MemorySource generate(const DgpSpec& dgp, std::uint64_t seed) {
  require(dgp.n >= 2, "dgp needs n >= 2");
  require(dgp.theta0.size() >= 1, "dgp needs a non-empty theta0");
  require(dgp.noise >= 0.0, "noise must be non-negative");
  const std::size_t d = static_cast<std::size_t>(dgp.theta0.size());
  const std::size_t cols = dgp.record_cols();
  std::vector<double> values(dgp.n * cols);
  Xoshiro256 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (std::uint64_t i = 0; i < dgp.n; ++i) {
    double* row = values.data() + i * cols;
    if (dgp.kind == DgpKind::normal_mean) {
      for (std::size_t j = 0; j < d; ++j) row[j] = dgp.theta0(j) + normal(rng);
      continue;
    }
    row[1] = 1.0;
    double eta = dgp.theta0(0);
    for (std::size_t j = 1; j < d; ++j) {
      row[j + 1] = normal(rng);
      eta += dgp.theta0(j) * row[j + 1];
    }
    if (dgp.kind == DgpKind::logistic) {
      row[0] = rng.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
    } else {
      row[0] = eta + dgp.noise * normal(rng);
    }
  }
  return MemorySource(std::move(values), dgp.n, cols);
}

void spill(const MemorySource& data, const std::string& path) {
  write_matrix_file(path, data.n_rows(), data.n_cols(), data.values());
}

std::uint64_t data_seed(std::uint64_t campaign_seed, std::size_t r) {
  return derive_seed(campaign_seed, 2 * static_cast<std::uint64_t>(r));
}

std::uint64_t plan_seed(std::uint64_t campaign_seed, std::size_t r) {
  return derive_seed(campaign_seed, 2 * static_cast<std::uint64_t>(r) + 1);
}

Vector true_parameter(const PsiFamily& family, const DgpSpec& dgp) {
  const std::string name = family.name();
  const bool regression = dgp.kind != DgpKind::normal_mean;
  if ((name == "logistic" && dgp.kind == DgpKind::logistic) ||
      (name == "ols" && dgp.kind == DgpKind::linear) || (name == "mean" && !regression)) {
    return dgp.theta0;
  }
  if ((name == "meancov" || name == "meancov-unbiased") && !regression) {
    const auto p = static_cast<std::size_t>(dgp.theta0.size());
    Vector theta(family.dim_theta());
    theta.head(p) = dgp.theta0;
    theta.tail(theta.size() - p) = vech(Matrix::Identity(p, p));
    return theta;
  }
  throw Error(ErrorKind::usage,
              "family " + name + " does not estimate a parameter of the " + to_string(dgp.kind) +
                  " dgp");
}

ReplicationRecord run_replication(const DgpSpec& dgp, const McConfig& config, std::size_t r) {
  const auto start = std::chrono::steady_clock::now();
  const MemorySource data = generate(dgp, data_seed(config.campaign_seed, r));
  const auto family = make_family(config.family, data.n_cols());
  const Vector theta0 = true_parameter(*family, dgp);
  const double n = static_cast<double>(dgp.n);
  ReplicationRecord record;

  std::optional<Vector> full_estimate;
  auto full_sample = [&]() -> const Vector& {
    if (!full_estimate) {
      full_estimate = newton_solve(*family, data.view(), config.solve).theta;
    }
    return *full_estimate;
  };

  if (config.estimator == Estimator::full_sample) {
    record.theta = family->finalize(full_sample(), dgp.n);
    const auto sandwich = sandwich_full(data.view(), *family, full_sample());
    record.se = (sandwich.xi.diagonal().array() / n).sqrt().matrix();
    record.se_adjusted = record.se;
    record.ci = confidence_intervals(record.theta, record.se, config.ci_level);
    record.ci_adjusted = record.ci;
  } else {
    SubbagOptions options;
    options.bc_mode = config.bc_mode;
    options.solve = config.solve;
    options.workers = 1;
    options.skip_failed = config.skip_failed;
    options.ci_level = config.ci_level;
    const std::uint64_t seed = plan_seed(config.campaign_seed, r);
    SubbaggingResult result;
    if (config.spill_dir) {
      const auto path = std::filesystem::path(*config.spill_dir) /
                        ("replication_" + std::to_string(r) + ".sbm");
      spill(data, path.string());
      {
        const auto source = open_source(path.string(), Format::f64_matrix);
        result = run_subbagging(*source, *family, config.hyper, seed, options);
      }
      std::filesystem::remove(path);
    } else {
      result = run_subbagging(data, *family, config.hyper, seed, options);
    }
    record.theta = result.theta_bar;
    record.se = result.sse;
    record.se_adjusted = result.sse_adjusted;
    record.ci = confidence_intervals(result.theta_bar, result.sse, config.ci_level);
    record.ci_adjusted = confidence_intervals(result.theta_bar, result.sse_adjusted,
                                              config.ci_level);
    record.failed_subsamples = result.failed_subsamples;
  }

  if (config.compute_asd) {
    const Vector at = config.asd_at_truth ? theta0 : full_sample();
    const auto sandwich = sandwich_full(data.view(), *family, at);
    record.asd = (sandwich.xi.diagonal().array() / n).max(0.0).sqrt().matrix();
  }
  record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

McResult run_replications(const DgpSpec& dgp, const McConfig& config) {
  require(config.replications >= 2, "a Monte Carlo campaign needs at least 2 replications");
  McResult out;
  out.records.resize(config.replications);
  parallel_for(config.replications, config.workers,
               [&](std::size_t r) { out.records[r] = run_replication(dgp, config, r); });
  const auto family = make_family(config.family, dgp.record_cols());
  const double alpha =
      config.estimator == Estimator::full_sample ? HUGE_VAL : config.hyper.alpha;
  out.metrics = summarize(out.records, true_parameter(*family, dgp), alpha);
  return out;
}

McMetrics summarize(const std::vector<ReplicationRecord>& records, const Vector& theta0,
                    double alpha) {
  require(!records.empty(), "no replication records");
  const auto d = theta0.size();
  const double r_count = static_cast<double>(records.size());
  McMetrics m;
  m.replications = records.size();
  m.alpha = alpha;
  m.theta0 = theta0;
  m.mean = Vector::Zero(d);
  m.asd = Vector::Zero(d);
  m.sse = Vector::Zero(d);
  m.cp = Vector::Zero(d);
  m.alpha_adjusted_cp = Vector::Zero(d);
  bool have_asd = true;
  for (const auto& rec : records) {
    m.mean += rec.theta;
    m.sse += rec.se;
    if (rec.asd.size() == d) {
      m.asd += rec.asd;
    } else {
      have_asd = false;
    }
    for (Eigen::Index j = 0; j < d; ++j) {
      const double t = theta0(j);
      if (rec.ci[j].lower <= t && t <= rec.ci[j].upper) m.cp(j) += 1.0;
      if (rec.ci_adjusted[j].lower <= t && t <= rec.ci_adjusted[j].upper) {
        m.alpha_adjusted_cp(j) += 1.0;
      }
    }
    m.failed_subsamples += rec.failed_subsamples;
  }
  m.mean /= r_count;
  m.sse /= r_count;
  m.asd /= r_count;
  if (!have_asd) m.asd.setConstant(std::nan(""));
  m.cp /= r_count;
  m.alpha_adjusted_cp /= r_count;

  Vector sq = Vector::Zero(d);
  for (const auto& rec : records) sq += (rec.theta - m.mean).array().square().matrix();
  m.sd = (sq / r_count).array().sqrt().matrix();
  m.bias = m.mean - theta0;
  m.rmse = (m.bias.array().square() + m.sd.array().square()).sqrt().matrix();
  const double factor = std::sqrt(1.0 + 1.0 / alpha);
  m.alpha_adjusted_asd = factor * m.asd;
  m.alpha_adjusted_sse = factor * m.sse;
  return m;
}

}  // namespace subbag
