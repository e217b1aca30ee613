#include <doctest.h>

#include <cstring>

#include "subbag/simulation.hpp"
#include "support.hpp"

using namespace subbag;

TEST_SUITE("simulation") {
  TEST_CASE("logistic responses are balanced under (0, 1)") {
    const auto data = generate(DgpSpec::with_defaults(DgpKind::logistic, 50000), 11);
    CHECK(data.n_cols() == 3);
    double ones = 0.0;
    data.scan([&](std::uint64_t, std::span<const double> z) {
      ones += z[0];
      CHECK(z[1] == 1.0);
    });
    CHECK(std::abs(ones / 50000.0 - 0.5) <= 0.01);
  }

  TEST_CASE("normal_mean sample mean is within the CLT band") {
    const auto data = generate(DgpSpec::with_defaults(DgpKind::normal_mean, 1000000), 5);
    double sum = 0.0;
    for (double v : data.values()) sum += v;
    CHECK(std::abs(sum / 1e6) <= 0.004);
  }

  TEST_CASE("linear responses follow the coefficients") {
    DgpSpec spec = DgpSpec::with_defaults(DgpKind::linear, 20000);
    spec.theta0 = Eigen::Vector3d(1.0, -2.0, 0.5);
    spec.noise = 0.5;
    const auto data = generate(spec, 3);
    CHECK(data.n_cols() == 4);
    OlsFamily fam(3);
    const auto est = newton_solve(fam, data.view()).theta;
    CHECK((est - spec.theta0).lpNorm<Eigen::Infinity>() <= 0.02);
  }

  TEST_CASE("generation is deterministic in the seed") {
    const auto spec = DgpSpec::with_defaults(DgpKind::logistic, 1000);
    const auto a = generate(spec, 9);
    const auto b = generate(spec, 9);
    const auto c = generate(spec, 10);
    CHECK(std::memcmp(a.values().data(), b.values().data(), 3000 * sizeof(double)) == 0);
    CHECK(a.values() != c.values());
  }

  TEST_CASE("seeds per replication") {
    CHECK(data_seed(7, 3) == derive_seed(7, 6));
    CHECK(plan_seed(7, 3) == derive_seed(7, 7));
  }

  TEST_CASE("summaries follow the metric definitions") {
    std::vector<ReplicationRecord> recs(3);
    const double thetas[3] = {1.0, 2.0, 4.0};
    for (int r = 0; r < 3; ++r) {
      recs[r].theta = Vector::Constant(1, thetas[r]);
      recs[r].se = Vector::Constant(1, 0.5 * (r + 1));
      recs[r].asd = Vector::Constant(1, 1.0);
      recs[r].ci = {{thetas[r] - 1.5, thetas[r] + 1.5}};
      recs[r].ci_adjusted = {{thetas[r] - 3, thetas[r] + 3}};
    }
    const auto m = summarize(recs, Vector::Constant(1, 2.0), 1.0);
    const double mean = 7.0 / 3.0;
    CHECK(m.bias(0) == doctest::Approx(mean - 2.0));
    const double sd = std::sqrt(((1 - mean) * (1 - mean) + (2 - mean) * (2 - mean) +
                                 (4 - mean) * (4 - mean)) / 3.0);
    CHECK(m.sd(0) == doctest::Approx(sd));
    CHECK(m.sse(0) == doctest::Approx(1.0));
    CHECK(m.cp(0) == doctest::Approx(2.0 / 3.0));
    CHECK(m.alpha_adjusted_cp(0) == doctest::Approx(1.0));
    CHECK(m.alpha_adjusted_sse(0) == doctest::Approx(std::sqrt(2.0)));
    CHECK(m.alpha_adjusted_asd(0) == doctest::Approx(std::sqrt(2.0)));
  }

  TEST_CASE("RMSE identity and coverage range") {
    DgpSpec spec = DgpSpec::with_defaults(DgpKind::logistic, 2000);
    McConfig cfg;
    cfg.hyper = HyperParams{60, 33, 60.0 * 33 / 2000, 0.0, 0.0};
    cfg.replications = 40;
    cfg.campaign_seed = 4;
    const auto res = run_replications(spec, cfg);
    const auto& m = res.metrics;
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double lhs = m.rmse(j) * m.rmse(j);
      const double rhs = m.bias(j) * m.bias(j) + m.sd(j) * m.sd(j);
      CHECK(std::abs(lhs - rhs) <= 1e-12 * rhs);
      CHECK(m.cp(j) >= 0.0);
      CHECK(m.cp(j) <= 1.0);
      CHECK(m.alpha_adjusted_cp(j) >= m.cp(j));
    }
  }

  TEST_CASE("mean-family subbagging is unbiased") {
    const auto spec = DgpSpec::with_defaults(DgpKind::normal_mean, 500);
    McConfig cfg;
    cfg.family = "mean";
    cfg.hyper = HyperParams{25, 20, 1.0, 0.0, 0.0};
    cfg.replications = 2000;
    cfg.campaign_seed = 12;
    cfg.compute_asd = false;
    const auto m = run_replications(spec, cfg).metrics;
    CHECK(std::abs(m.bias(0)) <= 4.0 * m.sd(0) / std::sqrt(2000.0));
  }

  TEST_CASE("logistic bias halves when k doubles") {
    const auto spec = DgpSpec::with_defaults(DgpKind::logistic, 10000);
    McConfig cfg;
    cfg.replications = 300;
    cfg.compute_asd = false;
    cfg.hyper = HyperParams{50, 300, 1.5, 0.0, 0.0};
    const double small = run_replications(spec, cfg).metrics.bias(1);
    cfg.hyper = HyperParams{100, 300, 3.0, 0.0, 0.0};
    const double large = run_replications(spec, cfg).metrics.bias(1);
    INFO("BIAS k=50 ", small, ", k=100 ", large);
    CHECK(small / large >= 1.4);
    CHECK(small / large <= 2.6);
  }

  TEST_CASE("campaigns do not depend on the worker count") {
    const auto spec = DgpSpec::with_defaults(DgpKind::logistic, 1500);
    McConfig cfg;
    cfg.hyper = HyperParams{50, 30, 1.0, 0.0, 0.0};
    cfg.replications = 12;
    cfg.bc_mode = BcMode::bc2;
    const auto a = run_replications(spec, cfg).metrics;
    cfg.workers = 4;
    const auto b = run_replications(spec, cfg).metrics;
    CHECK(a.bias == b.bias);
    CHECK(a.sd == b.sd);
    CHECK(a.asd == b.asd);
  }

  TEST_CASE("spilling to disk reproduces the in-memory campaign") {
    const auto spec = DgpSpec::with_defaults(DgpKind::logistic, 800);
    McConfig cfg;
    cfg.hyper = HyperParams{40, 20, 1.0, 0.0, 0.0};
    cfg.replications = 3;
    const auto mem = run_replications(spec, cfg);
    cfg.spill_dir = testing::temp_dir().string();
    const auto disk = run_replications(spec, cfg);
    for (int r = 0; r < 3; ++r) CHECK(mem.records[r].theta == disk.records[r].theta);
  }

  TEST_CASE("full-sample estimator") {
    const auto spec = DgpSpec::with_defaults(DgpKind::logistic, 3000);
    McConfig cfg;
    cfg.estimator = Estimator::full_sample;
    cfg.replications = 5;
    const auto res = run_replications(spec, cfg);
    const auto data = generate(spec, data_seed(cfg.campaign_seed, 2));
    LogisticFamily fam(2);
    CHECK((res.records[2].theta - newton_solve(fam, data.view()).theta).norm() == 0.0);
    CHECK(res.metrics.alpha_adjusted_sse == res.metrics.sse);
  }

  TEST_CASE("true parameters") {
    MeanCovFamily mc(2);
    DgpSpec spec = DgpSpec::with_defaults(DgpKind::normal_mean, 10);
    spec.theta0 = Eigen::Vector2d(1.0, -1.0);
    const auto t = true_parameter(mc, spec);
    CHECK(t.size() == 5);
    CHECK(t(2) == 1.0);
    CHECK(t(3) == 0.0);
    CHECK(t(4) == 1.0);
    CHECK_THROWS_AS(true_parameter(LogisticFamily(1), spec), Error);
    CHECK(parse_dgp("normal-mean") == DgpKind::normal_mean);
    CHECK_THROWS_AS(parse_dgp("poisson"), Error);
  }
}
