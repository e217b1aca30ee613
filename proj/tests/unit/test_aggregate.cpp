#include <doctest.h>

#include <cstring>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "subbag/aggregate.hpp"
#include "subbag/diagnostics.hpp"
#include "support.hpp"

using namespace subbag;

namespace {

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

HyperParams fixed(std::uint64_t k, std::uint64_t m, std::uint64_t n, double delta_m = 0.0) {
  HyperParams h;
  h.k_n = k;
  h.m_n = m;
  h.delta_m = delta_m;
  h.alpha = static_cast<double>(k * m) / std::pow(static_cast<double>(n), 1.0 + delta_m);
  return h;
}

MemorySource normal_data(std::size_t n, std::size_t p, std::uint64_t seed) {
  subbag::Xoshiro256 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n * p);
  for (auto& x : v) x = normal(rng);
  return MemorySource(std::move(v), n, p);
}

}  // namespace

TEST_SUITE("aggregate") {
  TEST_CASE("constant data gives zero spread") {
    MemorySource src(std::vector<double>(50, 3.0), 50, 1);
    MeanFamily fam(1);
    const auto r = run_subbagging(src, fam, fixed(10, 8, 50), 1);
    CHECK(r.theta_bar(0) == 3.0);
    CHECK(r.omega(0, 0) == 0.0);
    CHECK(r.sse(0) == 0.0);
    CHECK(r.ci[0].lower == 3.0);
    CHECK(r.ci[0].upper == 3.0);
  }

  TEST_CASE("standard error arithmetic") {
    Matrix omega(1, 1);
    omega << 0.04;
    const Vector se = subbagging_se(omega, 100, 10000);
    CHECK(se(0) == doctest::Approx(0.02).epsilon(1e-14));
    CHECK(std::sqrt(2.0) * se(0) == doctest::Approx(0.028284).epsilon(1e-5));
  }

  TEST_CASE("variance estimate uses divisor m") {
    const std::vector<Vector> est{Vector::Constant(1, 1.0), Vector::Constant(1, 3.0)};
    CHECK(variance_estimate(est, Vector::Constant(1, 2.0))(0, 0) == 1.0);
    const std::vector<Vector> same(4, Vector::Constant(2, 0.5));
    CHECK(variance_estimate(same, Vector::Constant(2, 0.5)).isZero());
    CHECK_THROWS_AS(variance_estimate({Vector::Zero(1)}, Vector::Zero(1)), Error);
  }

  TEST_CASE("sandwich for the mean family") {
    MeanFamily fam(1);
    const std::vector<double> two{0, 2};
    const auto s = sandwich_full(BlockView{2, 1, two}, fam, Vector::Constant(1, 1.0));
    CHECK(s.xi(0, 0) == doctest::Approx(1.0));

    MeanFamily fam2(2);
    const auto src = normal_data(300, 2, 4);
    Vector mu = Vector::Zero(2);
    src.scan([&](std::uint64_t, std::span<const double> z) { mu += Eigen::Map<const Vector>(z.data(), 2); });
    mu /= 300.0;
    Matrix expected = Matrix::Zero(2, 2);
    src.scan([&](std::uint64_t, std::span<const double> z) {
      const Vector e = Eigen::Map<const Vector>(z.data(), 2) - mu;
      expected += e * e.transpose();
    });
    expected /= 300.0;
    const auto s2 = sandwich_full(src, fam2, mu);
    CHECK((s2.xi - expected).norm() <= 1e-12);
  }

  TEST_CASE("singular average Jacobian") {
    OlsFamily ols(1);
    MemorySource src({1, 0, 2, 0}, 2, 2);
    CHECK_THROWS_AS(sandwich_full(src, ols, Vector::Zero(1)), Error);
  }

  TEST_CASE("normal quantiles") {
    boost::math::normal standard;
    for (double p : {1e-10, 1e-4, 0.01, 0.02425, 0.1, 0.5, 0.8, 0.975, 0.99, 1 - 1e-7}) {
      CHECK(normal_quantile(p) == doctest::Approx(boost::math::quantile(standard, p)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(normal_quantile(0.0), Error);
  }

  TEST_CASE("confidence intervals") {
    auto ci = confidence_intervals(Vector::Zero(1), Vector::Ones(1), 0.95);
    CHECK(ci[0].lower == doctest::Approx(-1.959964).epsilon(1e-6));
    CHECK(ci[0].upper == doctest::Approx(1.959964).epsilon(1e-6));
    ci = confidence_intervals(Vector::Constant(1, 4.0), Vector::Zero(1), 0.9);
    CHECK(ci[0].lower == 4.0);
    CHECK(ci[0].upper == 4.0);
    CHECK_THROWS_AS(confidence_intervals(Vector::Zero(1), Vector::Ones(1), 1.0), Error);
  }

  TEST_CASE("adjusted SE is the default only when delta_m is zero") {
    const auto src = normal_data(400, 1, 9);
    MeanFamily fam(1);
    auto r = run_subbagging(src, fam, fixed(20, 20, 400), 3);
    CHECK(r.ci_adjusted);
    CHECK(r.sse_adjusted(0) == doctest::Approx(std::sqrt(1.0 + 1.0 / r.hyper.alpha) * r.sse(0)));
    const double z = normal_quantile(0.975);
    CHECK(r.ci[0].upper - r.theta_bar(0) == doctest::Approx(z * r.sse_adjusted(0)));

    r = run_subbagging(src, fam, fixed(20, 20, 400, 0.1), 3);
    CHECK_FALSE(r.ci_adjusted);
    CHECK(r.ci[0].upper - r.theta_bar(0) == doctest::Approx(z * r.sse(0)));
  }

  TEST_CASE("theta_bar is the mean of the subsample solutions") {
    const auto data = testing::logistic_records(500, 0.0, 1.0, 5);
    MemorySource src(data, 500, 3);
    LogisticFamily fam(2);
    SubbagOptions opt;
    opt.keep_estimates = true;
    const auto hyper = fixed(60, 12, 500);
    const auto r = run_subbagging(src, fam, hyper, 17, opt);
    const auto plan = build_plan(500, hyper, 17);
    Vector sum = Vector::Zero(2);
    std::vector<double> values;
    for (std::size_t j = 0; j < plan.size(); ++j) {
      values.clear();
      for (auto i : plan.subsample(j)) {
        values.insert(values.end(), data.begin() + i * 3, data.begin() + i * 3 + 3);
      }
      const Vector theta = newton_solve(fam, BlockView{60, 3, values}).theta;
      CHECK((theta - r.estimates[j]).lpNorm<Eigen::Infinity>() <= 1e-9);
      sum += theta;
    }
    CHECK((sum / 12.0 - r.theta_bar).lpNorm<Eigen::Infinity>() <= 1e-9);
  }

  TEST_CASE("omega is positive semidefinite") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto src = normal_data(200, 3, seed);
      MeanCovFamily fam(3);
      const auto r = run_subbagging(src, fam, fixed(30, 6, 200), seed);
      CHECK((r.omega - r.omega.transpose()).norm() == 0.0);
      Eigen::SelfAdjointEigenSolver<Matrix> eig(r.omega);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-12 * r.omega.trace());
    }
  }

  TEST_CASE("results are bit-identical across worker counts and batch sizes") {
    const auto data = testing::logistic_records(3000, 0.0, 1.0, 77);
    MemorySource mem(data, 3000, 3);
    const auto bin = testing::temp_path("repro.f64");
    write_matrix_file(bin, 3000, 3, data);
    const auto file = open_source(bin, Format::f64_matrix);
    LogisticFamily fam(2);
    const auto hyper = fixed(100, 40, 3000);

    SubbagOptions base;
    base.bc_mode = BcMode::bc3;
    const auto ref = run_subbagging(mem, fam, hyper, 5, base);
    for (std::size_t workers : {1u, 4u, 8u}) {
      for (std::size_t batch : {0u, 1u, 7u}) {
        SubbagOptions opt = base;
        opt.workers = workers;
        opt.batch_size = batch;
        const auto r = run_subbagging(*file, fam, hyper, 5, opt);
        CHECK(same_bits(r.theta_bar, ref.theta_bar));
        CHECK(same_bits(r.omega, ref.omega));
        CHECK(same_bits(r.sse_adjusted, ref.sse_adjusted));
      }
    }
  }

  TEST_CASE("explicit all-subsets plan equals the complete-U oracle") {
    const auto data = testing::fractional_logistic_records(12, 3);
    MemorySource src(data, 12, 3);
    LogisticFamily fam(2);
    const auto plan = SamplingPlan::from_lists(12, all_subsets(12, 6));
    SubbagOptions opt;
    opt.warm_start = false;
    const auto r = run_subbagging(src, fam, plan, fixed(6, 924, 12), opt);
    const auto oracle = complete_u_oracle(fam, src.view(), 6);
    CHECK((r.theta_bar - oracle).lpNorm<Eigen::Infinity>() <= 1e-12);
  }

  TEST_CASE("memory budget sets the batch size") {
    const auto src = normal_data(1000, 2, 1);
    MeanFamily fam(2);
    SubbagOptions opt;
    opt.mem_budget = 10 * 50 * 2 * 8;
    const auto r = run_subbagging(src, fam, fixed(50, 33, 1000), 2, opt);
    CHECK(r.batch_size == 10);
  }

  TEST_CASE("failed subsamples abort by default and are dropped on request") {
    // rows 0..3 give a singular ols design (x = 0); rows 4.. are regular
    std::vector<double> data;
    for (int i = 0; i < 4; ++i) data.insert(data.end(), {1.0, 0.0});
    for (int i = 0; i < 4; ++i) data.insert(data.end(), {1.0 * i, 1.0 + i});
    MemorySource src(data, 8, 2);
    OlsFamily ols(1);
    const auto plan = SamplingPlan::from_lists(8, {{4, 5}, {0, 1}, {6, 7}, {2, 3}});
    SubbagOptions opt;
    opt.warm_start = false;
    try {
      run_subbagging(src, ols, plan, fixed(2, 4, 8), opt);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::singular);
      CHECK(std::string(e.what()).find("subsample 1") != std::string::npos);
    }
    opt.skip_failed = true;
    const auto r = run_subbagging(src, ols, plan, fixed(2, 4, 8), opt);
    CHECK(r.failed_subsamples == 2);
    CHECK(r.failed_ids == std::vector<std::size_t>{1, 3});
  }

  TEST_CASE("family and source widths must agree") {
    const auto src = normal_data(100, 2, 1);
    LogisticFamily fam(2);
    CHECK_THROWS_AS(run_subbagging(src, fam, fixed(10, 10, 100), 1), Error);
  }

  TEST_CASE("anticipation") {
    const auto data = testing::logistic_records(100000, 0.0, 1.0, 8);
    MemorySource src(data, 100000, 3);
    LogisticFamily fam(2);
    HyperRequest req;
    req.alpha = 0.01;
    req.delta_k = 0.001;
    const auto pilot_hyper = pilot_hyperparams(100000, req);
    CHECK(pilot_hyper.k_n == 319);
    CHECK(pilot_hyper.m_n == 3);
    const auto a = anticipate(src, fam, pilot_hyper, 3, {0.01, 0.2, 1.0, 1e9});
    const auto& rows = a.rows;
    CHECK(rows[0].sse_adjusted == a.pilot.sse_adjusted);
    CHECK(rows[1].seconds == doctest::Approx(20.0 * a.pilot.wall_times.total()));
    CHECK(rows[0].seconds == doctest::Approx(a.pilot.wall_times.total()));
    for (const auto& row : rows) CHECK(row.sse_full == a.pilot.sse);
    CHECK((rows[3].sse_adjusted - rows[3].sse_full).norm() <= 1e-8 * rows[3].sse_full.norm());

    req.alpha = 0.01;
    CHECK_THROWS_WITH_AS(pilot_hyperparams(500, req), doctest::Contains("pilot"), Error);
  }
}
