#include <doctest.h>

#include <random>

#include "subbag/solver.hpp"
#include "support.hpp"

using namespace subbag;

namespace {

BlockView view(const std::vector<double>& values, std::size_t cols) {
  return BlockView{values.size() / cols, cols, values};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ||sum psi||_2 for logistic with intercept, records (y, 1, x)
double logistic_residual(const std::vector<double>& data, double a, double b) {
  double g0 = 0.0, g1 = 0.0;
  for (std::size_t i = 0; i < data.size(); i += 3) {
    const double r = data[i] - sigmoid(a + b * data[i + 2]);
    g0 += r;
    g1 += r * data[i + 2];
  }
  return std::hypot(g0, g1);
}

}  // namespace

TEST_SUITE("solver") {
  TEST_CASE("mean family converges in one step") {
    MeanFamily fam(1);
    const std::vector<double> data{0, 2, 4};
    const auto est = newton_solve(fam, view(data, 1));
    CHECK(est.theta(0) == 2.0);
    CHECK(est.iterations == 1);
    CHECK(est.converged);
  }

  TEST_CASE("intercept-only logistic gives the logit of the sample mean") {
    LogisticFamily fam(1);
    const std::vector<double> data{1, 1, 1, 1, 0, 1, 1, 1};
    const auto est = newton_solve(fam, view(data, 2));
    CHECK(est.theta(0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }

  TEST_CASE("logistic solution matches a brute-force grid search") {
    const auto data = testing::logistic_records(20, 0.3, -0.8, 99);
    LogisticFamily fam(2);
    const auto est = newton_solve(fam, view(data, 3));

    // coarse grid over [-3, 3]^2 at 0.01, then 1e-3 around the coarse minimum
    double best = HUGE_VAL, ba = 0, bb = 0;
    for (int i = -300; i <= 300; ++i) {
      for (int j = -300; j <= 300; ++j) {
        const double r = logistic_residual(data, i * 0.01, j * 0.01);
        if (r < best) best = r, ba = i * 0.01, bb = j * 0.01;
      }
    }
    const double ca = ba, cb = bb;
    for (int i = -20; i <= 20; ++i) {
      for (int j = -20; j <= 20; ++j) {
        const double a = ca + i * 1e-3, b = cb + j * 1e-3;
        const double r = logistic_residual(data, a, b);
        if (r < best) best = r, ba = a, bb = b;
      }
    }
    CHECK(std::abs(est.theta(0) - ba) <= 2e-3);
    CHECK(std::abs(est.theta(1) - bb) <= 2e-3);
  }

  TEST_CASE("converged estimates satisfy the residual bound") {
    LogisticFamily fam(2);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto data = testing::logistic_records(60, 0.0, 1.0, seed);
      for (BcMode mode : {BcMode::none, BcMode::bc3}) {
        const auto est = estimate_subsample(fam, view(data, 3), mode);
        CHECK(est.converged);
        CHECK(est.residual <= 60 * 1e-8);
      }
    }
  }

  TEST_CASE("singular Jacobian and non-convergence are distinct errors") {
    OlsFamily ols(1);
    const std::vector<double> zeros{1, 0, 2, 0, 3, 0};
    try {
      newton_solve(ols, view(zeros, 2));
      FAIL("expected singular");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::singular);
      CHECK(e.exit_code() == 3);
    }

    LogisticFamily fam(2);
    const auto data = testing::logistic_records(40, 0.0, 1.0, 5);
    SolveConfig cfg;
    cfg.max_iter = 1;
    try {
      newton_solve(fam, view(data, 3), cfg);
      FAIL("expected non-convergence");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::non_convergence);
    }
  }

  TEST_CASE("separated data does not produce a silent answer") {
    LogisticFamily fam(2);
    const std::vector<double> data{0, 1, -2, 0, 1, -1, 1, 1, 1, 1, 1, 2};
    CHECK_THROWS_AS(newton_solve(fam, view(data, 3)), Error);
  }

  TEST_CASE("solutions do not depend on the starting point") {
    LogisticFamily fam(2);
    const auto data = testing::logistic_records(80, 0.5, 1.0, 8);
    const auto from_zero = newton_solve(fam, view(data, 3)).theta;
    SolveConfig cfg;
    cfg.start = Vector::Constant(2, 0.7);
    const auto from_other = newton_solve(fam, view(data, 3), cfg).theta;
    CHECK((from_zero - from_other).lpNorm<Eigen::Infinity>() <= 1e-10);
  }

  TEST_CASE("v_hat and v2_hat") {
    MeanFamily mean(2);
    const std::vector<double> data{1, 2, 3, 5, -1, 0};
    CHECK(v_hat(mean, view(data, 2), Vector::Zero(2)) == -Matrix::Identity(2, 2));
    CHECK(v2_hat(mean, view(data, 2), Vector::Zero(2)).isZero());

    OlsFamily ols(2);
    const std::vector<double> rec{1, 1, 2, 0, 1, -1, 3, 1, 0.5};
    Matrix expected = Matrix::Zero(2, 2);
    for (std::size_t i = 0; i < 3; ++i) {
      Eigen::Vector2d x(rec[i * 3 + 1], rec[i * 3 + 2]);
      expected -= x * x.transpose();
    }
    expected /= 3.0;
    CHECK((v_hat(ols, view(rec, 3), Vector::Ones(2)) - expected).norm() <= 1e-15);

    LogisticFamily fam(2);
    const auto lr = testing::logistic_records(30, 0, 1, 3);
    const Vector theta = Eigen::Vector2d(0.2, 0.9);
    const Matrix v2 = v2_hat(fam, view(lr, 3), theta);
    for (int l = 0; l < 2; ++l) {
      Vector up = theta, down = theta;
      up(l) += 1e-5;
      down(l) -= 1e-5;
      const Matrix fd = (v_hat(fam, view(lr, 3), up) - v_hat(fam, view(lr, 3), down)) / 2e-5;
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) CHECK(std::abs(fd(i, j) - v2(i, j * 2 + l)) <= 1e-5);
      }
    }
  }

  TEST_CASE("b_hat vanishes for the mean family") {
    MeanFamily fam(3);
    std::vector<double> data(30);
    subbag::Xoshiro256 rng(2);
    std::normal_distribution<double> normal;
    for (auto& v : data) v = normal(rng);
    CHECK(b_hat(fam, view(data, 3), Vector::Constant(3, 0.1)).isZero());
  }

  TEST_CASE("b_hat for ols matches a straight-loop transcription") {
    OlsFamily fam(2);
    const std::vector<double> data{1.0, 1, 0.5, -0.3, 1, -1.2, 2.2, 1, 1.9, 0.4, 1, 0.1, 1.5, 1, 0.8};
    const std::size_t k = 5;
    const double theta[2] = {0.3, 0.7};

    double v[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < k; ++i) {
      const double* z = &data[i * 3];
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) v[a][b] -= z[1 + a] * z[1 + b] / k;
      }
    }
    const double det = v[0][0] * v[1][1] - v[0][1] * v[1][0];
    const double inv[2][2] = {{v[1][1] / det, -v[0][1] / det}, {-v[1][0] / det, v[0][0] / det}};
    double bracket[2] = {0, 0};
    for (std::size_t i = 0; i < k; ++i) {
      const double* z = &data[i * 3];
      const double res = z[0] - z[1] * theta[0] - z[2] * theta[1];
      const double psi[2] = {z[1] * res, z[2] * res};
      double u[2];
      for (int a = 0; a < 2; ++a) u[a] = inv[a][0] * psi[0] + inv[a][1] * psi[1];
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
          const double dpsi = -z[1 + a] * z[1 + b];
          bracket[a] -= (dpsi - v[a][b]) * u[b] / k;
        }
      }
      // second derivatives vanish for ols
    }
    double expected[2];
    for (int a = 0; a < 2; ++a) expected[a] = -(inv[a][0] * bracket[0] + inv[a][1] * bracket[1]);

    const Vector got = b_hat(fam, view(data, 3), Eigen::Vector2d(theta[0], theta[1]));
    CHECK(got(0) == doctest::Approx(expected[0]).epsilon(1e-12));
    CHECK(got(1) == doctest::Approx(expected[1]).epsilon(1e-12));
    CHECK(std::abs(expected[0]) + std::abs(expected[1]) > 1e-3);
  }

  TEST_CASE("b_hat for one-parameter logistic matches the scalar formula") {
    // z = (y, x), psi = x (y - s), dpsi = -s(1-s) x^2, d2psi = -s(1-s)(1-2s) x^3
    LogisticFamily fam(1);
    const std::vector<double> data{1, 0.4, 0, -1.3, 1, 2.1, 1, 0.7, 0, 0.2};
    const double t = 0.35;
    double v = 0, v2 = 0;
    for (int i = 0; i < 5; ++i) {
      const double x = data[2 * i + 1], s = sigmoid(t * x);
      v += -s * (1 - s) * x * x / 5;
      v2 += -s * (1 - s) * (1 - 2 * s) * x * x * x / 5;
    }
    double first = 0, second = 0;
    for (int i = 0; i < 5; ++i) {
      const double y = data[2 * i], x = data[2 * i + 1], s = sigmoid(t * x);
      const double u = x * (y - s) / v;
      first += (-s * (1 - s) * x * x - v) * u / 5;
      second += u * u / 5;
    }
    const double expected = -(-first + 0.5 * v2 * second) / v;
    CHECK(b_hat(fam, view(data, 2), Vector::Constant(1, t))(0) ==
          doctest::Approx(expected).epsilon(1e-10));
  }

  TEST_CASE("duplicating records leaves estimate and bias unchanged") {
    LogisticFamily fam(2);
    const auto data = testing::logistic_records(50, 0, 1, 12);
    auto doubled = data;
    doubled.insert(doubled.end(), data.begin(), data.end());
    const auto a = newton_solve(fam, view(data, 3)).theta;
    const auto b = newton_solve(fam, view(doubled, 3)).theta;
    CHECK((a - b).lpNorm<Eigen::Infinity>() <= 1e-10);
    const auto ba = b_hat(fam, view(data, 3), a);
    const auto bb = b_hat(fam, view(doubled, 3), a);
    CHECK((ba - bb).lpNorm<Eigen::Infinity>() <= 1e-10);
  }

  TEST_CASE("bias corrections") {
    MeanFamily mean(1);
    const std::vector<double> m{0.3, 1.7, -2.0, 4.1};
    const double plain = newton_solve(mean, view(m, 1)).theta(0);
    for (BcMode mode : {BcMode::bc1, BcMode::bc2, BcMode::bc3}) {
      CHECK(solve_bc(mean, view(m, 1), mode).theta(0) == doctest::Approx(plain).epsilon(1e-14));
    }

    // closed form of the variance correction: data {0, 2}, k = 2
    MeanCovUnbiasedFamily unbiased(1);
    const std::vector<double> two{0, 2};
    const auto est = estimate_subsample(unbiased, view(two, 1), BcMode::none).theta;
    CHECK(est(1) == doctest::Approx(2.0));
    CHECK(newton_solve(MeanCovFamily(1), view(two, 1)).theta(1) == doctest::Approx(1.0));
    CHECK_THROWS_AS(check_bc_mode(unbiased, BcMode::bc2), Error);

    // bc1 with the analytic bias -sigma^2: sigma^2 (1 + 1/k)
    const auto bc1 = solve_bc(MeanCovFamily(1), view(two, 1), BcMode::bc1).theta;
    CHECK(bc1(1) == doctest::Approx(1.5));

    LogisticFamily logit(2);
    try {
      check_bc_mode(logit, BcMode::bc1);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::no_closed_form_bias);
      CHECK(std::string(e.what()).find("no closed-form bias") != std::string::npos);
    }
  }

  TEST_CASE("bc2 and bc3 definitions") {
    LogisticFamily fam(2);
    const auto data = testing::logistic_records(70, 0.0, 1.0, 41);
    const BlockView block = view(data, 3);
    const auto plain = newton_solve(fam, block).theta;
    const auto bc2 = solve_bc(fam, block, BcMode::bc2).theta;
    CHECK((bc2 - (plain - b_hat(fam, block, plain) / 70.0)).norm() <= 1e-14);

    const auto bc3 = solve_bc(fam, block, BcMode::bc3);
    const auto sums = eval_psi_sum(fam, block, bc3.theta);
    const auto bias = bias_terms(fam, block, bc3.theta);
    CHECK((sums.psi + bias.v * bias.b).lpNorm<Eigen::Infinity>() <= 70 * 1e-8);
    CHECK(bc3.bc_mode == BcMode::bc3);
  }

  TEST_CASE("bc2 adjustment shrinks like 1/k") {
    LogisticFamily fam(2);
    std::vector<double> logk, logd;
    for (std::size_t k : {50u, 100u, 200u, 400u, 800u}) {
      double total = 0.0;
      const int blocks = 200;
      for (int b = 0; b < blocks; ++b) {
        const auto data = testing::logistic_records(k, 0.0, 1.0, 1000 * k + b);
        const BlockView block = view(data, 3);
        const auto plain = newton_solve(fam, block).theta;
        total += (b_hat(fam, block, plain) / static_cast<double>(k)).norm();
      }
      logk.push_back(std::log(static_cast<double>(k)));
      logd.push_back(std::log(total / blocks));
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < logk.size(); ++i) mx += logk[i], my += logd[i];
    mx /= logk.size();
    my /= logd.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < logk.size(); ++i) {
      sxy += (logk[i] - mx) * (logd[i] - my);
      sxx += (logk[i] - mx) * (logk[i] - mx);
    }
    const double slope = sxy / sxx;
    INFO("slope = ", slope);
    CHECK(slope >= -1.2);
    CHECK(slope <= -0.8);
  }

  TEST_CASE("mode names") {
    CHECK(parse_bc_mode("bc3") == BcMode::bc3);
    CHECK(to_string(BcMode::bc2) == "bc2");
    CHECK_THROWS_AS(parse_bc_mode("bc4"), Error);
  }
}
