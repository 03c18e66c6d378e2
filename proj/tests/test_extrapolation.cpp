#include <doctest.h>

#include <cmath>

#include "korr/extrapolation.hpp"
#include "test_util.hpp"

using namespace korr;

namespace {

Samples line_samples(double a0, double a1, int n, double lo, double hi) {
  Samples s;
  s.x.resize(n);
  s.y.resize(n);
  for (int i = 0; i < n; ++i) {
    s.x(i) = lo + (hi - lo) * i / (n - 1);
    s.y(i) = a0 + a1 * s.x(i);
  }
  return s;
}

}  // namespace

TEST_SUITE("extrapolation") {

TEST_CASE("target names round trip") {
  for (const ExtrapTarget t :
       {ExtrapTarget::kPolynomial, ExtrapTarget::kSinusoidPlusTrend}) {
    CHECK(extrap_target_from_name(extrap_target_name(t)) == t);
  }
  CHECK_THROWS_AS(extrap_target_from_name("nope"), ConfigError);
}

TEST_CASE("config demands an adjacent extrapolation range") {
  StudyConfig cfg;
  cfg.validate();
  cfg.extrap_lo = cfg.train_hi + 0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = StudyConfig{};
  cfg.poly_degree = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("linear fit recovers an exact line") {
  const Samples s = line_samples(0.7, -1.3, 25, 0.0, 2.0);
  const FitResult fit = fit_linear_ls(s);
  CHECK(fit.coefficients(0) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(fit.coefficients(1) == doctest::Approx(-1.3).epsilon(1e-12));
  CHECK(fit.train_mse < 1e-24);
  CHECK(fit.predict(10.0) == doctest::Approx(0.7 - 13.0).epsilon(1e-10));
}

TEST_CASE("linear fit rejects degenerate abscissae") {
  Samples s;
  s.x = Vector::Constant(5, 1.0);
  s.y = Vector::Random(5);
  CHECK_THROWS_AS(fit_linear_ls(s), NumericError);
}

TEST_CASE("linear slope on x^2 matches the analytic moments") {
  // LS slope of y = x^2 on uniform grid: cov(x, x^2) / var(x). On the
  // symmetric grid [-1, 1] that covariance vanishes, so a1 = 0 and
  // a0 = mean(x^2).
  const int n = 41;
  Samples s;
  s.x.resize(n);
  s.y.resize(n);
  for (int i = 0; i < n; ++i) {
    s.x(i) = -1.0 + 2.0 * i / (n - 1);
    s.y(i) = s.x(i) * s.x(i);
  }
  const FitResult fit = fit_linear_ls(s);
  CHECK(fit.coefficients(1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(fit.coefficients(0) ==
        doctest::Approx(s.y.mean()).epsilon(1e-12));
}

TEST_CASE("degree-1 polynomial agrees with the linear solver") {
  Rng rng(1);
  Samples s;
  s.x.resize(30);
  s.y.resize(30);
  for (int i = 0; i < 30; ++i) {
    s.x(i) = rng.uniform(0.0, 2.0);
    s.y(i) = rng.normal();
  }
  const FitResult lin = fit_linear_ls(s);
  const FitResult poly = fit_poly_ls(s, 1);
  CHECK(std::abs(lin.coefficients(0) - poly.coefficients(0)) < 1e-9);
  CHECK(std::abs(lin.coefficients(1) - poly.coefficients(1)) < 1e-9);
}

TEST_CASE("degree-5 fit nails a cubic") {
  Rng rng(2);
  Samples s;
  s.x.resize(50);
  s.y.resize(50);
  for (int i = 0; i < 50; ++i) {
    s.x(i) = rng.uniform(0.0, 2.0);
    const double x = s.x(i);
    s.y(i) = 0.5 * x * x * x - 2.0 * x * x + x;
  }
  const FitResult fit = fit_poly_ls(s, 5);
  CHECK(fit.train_mse < 1e-10);
  // Interpolate and extrapolate a little; the cubic is inside the family.
  for (const double x : {0.33, 1.7, 2.3}) {
    const double truth = 0.5 * x * x * x - 2.0 * x * x + x;
    CHECK(fit.predict(x) == doctest::Approx(truth).epsilon(1e-4));
  }
}

TEST_CASE("linear extrapolation error grows exactly like |a1| |x - x0|") {
  StudyConfig cfg;
  cfg.target = ExtrapTarget::kPolynomial;
  Rng rng(3);
  const Samples train = sample_target(cfg, rng);
  FitResult fit = fit_linear_ls(train);
  // Against its own line, not the study target: the drift away from the
  // value at the boundary is |a1| (x - x0) identically.
  const double x0 = cfg.train_hi;
  const double f0 = fit.predict(x0);
  for (int i = 0; i < 20; ++i) {
    const double x = x0 + 0.05 * (i + 1);
    CHECK(std::abs(fit.predict(x) - f0) ==
          doctest::Approx(std::abs(fit.coefficients(1)) * (x - x0))
              .epsilon(1e-12));
  }
}

TEST_CASE("measure_extrapolation uses the half-open grid") {
  StudyConfig cfg;
  cfg.n_extrap = 10;
  Rng rng(4);
  FitResult fit = fit_linear_ls(sample_target(cfg, rng));
  measure_extrapolation(fit, cfg);
  REQUIRE(fit.extrap_x.size() == 10);
  CHECK(fit.extrap_x(0) > cfg.extrap_lo);
  CHECK(fit.extrap_x(9) == doctest::Approx(cfg.extrap_hi).epsilon(1e-12));
  CHECK(fit.extrap_error.size() == 10);
  CHECK(fit.extrap_mse ==
        doctest::Approx(fit.extrap_error.squaredNorm() / 10).epsilon(1e-12));
}

TEST_CASE("log_log_slope recovers a known power law") {
  const int n = 30;
  Vector x(n), err(n);
  for (int i = 0; i < n; ++i) {
    x(i) = 2.0 + 0.03 * (i + 1);
    err(i) = 3.0 * std::pow(x(i) - 2.0, 2.5);
  }
  CHECK(log_log_slope(x, err, 2.0) == doctest::Approx(2.5).epsilon(1e-9));
}

TEST_CASE("mlp fit flattens on a constant target") {
  StudyConfig cfg;
  cfg.mlp_hidden = 16;
  cfg.mlp_depth = 1;
  cfg.mlp_max_epochs = 2000;
  Samples s;
  s.x.resize(20);
  s.y = Vector::Constant(20, 0.75);
  for (int i = 0; i < 20; ++i) s.x(i) = 0.1 * i;
  Rng rng(5);
  const FitResult fit = fit_mlp(s, cfg, rng);
  CHECK(fit.train_mse < 1e-4);
  // Far outside the data, a ReLU net is affine; it shouldn't blow up the way
  // the high-degree polynomial does.
  CHECK(std::abs(fit.predict(5.0)) < 10.0);
}

TEST_CASE("full study ordering on the complex target") {
  StudyConfig cfg;
  cfg.mlp_max_epochs = 1500;  // keep the test quick
  cfg.seed = 6;
  const StudyReport report = run_study(cfg);
  CHECK(report.linear.extrap_mse < report.poly.extrap_mse);
  CHECK(report.poly_slope > report.linear_slope);
  CHECK(report.poly_slope > 1.0);  // superlinear divergence
  const std::string csv = report.curves_csv();
  CHECK(csv.find("x,target") == 0);
  CHECK(report.summary().find("linear") != std::string::npos);
}

TEST_CASE("study reruns are bit-identical") {
  StudyConfig cfg;
  cfg.mlp_max_epochs = 300;
  cfg.seed = 7;
  const StudyReport a = run_study(cfg);
  const StudyReport b = run_study(cfg);
  CHECK(a.linear.extrap_mse == b.linear.extrap_mse);
  CHECK(a.poly.extrap_mse == b.poly.extrap_mse);
  CHECK(a.mlp.extrap_mse == b.mlp.extrap_mse);
  CHECK(korr_test::bit_equal(a.poly.coefficients, b.poly.coefficients));
}

}  // TEST_SUITE
