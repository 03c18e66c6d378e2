#pragma once

#include "korr/numeric.hpp"

namespace korr {

enum class ExtrapTarget { kPolynomial, kSinusoidPlusTrend };

std::string extrap_target_name(ExtrapTarget target);
ExtrapTarget extrap_target_from_name(const std::string& name);

// Restricted-range fitting with out-of-range error measurement: how do a
// linear model, a high-degree polynomial, and a small perceptron behave past
// the data they saw?
struct StudyConfig {
  ExtrapTarget target = ExtrapTarget::kPolynomial;
  double train_lo = 0.0;
  double train_hi = 2.0;
  double extrap_lo = 2.0;  // half-open (extrap_lo, extrap_hi]
  double extrap_hi = 3.0;
  int n_train = 40;
  int n_extrap = 40;
  int poly_degree = 5;
  double noise_std = 0.0;
  int mlp_hidden = 64;
  int mlp_depth = 2;
  int mlp_max_epochs = 5000;
  std::uint64_t seed = 0;

  void validate() const;
};

// Default complex target: 0.5x^3 - 2x^2 + x + sin(3x).
double eval_target(ExtrapTarget target, double x);

struct Samples {
  Vector x;
  Vector y;
};

Samples sample_target(const StudyConfig& config, Rng& rng);

enum class ModelKind { kLinear, kPolynomial, kMlp };

struct FitResult {
  ModelKind kind = ModelKind::kLinear;
  Vector coefficients;  // a_0..a_d for the polynomial family
  Mlp net;              // perceptron variant only
  double train_mse = 0.0;
  double extrap_mse = 0.0;
  Vector extrap_x;
  Vector extrap_error;  // |prediction - target| per extrapolation point

  double predict(double x) const;
};

// Exact 2-parameter least squares.
FitResult fit_linear_ls(const Samples& train);

// Vandermonde least squares with ridge 1e-10.
FitResult fit_poly_ls(const Samples& train, int degree);

// Small perceptron regression, trained until the train MSE plateaus
// (< 1e-3 relative change over 100 epochs) or the epoch cap.
FitResult fit_mlp(const Samples& train, const StudyConfig& config, Rng& rng);

// Fills extrap_x/extrap_error/extrap_mse against the study target.
void measure_extrapolation(FitResult& fit, const StudyConfig& config);

// Least-squares slope of log|error| against log(x - x0), points with
// |error| < 1e-12 trimmed.
double log_log_slope(const Vector& x, const Vector& error, double x0);

struct StudyReport {
  StudyConfig config;
  FitResult linear;
  FitResult poly;
  FitResult mlp;
  double linear_slope = 0.0;
  double poly_slope = 0.0;

  // (x, target, lin_pred, poly_pred, mlp_pred) rows over both ranges.
  std::string curves_csv() const;
  std::string summary() const;
};

StudyReport run_study(const StudyConfig& config);

}  // namespace korr
