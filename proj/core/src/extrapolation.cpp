#include "korr/extrapolation.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>

namespace korr {

std::string extrap_target_name(ExtrapTarget target) {
  return target == ExtrapTarget::kPolynomial ? "polynomial"
                                             : "sinusoid-plus-trend";
}

ExtrapTarget extrap_target_from_name(const std::string& name) {
  if (name == "polynomial") return ExtrapTarget::kPolynomial;
  if (name == "sinusoid-plus-trend" || name == "sinusoid_plus_trend") {
    return ExtrapTarget::kSinusoidPlusTrend;
  }
  throw ConfigError("unknown extrapolation target '" + name + "'");
}

void StudyConfig::validate() const {
  if (train_lo >= train_hi) {
    throw ConfigError("study.train range must be non-degenerate");
  }
  if (extrap_lo != train_hi) {
    throw ConfigError("study.extrap range must be adjacent to the train range");
  }
  if (extrap_hi <= extrap_lo) {
    throw ConfigError("study.extrap range must be non-degenerate");
  }
  if (n_train < 2) throw ConfigError("study.n_train must be >= 2");
  if (n_extrap < 1) throw ConfigError("study.n_extrap must be >= 1");
  if (poly_degree < 1) throw ConfigError("study.poly_degree must be >= 1");
  if (noise_std < 0) throw ConfigError("study.noise_std must be >= 0");
}

double eval_target(ExtrapTarget target, double x) {
  if (target == ExtrapTarget::kPolynomial) {
    // "Complex polynomial" target with a non-polynomial ripple.
    return 0.5 * x * x * x - 2.0 * x * x + x + std::sin(3.0 * x);
  }
  return 0.5 * x + std::sin(2.0 * x);
}

Samples sample_target(const StudyConfig& config, Rng& rng) {
  config.validate();
  Samples s;
  s.x.resize(config.n_train);
  s.y.resize(config.n_train);
  for (int i = 0; i < config.n_train; ++i) {
    // Evenly spaced grid keeps the study deterministic; noise is the only
    // stochastic ingredient.
    s.x(i) = config.train_lo + (config.train_hi - config.train_lo) * i /
                                   double(config.n_train - 1);
    s.y(i) = eval_target(config.target, s.x(i));
    if (config.noise_std > 0) s.y(i) += config.noise_std * rng.normal();
  }
  return s;
}

namespace {

double poly_eval(const Vector& coeffs, double x) {
  double y = 0.0;
  for (Eigen::Index i = coeffs.size() - 1; i >= 0; --i) y = y * x + coeffs(i);
  return y;
}

double train_mse_of(const FitResult& fit, const Samples& train) {
  double mse = 0.0;
  for (Eigen::Index i = 0; i < train.x.size(); ++i) {
    const double e = fit.predict(train.x(i)) - train.y(i);
    mse += e * e;
  }
  return mse / double(train.x.size());
}

int count_distinct(const Vector& x) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  return int(std::unique(v.begin(), v.end()) - v.begin());
}

}  // namespace

double FitResult::predict(double x) const {
  if (kind == ModelKind::kMlp) {
    Matrix in(1, 1);
    in(0, 0) = x;
    return mlp_forward(net, in)(0, 0);
  }
  return poly_eval(coefficients, x);
}

FitResult fit_linear_ls(const Samples& train) {
  if (count_distinct(train.x) < 2) {
    throw NumericError("fit_linear_ls: need at least 2 distinct x");
  }
  const double n = double(train.x.size());
  const double sx = train.x.sum();
  const double sy = train.y.sum();
  const double sxx = train.x.squaredNorm();
  const double sxy = train.x.dot(train.y);
  const double denom = n * sxx - sx * sx;
  FitResult fit;
  fit.kind = ModelKind::kLinear;
  fit.coefficients.resize(2);
  fit.coefficients(1) = (n * sxy - sx * sy) / denom;
  fit.coefficients(0) = (sy - fit.coefficients(1) * sx) / n;
  fit.train_mse = train_mse_of(fit, train);
  return fit;
}

FitResult fit_poly_ls(const Samples& train, int degree) {
  if (degree < 1) throw ConfigError("fit_poly_ls: degree must be >= 1");
  if (count_distinct(train.x) < degree + 1) {
    throw NumericError("fit_poly_ls: need at least degree+1 distinct x");
  }
  const Eigen::Index n = train.x.size();
  Matrix v(n, degree + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0;
    for (int d = 0; d <= degree; ++d) {
      v(i, d) = p;
      p *= train.x(i);
    }
  }
  Matrix gram = v.transpose() * v;
  gram.diagonal().array() += 1e-10;
  const Eigen::LDLT<Matrix> solver(gram);
  const Vector coeffs = solver.solve(v.transpose() * train.y);
  if (!coeffs.allFinite()) {
    throw NumericError("fit_poly_ls: rank deficiency beyond ridge");
  }
  FitResult fit;
  fit.kind = ModelKind::kPolynomial;
  fit.coefficients = coeffs;
  fit.train_mse = train_mse_of(fit, train);
  return fit;
}

FitResult fit_mlp(const Samples& train, const StudyConfig& config, Rng& rng) {
  if (train.x.size() == 0) throw ConfigError("fit_mlp: empty samples");
  std::vector<int> sizes;
  sizes.push_back(1);
  for (int i = 0; i < config.mlp_depth; ++i) sizes.push_back(config.mlp_hidden);
  sizes.push_back(1);
  FitResult fit;
  fit.kind = ModelKind::kMlp;
  fit.net = make_mlp(sizes, rng);

  const Eigen::Index n = train.x.size();
  Matrix x(1, n), y(1, n);
  x.row(0) = train.x.transpose();
  y.row(0) = train.y.transpose();

  Adam opt(AdamConfig{.lr = 1e-3});
  std::vector<ParamView> params = param_views(fit.net);
  double plateau_ref = -1.0;
  double mse = 0.0;
  for (int epoch = 0; epoch < config.mlp_max_epochs; ++epoch) {
    MlpCache cache;
    const Matrix pred = mlp_forward(fit.net, x, &cache);
    const Matrix err = pred - y;
    mse = err.array().square().mean();
    if (!std::isfinite(mse)) throw NumericError("fit_mlp: training diverged");
    MlpGrads grads = zero_grads(fit.net);
    mlp_backward(fit.net, cache, err * (2.0 / double(n)), grads);
    std::vector<ParamView> gv = grad_views(grads);
    opt.step(params, gv);
    // Plateau: < 1e-3 relative improvement over a 100-epoch window.
    if (epoch % 100 == 0) {
      if (plateau_ref >= 0 &&
          std::abs(plateau_ref - mse) < 1e-3 * std::max(plateau_ref, 1e-12)) {
        break;
      }
      plateau_ref = mse;
    }
  }
  fit.train_mse = mse;
  return fit;
}

void measure_extrapolation(FitResult& fit, const StudyConfig& config) {
  fit.extrap_x.resize(config.n_extrap);
  fit.extrap_error.resize(config.n_extrap);
  double mse = 0.0;
  for (int i = 0; i < config.n_extrap; ++i) {
    // Half-open (lo, hi]: start one grid step past the boundary.
    const double x = config.extrap_lo + (config.extrap_hi - config.extrap_lo) *
                                            (i + 1) / double(config.n_extrap);
    const double err = fit.predict(x) - eval_target(config.target, x);
    fit.extrap_x(i) = x;
    fit.extrap_error(i) = std::abs(err);
    mse += err * err;
  }
  fit.extrap_mse = mse / double(config.n_extrap);
}

double log_log_slope(const Vector& x, const Vector& error, double x0) {
  Samples logs;
  std::vector<double> lx, le;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (std::abs(error(i)) < 1e-12 || x(i) <= x0) continue;
    lx.push_back(std::log(x(i) - x0));
    le.push_back(std::log(std::abs(error(i))));
  }
  if (lx.size() < 2) return 0.0;
  logs.x = Eigen::Map<Vector>(lx.data(), Eigen::Index(lx.size()));
  logs.y = Eigen::Map<Vector>(le.data(), Eigen::Index(le.size()));
  return fit_linear_ls(logs).coefficients(1);
}

StudyReport run_study(const StudyConfig& config) {
  config.validate();
  StudyReport report;
  report.config = config;
  Rng rng(config.seed);
  const Samples train = sample_target(config, rng);

  report.linear = fit_linear_ls(train);
  report.poly = fit_poly_ls(train, config.poly_degree);
  report.mlp = fit_mlp(train, config, rng);
  measure_extrapolation(report.linear, config);
  measure_extrapolation(report.poly, config);
  measure_extrapolation(report.mlp, config);

  report.linear_slope = log_log_slope(report.linear.extrap_x,
                                      report.linear.extrap_error,
                                      config.train_hi);
  report.poly_slope = log_log_slope(report.poly.extrap_x,
                                    report.poly.extrap_error, config.train_hi);
  return report;
}

std::string StudyReport::curves_csv() const {
  std::ostringstream os;
  os << "x,target,lin_pred,poly_pred,mlp_pred\n";
  const int n_total = config.n_train + config.n_extrap;
  for (int i = 0; i < n_total; ++i) {
    double x;
    if (i < config.n_train) {
      x = config.train_lo + (config.train_hi - config.train_lo) * i /
                                double(config.n_train - 1);
    } else {
      const int j = i - config.n_train;
      x = config.extrap_lo + (config.extrap_hi - config.extrap_lo) * (j + 1) /
                                 double(config.n_extrap);
    }
    os << x << ',' << eval_target(config.target, x) << ','
       << linear.predict(x) << ',' << poly.predict(x) << ',' << mlp.predict(x)
       << '\n';
  }
  return os.str();
}

std::string StudyReport::summary() const {
  std::ostringstream os;
  os << "extrapolation study, target " << extrap_target_name(config.target)
     << ", train [" << config.train_lo << ", " << config.train_hi
     << "], extrap (" << config.extrap_lo << ", " << config.extrap_hi << "]\n";
  os << "linear : train_mse " << linear.train_mse << " extrap_mse "
     << linear.extrap_mse << " slope " << linear_slope << "\n";
  os << "poly(" << config.poly_degree << "): train_mse " << poly.train_mse
     << " extrap_mse " << poly.extrap_mse << " slope " << poly_slope << "\n";
  os << "mlp    : train_mse " << mlp.train_mse << " extrap_mse "
     << mlp.extrap_mse << "\n";
  return os.str();
}

}  // namespace korr
