#include "korr/numeric.hpp"

#include <cmath>

namespace korr {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " * " +
                         std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
  return a * b;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Mlp make_mlp(const std::vector<int>& layer_sizes, Rng& rng,
             Activation activation) {
  if (layer_sizes.size() < 2) {
    throw DimensionError("make_mlp: need at least input and output sizes");
  }
  Mlp mlp;
  mlp.layer_sizes = layer_sizes;
  mlp.activation = activation;
  for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
    const int in = layer_sizes[i];
    const int out = layer_sizes[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix w(out, in);
    for (int c = 0; c < in; ++c) {
      for (int r = 0; r < out; ++r) {
        w(r, c) = rng.uniform(-bound, bound);
      }
    }
    Vector b(out);
    for (int r = 0; r < out; ++r) b(r) = rng.uniform(-bound, bound);
    mlp.weights.push_back(std::move(w));
    mlp.biases.push_back(std::move(b));
  }
  return mlp;
}

void init_last_layer(Mlp& mlp, double weight_std, double bias_const, Rng& rng) {
  Matrix& w = mlp.weights.back();
  if (weight_std == 0.0) {
    w.setZero();
  } else {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        w(r, c) = weight_std * rng.normal();
      }
    }
  }
  mlp.biases.back().setConstant(bias_const);
}

Matrix mlp_forward(const Mlp& mlp, const Matrix& x, MlpCache* cache) {
  if (x.rows() != mlp.input_dim()) {
    throw DimensionError("mlp_forward: input rows " + std::to_string(x.rows()) +
                         " != layer size " + std::to_string(mlp.input_dim()));
  }
  if (cache) {
    cache->input = x;
    cache->pre.clear();
  }
  Matrix h = x;
  const int n = mlp.num_layers();
  for (int i = 0; i < n; ++i) {
    Matrix pre = (mlp.weights[i] * h).colwise() + mlp.biases[i];
    if (cache) cache->pre.push_back(pre);
    if (i + 1 < n && mlp.activation == Activation::kReluHidden) {
      h = pre.cwiseMax(0.0);
    } else {
      h = std::move(pre);
    }
  }
  return h;
}

Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache,
                    const Matrix& output_grad, MlpGrads& grads) {
  const int n = mlp.num_layers();
  if (static_cast<int>(cache.pre.size()) != n ||
      cache.input.rows() != mlp.input_dim()) {
    throw ContractError("mlp_backward: cache does not match network");
  }
  if (output_grad.rows() != mlp.output_dim() ||
      output_grad.cols() != cache.input.cols()) {
    throw DimensionError("mlp_backward: output_grad shape mismatch");
  }
  if (static_cast<int>(grads.d_weights.size()) != n) {
    throw ContractError("mlp_backward: grads not sized for network");
  }

  Matrix delta = output_grad;
  for (int i = n - 1; i >= 0; --i) {
    if (i + 1 < n && mlp.activation == Activation::kReluHidden) {
      // delta arriving at layer i+1's input = post-activation of layer i;
      // gate by the sign of the cached pre-activation (subgradient 0 at 0).
      delta = delta.cwiseProduct(
          (cache.pre[i].array() > 0.0).cast<double>().matrix());
    }
    const Matrix& layer_in =
        (i == 0) ? cache.input
                 : (mlp.activation == Activation::kReluHidden
                        ? Matrix(cache.pre[i - 1].cwiseMax(0.0))
                        : cache.pre[i - 1]);
    grads.d_weights[i].noalias() += delta * layer_in.transpose();
    grads.d_biases[i].noalias() += delta.rowwise().sum();
    delta = mlp.weights[i].transpose() * delta;
  }
  return delta;  // gradient with respect to the input
}

MlpGrads zero_grads(const Mlp& mlp) {
  MlpGrads g;
  for (int i = 0; i < mlp.num_layers(); ++i) {
    g.d_weights.push_back(Matrix::Zero(mlp.weights[i].rows(),
                                       mlp.weights[i].cols()));
    g.d_biases.push_back(Vector::Zero(mlp.biases[i].size()));
  }
  return g;
}

void scale_grads(MlpGrads& g, double s) {
  for (auto& w : g.d_weights) w *= s;
  for (auto& b : g.d_biases) b *= s;
}

std::vector<ParamView> param_views(Mlp& mlp) {
  std::vector<ParamView> v;
  for (auto& w : mlp.weights) v.push_back({w.data(), w.size()});
  for (auto& b : mlp.biases) v.push_back({b.data(), b.size()});
  return v;
}

std::vector<ParamView> grad_views(MlpGrads& g) {
  std::vector<ParamView> v;
  for (auto& w : g.d_weights) v.push_back({w.data(), w.size()});
  for (auto& b : g.d_biases) v.push_back({b.data(), b.size()});
  return v;
}

Eigen::Index total_size(const std::vector<ParamView>& views) {
  Eigen::Index n = 0;
  for (const auto& v : views) n += v.size;
  return n;
}

void Adam::step(const std::vector<ParamView>& params,
                const std::vector<ParamView>& grads) {
  if (params.size() != grads.size()) {
    throw DimensionError("Adam::step: param/grad block count mismatch");
  }
  if (first_moment_.empty()) {
    for (const auto& p : params) {
      first_moment_.push_back(Vector::Zero(p.size));
      second_moment_.push_back(Vector::Zero(p.size));
    }
  }
  if (first_moment_.size() != params.size()) {
    throw DimensionError("Adam::step: state/param block count mismatch");
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_count_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size != grads[k].size ||
        params[k].size != first_moment_[k].size()) {
      throw DimensionError("Adam::step: block shape mismatch");
    }
    Eigen::Map<Vector> p(params[k].data, params[k].size);
    Eigen::Map<const Vector> g(grads[k].data, grads[k].size);
    Vector& m = first_moment_[k];
    Vector& v = second_moment_[k];
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v.array().matrix() +
        (1.0 - cfg_.beta2) * g.array().square().matrix();
    const Vector m_hat = m / bc1;
    const Vector v_hat = v / bc2;
    if (cfg_.weight_decay != 0.0) {
      p -= cfg_.lr * cfg_.weight_decay * p;
    }
    p.array() -= cfg_.lr * m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
  }
}

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<ParamView>& params,
                           const std::vector<ParamView>& analytic_grads,
                           double tolerance, double step) {
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k].size; ++i) {
      double& p = params[k].data[i];
      const double saved = p;
      p = saved + step;
      const double up = loss_fn();
      p = saved - step;
      const double down = loss_fn();
      p = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite loss");
      }
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = analytic_grads[k].data[i];
      const double denom =
          std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      const double rel = std::abs(numeric - analytic) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_index = i;
        report.worst_param = static_cast<int>(k);
      }
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

Normalizer Normalizer::identity(int dim) {
  Normalizer n;
  n.mean = Vector::Zero(dim);
  n.inv_std = Vector::Ones(dim);
  return n;
}

Normalizer Normalizer::fit(const Matrix& samples) {
  Normalizer n;
  n.mean = samples.rowwise().mean();
  Matrix centered = samples.colwise() - n.mean;
  Vector var = centered.array().square().rowwise().mean();
  n.inv_std = (var.array().sqrt() + 1e-8).inverse();
  return n;
}

Vector Normalizer::apply(const Vector& x) const {
  if (x.size() != mean.size()) {
    throw DimensionError("Normalizer::apply: dimension mismatch");
  }
  return (x - mean).cwiseProduct(inv_std);
}

Matrix Normalizer::apply(const Matrix& x) const {
  if (x.rows() != mean.size()) {
    throw DimensionError("Normalizer::apply: dimension mismatch");
  }
  return (x.colwise() - mean).array().colwise() * inv_std.array();
}

}  // namespace korr
