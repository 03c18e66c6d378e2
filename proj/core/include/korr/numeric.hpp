#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "korr/errors.hpp"
#include "korr/rng.hpp"

namespace korr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Shape-checked matrix product. Thin wrapper over Eigen that turns the
// static-shape assumption into a runtime contract.
Matrix matmul(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);

enum class Activation {
  kReluHidden,  // ReLU on hidden layers, identity on the last
  kIdentity,    // purely linear network
};

// Fully connected network. Weights are (out x in), biases are out-vectors.
// Batched evaluation treats columns as samples.
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Activation activation = Activation::kReluHidden;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(weights.size()); }
};

// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] initialization.
Mlp make_mlp(const std::vector<int>& layer_sizes, Rng& rng,
             Activation activation = Activation::kReluHidden);

// Overwrite the last layer: weights ~ N(0, std), bias = bias_const.
// std = 0 zeroes the layer (zero-correction actor head).
void init_last_layer(Mlp& mlp, double weight_std, double bias_const, Rng& rng);

// Pre-activations of every layer plus the input, as needed by the backward
// pass. A cache is only valid for the forward call that produced it.
struct MlpCache {
  Matrix input;
  std::vector<Matrix> pre;  // pre[i]: pre-activation of layer i
};

struct MlpGrads {
  std::vector<Matrix> d_weights;
  std::vector<Vector> d_biases;
};

MlpGrads zero_grads(const Mlp& mlp);
void scale_grads(MlpGrads& g, double s);

// x: (input_dim x batch). Returns (output_dim x batch).
Matrix mlp_forward(const Mlp& mlp, const Matrix& x, MlpCache* cache = nullptr);

// Backpropagates output_grad (output_dim x batch) through the cached forward
// pass. Accumulates into `grads` and returns the input gradient.
// ReLU subgradient at exactly 0 is 0.
Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache,
                    const Matrix& output_grad, MlpGrads& grads);

// Flat view over a parameter (or gradient) block.
struct ParamView {
  double* data;
  Eigen::Index size;
};

std::vector<ParamView> param_views(Mlp& mlp);
std::vector<ParamView> grad_views(MlpGrads& g);
Eigen::Index total_size(const std::vector<ParamView>& views);

// Adam with bias correction; weight decay optional (0 = plain Adam).
struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Moments are allocated lazily on the first step and must keep the same
  // shapes afterwards.
  void step(const std::vector<ParamView>& params,
            const std::vector<ParamView>& grads);

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::vector<Vector> first_moment_;
  std::vector<Vector> second_moment_;
  std::int64_t step_count_ = 0;
};

// Central finite-difference gradient verification.
struct GradCheckReport {
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  int worst_param = -1;
  bool passed = false;
};

// loss_fn must be deterministic and reflect the current parameter values;
// analytic grads are compared against (f(p+h) - f(p-h)) / 2h.
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<ParamView>& params,
                           const std::vector<ParamView>& analytic_grads,
                           double tolerance, double step = 1e-5);

// Per-feature affine normalization fitted from data columns.
struct Normalizer {
  Vector mean;
  Vector inv_std;

  bool empty() const { return mean.size() == 0; }
  static Normalizer identity(int dim);
  static Normalizer fit(const Matrix& samples);  // samples: (dim x n)
  Vector apply(const Vector& x) const;
  Matrix apply(const Matrix& x) const;
};

}  // namespace korr
