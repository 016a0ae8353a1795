#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "steerkit/tensor.hpp"

namespace steerkit {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);

// base_lr * 0.5 * (1 + cos(pi * step / total_steps)); step must lie in [0, total_steps].
double cosine_lr(long step, long total_steps, double base_lr);
OptimizerKind parse_optimizer(std::string_view name);

// Sums per-example gradients for a fixed parameter list.
class GradientAccumulator {
 public:
  explicit GradientAccumulator(const std::vector<Tensor>& params);

  void add(const Gradients& grads);
  void scale(double factor);
  std::vector<std::vector<double>>& values() { return sums_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> sums_;
};

// Global-norm clipping followed by plain gradient descent or Adam.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<Tensor> params, double clip_norm = 1.0);

  // Updates parameters in place; returns the gradient norm before clipping.
  double step(std::vector<std::vector<double>>& grads, double lr);

  OptimizerKind kind() const { return kind_; }
  long steps() const { return steps_; }

 private:
  OptimizerKind kind_;
  std::vector<Tensor> params_;
  double clip_norm_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<std::vector<double>> m_, v_;
  long steps_ = 0;
};

}  // namespace steerkit
