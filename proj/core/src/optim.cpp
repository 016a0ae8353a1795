#include "steerkit/optim.hpp"

#include <cmath>

namespace steerkit {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

double cosine_lr(long step, long total_steps, double base_lr) {
  if (total_steps <= 0) return base_lr;
  if (step < 0 || step > total_steps) throw ContractViolation("cosine_lr: step out of range");
  return base_lr * 0.5 *
         (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps)));
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

GradientAccumulator::GradientAccumulator(const std::vector<Tensor>& params) : params_(params) {
  for (const auto& p : params_) sums_.emplace_back(p.numel(), 0.0);
}

void GradientAccumulator::add(const Gradients& grads) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!grads.contains(params_[i])) continue;
    const auto g = grads.of(params_[i]).data();
    for (std::size_t j = 0; j < g.size(); ++j) sums_[i][j] += g[j];
  }
}

void GradientAccumulator::scale(double factor) {
  for (auto& s : sums_)
    for (auto& v : s) v *= factor;
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<Tensor> params, double clip_norm)
    : kind_(kind), params_(std::move(params)), clip_norm_(clip_norm) {
  if (kind_ == OptimizerKind::Adam) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
}

double Optimizer::step(std::vector<std::vector<double>>& grads, double lr) {
  if (grads.size() != params_.size()) throw ContractViolation("optimizer: gradient count mismatch");
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("optimizer: non-finite gradient norm");
  const double factor = (clip_norm_ > 0 && norm > clip_norm_) ? clip_norm_ / norm : 1.0;
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * factor;
      if (kind_ == OptimizerKind::Sgd) {
        w[j] -= lr * gj;
      } else {
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
        w[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
      }
    }
  }
  return norm;
}

}  // namespace steerkit
