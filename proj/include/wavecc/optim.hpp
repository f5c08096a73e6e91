#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <unordered_map>

#include "wavecc/params.hpp"

namespace wavecc {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay and bias-corrected moments. Only
/// parameters that currently require a gradient are updated.
template <class T>
class AdamW {
 public:
  AdamW(const ParamRegistry<T>& registry, AdamWConfig config) : registry_(&registry), config_(config) {}

  void step(double lr) {
    if (!(lr > 0.0)) fail(ErrorKind::kUsage, "adamw: learning rate must be positive, got " + std::to_string(lr));
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (const auto& [name, var] : registry_->entries()) {
      if (!var.requires_grad()) continue;
      Tensor<T>& theta = const_cast<Var<T>&>(var).mutable_value();
      auto& [m, v] = moments_[name];
      if (m.size() != theta.size()) {
        m.assign(theta.size(), 0.0);
        v.assign(theta.size(), 0.0);
      }
      const bool has_grad = var.has_grad();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = has_grad ? static_cast<double>(var.grad()[i]) : 0.0;
        double t = static_cast<double>(theta[i]);
        t -= lr * config_.weight_decay * t;
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        t -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        theta[i] = static_cast<T>(t);
      }
    }
  }

  long step_count() const { return step_; }

 private:
  const ParamRegistry<T>* registry_;
  AdamWConfig config_;
  long step_ = 0;
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

/// Cosine decay from lr_max to lr_min over `total` steps (step is 0-based).
inline double cosine_lr(long step, long total, double lr_max, double lr_min) {
  if (total <= 1) return lr_max;
  const double t = static_cast<double>(std::min(step, total - 1)) / static_cast<double>(total - 1);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace wavecc
