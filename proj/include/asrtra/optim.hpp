#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "asrtra/autodiff.hpp"
#include "asrtra/error.hpp"

namespace asrtra::optim {

using ad::TensorPtr;

/// Plain gradient descent: p <- p - lr * grad. Tensors without a gradient
/// buffer are left untouched.
inline void sgd_step(const std::vector<TensorPtr>& params, double lr) {
  for (const auto& t : params) {
    if (t->grad.empty()) continue;
    for (std::size_t i = 0; i < t->size(); ++i) t->data[i] -= lr * t->grad[i];
  }
}

inline double grad_norm(const std::vector<TensorPtr>& params) {
  double ss = 0.0;
  for (const auto& t : params)
    for (double g : t->grad) ss += g * g;
  return std::sqrt(ss);
}

inline bool grads_finite(const std::vector<TensorPtr>& params) {
  for (const auto& t : params)
    for (double g : t->grad)
      if (!std::isfinite(g)) return false;
  return true;
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
inline double clip_grad_norm(const std::vector<TensorPtr>& params, double max_norm) {
  const double n = grad_norm(params);
  if (max_norm > 0 && n > max_norm) {
    const double s = max_norm / n;
    for (const auto& t : params)
      for (double& g : t->grad) g *= s;
  }
  return n;
}

enum class Kind { sgd_momentum, adam };

inline Kind parse_kind(const std::string& s) {
  if (s == "sgd_momentum") return Kind::sgd_momentum;
  if (s == "adam") return Kind::adam;
  throw ConfigError("optimizer", "unknown optimizer '" + s + "'");
}

inline std::string to_string(Kind k) { return k == Kind::adam ? "adam" : "sgd_momentum"; }

struct OptimizerConfig {
  Kind kind = Kind::sgd_momentum;
  double lr = 3e-3;
  double momentum = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

/// Stateful optimizer over a fixed list of tensors.
class Optimizer {
 public:
  Optimizer(std::vector<TensorPtr> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p->size(), 0.0);
      if (cfg_.kind == Kind::adam) v_.emplace_back(p->size(), 0.0);
    }
  }

  void zero_grad() {
    for (const auto& p : params_) p->zero_grad();
  }

  /// Applies one update from the accumulated gradients; returns the
  /// pre-clipping gradient norm.
  double step() {
    const double norm = clip_grad_norm(params_, cfg_.clip_norm);
    ++t_;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      if (p.grad.empty()) continue;
      auto& m = m_[k];
      if (cfg_.kind == Kind::sgd_momentum) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = cfg_.momentum * m[i] + p.grad[i];
          p.data[i] -= cfg_.lr * m[i];
        }
      } else {
        auto& v = v_[k];
        const double b1 = cfg_.momentum, b2 = cfg_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double g = p.grad[i];
          m[i] = b1 * m[i] + (1.0 - b1) * g;
          v[i] = b2 * v[i] + (1.0 - b2) * g * g;
          p.data[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
      }
    }
    return norm;
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  std::vector<TensorPtr> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace asrtra::optim
