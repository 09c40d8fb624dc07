#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "geoloc/error.hpp"
#include "geoloc/tensor.hpp"

namespace geoloc {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Multiplicative learning-rate decay applied at each epoch boundary.
  double decay_gamma = 1.0;
};

// SGD or bias-corrected Adam over the parameters of one ParameterStore.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg), lr_(cfg.lr) {
    if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(cfg.decay_gamma > 0.0 && cfg.decay_gamma <= 1.0)) throw ConfigError("decay gamma must be in (0, 1]");
  }

  double learning_rate() const noexcept { return lr_; }
  std::size_t steps() const noexcept { return t_; }
  const OptimizerConfig& config() const noexcept { return cfg_; }

  // Applies one update using Parameter::grad, then leaves gradients intact.
  void step(ParameterStore& params) {
    if (cfg_.kind == OptimizerKind::adam && m_.empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_.emplace_back(params[i].value.shape());
        v_.emplace_back(params[i].value.shape());
      }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Parameter& p = params[i];
      if (p.grad.shape() != p.value.shape()) {
        throw Error("gradient shape " + shape_str(p.grad.shape()) + " does not match parameter '" + p.name +
                    "' " + shape_str(p.value.shape()));
      }
      if (cfg_.kind == OptimizerKind::adam && (i >= m_.size() || m_[i].shape() != p.value.shape())) {
        throw Error("optimizer state does not match parameter '" + p.name + "'");
      }
    }
    ++t_;
    if (cfg_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] -= lr_ * p.grad[k];
      }
      return;
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        p.value[k] -= lr_ * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void end_epoch() { lr_ *= cfg_.decay_gamma; }

 private:
  OptimizerConfig cfg_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace geoloc
