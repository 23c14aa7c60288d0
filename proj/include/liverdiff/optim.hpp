#pragma once

#include "liverdiff/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace liverdiff {

/// Linear warm-up to `peak` over `warmup` steps, then cosine decay to zero
/// at `total` steps.
struct WarmupCosine {
  double peak = 2.4e-4;
  int warmup = 100;
  int total = 20000;

  [[nodiscard]] double operator()(int step) const {
    if (step < warmup) return peak * static_cast<double>(step) / warmup;
    if (total <= warmup) return peak;
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / (total - warmup));
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

/// Adam with decoupled weight decay. Parameters flagged non-trainable are
/// left untouched.
template <typename S>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW(nn::ParamList<S> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.push_back(nn::Mat<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(nn::Mat<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
    const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      if (!p->trainable) continue;
      m_[i] = static_cast<S>(opts_.beta1) * m_[i] + static_cast<S>(1.0 - opts_.beta1) * p->grad;
      v_[i] = static_cast<S>(opts_.beta2) * v_[i] +
              static_cast<S>(1.0 - opts_.beta2) * p->grad.cwiseProduct(p->grad);
      const auto mhat = m_[i].array() / static_cast<S>(bc1);
      const auto vhat = v_[i].array() / static_cast<S>(bc2);
      p->value.array() -= static_cast<S>(lr) *
                          (mhat / (vhat.sqrt() + static_cast<S>(opts_.eps)) +
                           static_cast<S>(opts_.weight_decay) * p->value.array());
    }
  }

  [[nodiscard]] int steps_taken() const { return t_; }

 private:
  nn::ParamList<S> params_;
  Options opts_;
  std::vector<nn::Mat<S>> m_;
  std::vector<nn::Mat<S>> v_;
  int t_ = 0;
};

}  // namespace liverdiff
