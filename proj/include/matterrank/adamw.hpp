#pragma once

// AdamW with decoupled weight decay over a flat parameter buffer.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace matterrank::finetune {

struct AdamWConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  // Linear warmup for the first `warmup_steps` updates, constant afterwards.
  std::uint64_t warmup_steps = 0;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return t_; }

  double current_lr() const {
    if (cfg_.warmup_steps == 0 || t_ >= cfg_.warmup_steps)
      return cfg_.learning_rate;
    return cfg_.learning_rate * static_cast<double>(t_ + 1) /
           static_cast<double>(cfg_.warmup_steps);
  }

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("adamw: parameter/gradient size mismatch");
    if (m_.empty()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    } else if (m_.size() != params.size()) {
      throw std::invalid_argument("adamw: parameter count changed mid-run");
    }
    const double lr = current_lr();
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i] * grads[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      const double update =
          lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon) +
                cfg_.weight_decay * params[i]);
      params[i] -= update;
    }
  }

  // Moment state for exact resume.
  const std::vector<double>& m() const { return m_; }
  const std::vector<double>& v() const { return v_; }
  void restore(std::vector<double> m, std::vector<double> v,
               std::uint64_t steps) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = steps;
  }

 private:
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace matterrank::finetune
