#include "urpca/optim.hpp"

#include <cmath>
#include <iostream>

namespace urpca {

double poly_lr(double base_lr, int64_t iter, int64_t total_iter) {
  if (total_iter <= 0) throw ConfigError("poly_lr: total_iter must be positive");
  if (iter < 0) throw ConfigError("poly_lr: negative iteration index");
  if (iter > total_iter) {
    static bool warned = false;
    if (!warned) {
      std::cerr << "poly_lr: iteration " << iter << " past total " << total_iter
                << ", learning rate clamped to 0\n";
      warned = true;
    }
    return 0.0;
  }
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(total_iter);
  return base_lr * std::pow(frac, 0.9);
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad())
      throw Error("adam_step: parameter " + std::to_string(i) + " has no gradient");
    auto g = p.grad();
    auto x = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < m.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      x[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
    p.zero_grad();
  }
}

}  // namespace urpca
