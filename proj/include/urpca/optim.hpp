#pragma once

#include <cstdint>
#include <vector>

#include "urpca/tensor.hpp"

namespace urpca {

// base_lr * (1 - iter/total_iter)^0.9. Iterations past total_iter clamp the
// rate to zero (reported once on stderr); total_iter must be positive.
double poly_lr(double base_lr, int64_t iter, int64_t total_iter);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction over a fixed parameter list. step() applies the
// update and then zeroes every gradient, so grads accumulate exactly one
// backward pass per step unless the caller stacks several deliberately.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  void step(double lr);

  int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }

  // Checkpoint access; moment buffers are index-aligned with the parameter
  // list handed to the constructor.
  size_t size() const { return params_.size(); }
  std::vector<double>& first_moment(size_t i) { return m_[i]; }
  std::vector<double>& second_moment(size_t i) { return v_[i]; }
  const std::vector<double>& first_moment(size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(size_t i) const { return v_[i]; }
  void set_step_count(int64_t n) { step_count_ = n; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t step_count_ = 0;
  AdamConfig cfg_;
};

}  // namespace urpca
