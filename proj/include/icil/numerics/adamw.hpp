#pragma once

#include <cstdint>
#include <vector>

#include "icil/numerics/tensor.hpp"

namespace icil::num {

struct AdamWConfig {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float weight_decay = 0.01f;
  float eps = 1e-8f;
};

/// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  /// Applies one update from the current grads. Throws std::logic_error if
  /// any parameter has no gradient buffer.
  void step();
  void zero_grad();

  /// Scales all grads so their global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  float clip_grad_norm(float max_norm);

  void set_lr(float lr) { config_.lr = lr; }
  const AdamWConfig& config() const { return config_; }
  std::int64_t step_count() const { return step_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  AdamWConfig config_;
  std::int64_t step_ = 0;
};

}  // namespace icil::num
