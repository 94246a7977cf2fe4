#include "icil/numerics/adamw.hpp"

#include <cmath>
#include <stdexcept>

namespace icil::num {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void AdamW::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw std::logic_error("AdamW::step: parameter " + std::to_string(i) + " (shape " +
                             shape_str(params_[i].shape()) + ") has no gradient");
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(step_));
  const float b1 = config_.beta1;
  const float b2 = config_.beta2;
  const float decay = 1.0f - config_.lr * config_.weight_decay;
  const float step_size = static_cast<float>(config_.lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].data();
    auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      w[j] *= decay;
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + config_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

float AdamW::clip_grad_norm(float max_norm) {
  double total = 0.0;
  for (const auto& p : params_) {
    for (float g : p.grad()) total += static_cast<double>(g) * g;
  }
  const auto norm = static_cast<float>(std::sqrt(total));
  if (norm > max_norm && norm > 0.0f) {
    const float factor = max_norm / norm;
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      for (float& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace icil::num
