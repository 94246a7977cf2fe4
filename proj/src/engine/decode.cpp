#include "icil/engine/decode.hpp"

#include <cmath>
#include <stdexcept>

namespace icil::engine {

num::Tensor kv_decode(const model::PolicyModel& model, model::KVCache& cache, const num::Tensor& tokens) {
  num::NoGradGuard no_grad;
  return model.transform(tokens, &cache);
}

EnsembleBuffer::EnsembleBuffer(int horizon, int action_dim, float decay)
    : horizon_(horizon), action_dim_(action_dim), decay_(decay) {
  if (horizon < 1 || action_dim < 1) throw std::invalid_argument("ensemble buffer needs horizon and width >= 1");
  if (!(decay >= 0.0f)) throw std::invalid_argument("ensemble decay must be >= 0");
}

void EnsembleBuffer::push(int issue_step, std::vector<float> chunk) {
  if (chunk.size() != static_cast<std::size_t>(horizon_) * action_dim_) {
    throw std::invalid_argument("chunk has " + std::to_string(chunk.size()) + " values, expected " +
                                std::to_string(horizon_ * action_dim_));
  }
  if (!chunks_.empty() && issue_step <= chunks_.back().issue_step) {
    throw std::invalid_argument("chunks must be pushed in increasing step order");
  }
  chunks_.push_back({issue_step, std::move(chunk)});
}

void EnsembleBuffer::prune(int step) {
  while (!chunks_.empty() && chunks_.front().issue_step + horizon_ - 1 < step) chunks_.pop_front();
}

std::vector<float> temporal_ensemble(const EnsembleBuffer& buffer, int step) {
  const int dim = buffer.action_dim();
  std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
  double total = 0.0;
  int age = 0;
  for (const auto& e : buffer.entries()) {
    const int slot = step - e.issue_step;
    if (slot < 0 || slot >= buffer.horizon()) continue;
    const double w = std::exp(-static_cast<double>(buffer.decay()) * age++);
    for (int k = 0; k < dim; ++k) acc[static_cast<std::size_t>(k)] += w * e.chunk[static_cast<std::size_t>(slot * dim + k)];
    total += w;
  }
  if (age == 0) throw std::logic_error("no buffered chunk covers step " + std::to_string(step));
  std::vector<float> out(static_cast<std::size_t>(dim));
  for (int k = 0; k < dim; ++k) out[static_cast<std::size_t>(k)] = static_cast<float>(acc[static_cast<std::size_t>(k)] / total);
  return out;
}

}  // namespace icil::engine
