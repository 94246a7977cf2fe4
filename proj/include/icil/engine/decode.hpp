#pragma once

#include <deque>
#include <vector>

#include "icil/model/policy.hpp"

namespace icil::engine {

/// Appends `tokens` to the cache and returns the hidden states of the new
/// positions. Runs without gradient tracking. Throws model::ContextOverflowError.
num::Tensor kv_decode(const model::PolicyModel& model, model::KVCache& cache, const num::Tensor& tokens);

/// Chunks issued at earlier steps, combined with exponential weights that
/// favour the oldest prediction covering the current step.
class EnsembleBuffer {
 public:
  EnsembleBuffer(int horizon, int action_dim, float decay);

  /// chunk holds horizon * action_dim values; slot j predicts step issue_step + j.
  void push(int issue_step, std::vector<float> chunk);
  /// Drops chunks that no longer cover `step`.
  void prune(int step);
  std::size_t size() const { return chunks_.size(); }
  int horizon() const { return horizon_; }
  int action_dim() const { return action_dim_; }
  float decay() const { return decay_; }

  struct Entry {
    int issue_step;
    std::vector<float> chunk;
  };
  const std::deque<Entry>& entries() const { return chunks_; }

 private:
  int horizon_;
  int action_dim_;
  float decay_;
  std::deque<Entry> chunks_;  // oldest first
};

/// sum_i w_i a_i / sum_i w_i over chunks covering `step`, w_i = exp(-m * i)
/// with i = 0 for the oldest. Throws std::logic_error if nothing covers `step`.
std::vector<float> temporal_ensemble(const EnsembleBuffer& buffer, int step);

}  // namespace icil::engine
