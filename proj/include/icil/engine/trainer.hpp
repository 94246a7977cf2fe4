#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "icil/model/policy.hpp"
#include "icil/numerics/adamw.hpp"
#include "icil/seqdata/sequence.hpp"

namespace icil::engine {

struct TrainConfig {
  int steps = 5000;
  std::uint64_t seed = 0;
  num::AdamWConfig adamw;
  float grad_clip = 1.0f;
  int warmup_steps = 100;     // linear warmup, then cosine decay
  float min_lr_ratio = 0.1f;  // final lr = min_lr_ratio * adamw.lr
  int min_prompt = 1;
  int max_prompt = 3;
  int sequences_per_step = 1;  // gradients are averaged over this many sequences
  data::SequenceOptions sequence;
  int checkpoint_interval = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_dir;
};

struct LossRecord {
  int step = 0;  // 1-based optimizer step
  float total = 0.0f;
  float action = 0.0f;
  float reasoning = 0.0f;
  float grad_norm = 0.0f;
  float lr = 0.0f;
};

struct TrainResult {
  std::vector<LossRecord> history;  // one record per optimizer step
};

/// Learning rate at optimizer step `step` (1-based).
float learning_rate(const TrainConfig& config, int step);

/// Teacher-forced training on sequences sampled from `dataset` (grouped by task
/// label). Deterministic for a fixed seed and model initialization. Throws
/// num::NonFiniteError with the step and task on a non-finite loss or gradient.
TrainResult train(model::PolicyModel& model, const std::vector<data::Trajectory>& dataset, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_step = {});

/// Mean of `total` over records [begin, end).
float window_mean(const std::vector<LossRecord>& history, std::size_t begin, std::size_t end);

}  // namespace icil::engine
