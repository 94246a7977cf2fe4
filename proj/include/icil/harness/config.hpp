#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "icil/engine/rollout.hpp"
#include "icil/engine/trainer.hpp"
#include "icil/model/policy.hpp"
#include "icil/sim/world.hpp"

namespace icil::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataPlan {
  int poke_tasks = 8;
  int pick_place_tasks = 8;
  int demos_per_task = 50;
  int max_level = 4;  // difficulty levels 0..max_level, see level_distractors
  double test_fraction = 0.375;
  std::uint64_t seed = 1;  // task choice, split and demo scenes
  float expert_noise = 0.0f;
};

struct EvalPlan {
  int rollouts = 10;  // per (task, prompt config)
  std::vector<std::string> prompt_configs{"d0", "d1", "dr"};
  int n_prompt = 1;
  int max_steps_factor = 3;  // rollout budget = factor * expert episode length
  int reasoning_interval = 1;
  float ensemble_decay = 0.1f;
  std::vector<int> intervals{1, 8, 16, 32, 0};
  std::string sweep_prompt_config = "d0";
  int threads = 1;
};

struct TrainPlan {
  int steps = 5000;
  float lr = 1e-3f;
  float weight_decay = 0.01f;
  float grad_clip = 1.0f;
  int warmup_steps = 200;
  float min_lr_ratio = 0.1f;
  int min_prompt = 1;
  int max_prompt = 3;
  int sequences_per_step = 1;
  int log_interval = 50;
  int checkpoint_interval = 0;
};

/// Everything a harness run needs. Text form is one `key = value` per line;
/// `#` starts a comment. Unknown keys are errors.
struct HarnessConfig {
  std::uint64_t seed = 0;  // training and evaluation seed
  sim::WorldParams world;
  DataPlan data;
  model::ModelConfig model;
  TrainPlan train;
  EvalPlan eval;

  static HarnessConfig parse(const std::string& text);
  static HarnessConfig load(const std::filesystem::path& path);
  /// Every key with its resolved value, in a fixed order; parse(to_text()) reproduces it.
  std::string to_text() const;
  void save(const std::filesystem::path& path) const;
  void validate() const;
  /// Documented keys with their defaults.
  static std::vector<std::pair<std::string, std::string>> documented_keys();
};

/// Variant flags: "ours", "to" (target-only), "icrt" (no reasoning).
struct Variant {
  std::string name;
  bool prompt_reasoning = true;
  bool target_reasoning = true;
  bool reasoning_dropout = true;

  static Variant parse(const std::string& name);
};

engine::TrainConfig train_config(const HarnessConfig& config, const Variant& variant);
model::ModelConfig model_config(const HarnessConfig& config);

}  // namespace icil::harness
