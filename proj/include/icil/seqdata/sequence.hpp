#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "icil/seqdata/trajectory.hpp"

namespace icil::data {

/// Token roles within one step. Step s occupies positions 3s, 3s+1, 3s+2.
enum class Role : int { state = 0, reasoning = 1, action = 2 };
inline constexpr int kTokensPerStep = 3;

struct SplitSpec {
  std::vector<std::string> train_tasks;  // sorted
  std::vector<std::string> test_tasks;   // sorted
  std::uint64_t seed = 0;

  bool is_train(const std::string& label) const;
  bool is_test(const std::string& label) const;
};

/// Seeded shuffle of the distinct labels, then the last round(fraction * n) go to test.
/// Throws std::invalid_argument if either side would be empty.
SplitSpec split_tasks(std::vector<std::string> task_labels, double test_fraction, std::uint64_t seed);

/// Which trace inputs a variant sees. Off means zero-vector traces; for the
/// target it also removes the reasoning loss.
struct SequenceOptions {
  int chunk_horizon = 8;
  bool prompt_reasoning = true;
  bool target_reasoning = true;
  bool reasoning_dropout = true;  // random target-trace masking (traces::sample_mask)
};

/// Prompt episodes followed by a single target episode, laid out [s, r, a] per step.
/// Episodes are referenced, not copied: the source trajectories must outlive it.
struct TrainingSequence {
  std::string task_label;
  std::vector<const Trajectory*> episodes;  // first n_prompt are prompts
  int n_prompt = 0;
  int total_steps = 0;
  int target_offset = 0;  // first step index of the target episode
  int target_steps = 0;
  int chunk_horizon = 0;

  std::vector<float> reasoning_inputs;      // total_steps * 10, the trace fed as the reasoning token
  std::vector<float> trace_labels;          // total_steps * 10
  std::vector<bool> loss_mask;              // per token position (3 * total_steps)
  std::vector<bool> reasoning_input_mask;   // per target step: true when the input trace is zeroed
  std::vector<float> chunk_actions;         // target_steps * H * 4
  std::vector<bool> chunk_valid;            // target_steps * H

  int token_count() const { return total_steps * kTokensPerStep; }
  static Role role_at(int position) { return static_cast<Role>(position % kTokensPerStep); }

  /// Returns (episode index, step within episode) for a global step.
  std::pair<int, int> locate(int step) const;
};

/// Randomly picks n_prompt episodes as prompts and one further as target.
/// Throws std::invalid_argument on mixed labels or too few episodes.
TrainingSequence build_sequence(std::span<const Trajectory> subset, int n_prompt, std::mt19937_64& rng,
                                const SequenceOptions& options = {});
TrainingSequence build_sequence(std::span<const Trajectory* const> subset, int n_prompt, std::mt19937_64& rng,
                                const SequenceOptions& options = {});

/// Deterministic assembly from explicit prompt and target episodes. `target_mask`
/// lists target steps whose reasoning input is zeroed.
TrainingSequence assemble_sequence(std::vector<const Trajectory*> prompts, const Trajectory& target,
                                   const SequenceOptions& options, const std::vector<int>& target_mask = {});

struct ChunkLabels {
  std::vector<float> actions;  // H * 4
  std::vector<bool> valid;     // H
};

/// actions[t..t+H-1]; slots past the end repeat the final action and are invalid.
ChunkLabels chunk_labels(const Trajectory& trajectory, int t, int horizon);

}  // namespace icil::data
