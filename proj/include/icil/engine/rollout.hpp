#pragma once

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "icil/engine/decode.hpp"
#include "icil/model/policy.hpp"
#include "icil/seqdata/record.hpp"
#include "icil/sim/expert.hpp"

namespace icil::engine {

using Trace = std::array<float, data::kTraceDim>;

/// Token-level interface the rollout loop drives. Per step the loop calls
/// feed_state, optionally decode_trace, feed_trace, decode_chunk, feed_action.
class RolloutPolicy {
 public:
  virtual ~RolloutPolicy() = default;
  virtual int horizon() const = 0;
  /// Clears any context and feeds the prompt demonstrations.
  virtual void begin(std::span<const data::Trajectory* const> prompts) = 0;
  virtual void feed_state(const data::Observation& obs) = 0;
  virtual Trace decode_trace() = 0;
  /// nullptr feeds the zero-vector trace.
  virtual void feed_trace(const Trace* trace) = 0;
  /// H actions in world units.
  virtual std::vector<float> decode_chunk() = 0;
  virtual void feed_action(const sim::Action& executed) = 0;
  /// Tokens a step will append, compared against remaining_context before it starts.
  virtual int remaining_context() const = 0;
};

/// The trained transformer behind the RolloutPolicy interface, using a KV cache.
class ModelPolicy final : public RolloutPolicy {
 public:
  /// prompt_reasoning=false feeds zero traces for prompt steps (TO and ICRT-style variants).
  ModelPolicy(const model::PolicyModel& model, bool prompt_reasoning);

  int horizon() const override { return model_.config().chunk_horizon; }
  void begin(std::span<const data::Trajectory* const> prompts) override;
  void feed_state(const data::Observation& obs) override;
  Trace decode_trace() override;
  void feed_trace(const Trace* trace) override;
  std::vector<float> decode_chunk() override;
  void feed_action(const sim::Action& executed) override;
  int remaining_context() const override { return model_.config().max_context - cache_.length; }
  const model::KVCache& cache() const { return cache_; }

 private:
  num::Tensor feed(const num::Tensor& token);

  const model::PolicyModel& model_;
  bool prompt_reasoning_;
  model::KVCache cache_;
  num::Tensor last_hidden_;
};

/// Replays a fixed action sequence as chunks (past-end slots repeat the last action).
class ReplayPolicy final : public RolloutPolicy {
 public:
  ReplayPolicy(std::vector<sim::Action> actions, int horizon);

  int horizon() const override { return horizon_; }
  void begin(std::span<const data::Trajectory* const>) override { step_ = 0; }
  void feed_state(const data::Observation&) override {}
  Trace decode_trace() override { return {}; }
  void feed_trace(const Trace*) override {}
  std::vector<float> decode_chunk() override;
  void feed_action(const sim::Action&) override { ++step_; }
  int remaining_context() const override { return 1 << 30; }

 private:
  std::vector<sim::Action> actions_;
  int horizon_;
  int step_ = 0;
};

struct RolloutOptions {
  int reasoning_interval = 1;  // decode a trace when step % k == 0; 0 never decodes
  int max_steps = 200;
  float ensemble_decay = 0.1f;

  void validate() const;
};

struct RolloutResult {
  float score = 0.0f;
  int steps = 0;
  int trace_decodes = 0;
  bool overflow = false;
  std::vector<std::pair<int, Trace>> traces;  // (step, decoded trace)
  std::vector<sim::Action> actions;           // executed
  sim::WorldState final_state;
};

/// Closed-loop episode from `start`: stops on full success, max_steps or context overflow.
RolloutResult rollout(RolloutPolicy& policy, const sim::WorldParams& params, const sim::WorldState& start,
                      const sim::TaskSpec& task, std::span<const data::Trajectory* const> prompts,
                      const RolloutOptions& options);

}  // namespace icil::engine
