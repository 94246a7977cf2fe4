#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "icil/engine/rollout.hpp"
#include "icil/sim/world.hpp"

namespace icil::harness {

enum class FailureClass { none, trace_error, grasp_failure, placement_failure, poke_failure, overflow };
inline constexpr std::size_t kFailureClassCount = 6;

std::string_view to_string(FailureClass f);
FailureClass parse_failure_class(std::string_view s);

/// Classifies a finished rollout. Score 1 is `none`. Otherwise, in order:
/// overflow; trace_error when the final point of the first decoded trace is
/// nearer (third-view pixels) to another object or receptacle than to the
/// task's goal entity (target object for poke, target receptacle for
/// pick-and-place); then poke_failure, grasp_failure (never held) or
/// placement_failure (held, not placed).
FailureClass classify_failure(const engine::RolloutResult& rollout, const sim::TaskSpec& task,
                              const sim::WorldState& start, const sim::WorldParams& params);

struct RolloutRecord {
  std::string variant;
  std::string task;
  std::string prompt_config;
  int k = 1;  // reasoning interval, 0 = never
  std::uint64_t seed = 0;
  int index = 0;  // rollout index within (task, prompt config)
  float score = 0.0f;
  int steps = 0;
  int max_steps = 0;
  int trace_decodes = 0;
  FailureClass failure = FailureClass::none;
};

struct MetricsRow {
  std::string variant;
  std::string task;
  std::string prompt_config;
  int k = 1;
  double mean_score = 0.0;
  int n = 0;
  std::array<int, kFailureClassCount> failures{};  // counts indexed by FailureClass

  double score_sum() const;
};

class MetricsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Orders by (variant, task, prompt_config, k) with k = 0 sorting last.
bool metrics_key_less(const MetricsRow& a, const MetricsRow& b);

/// One row per (variant, task, prompt_config, k), sorted.
std::vector<MetricsRow> aggregate(const std::vector<RolloutRecord>& records);
/// Combines rows sharing a key (e.g. the same plan run under several seeds).
std::vector<MetricsRow> merge(const std::vector<MetricsRow>& rows);

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);
std::string rollouts_csv(const std::vector<RolloutRecord>& records);

/// Plain-text tables: success by task, by prompt config, by reasoning
/// interval, and the failure-class breakdown, per variant.
std::string summary(const std::vector<MetricsRow>& rows);

}  // namespace icil::harness
