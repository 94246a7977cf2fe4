#pragma once

#include <array>
#include <random>
#include <vector>

#include "icil/seqdata/trajectory.hpp"

namespace icil::traces {

inline constexpr int kTracePoints = 5;

/// Five future gripper positions in normalized third-view pixel coordinates.
struct ReasoningTrace {
  std::array<std::array<float, 2>, kTracePoints> points{};
  std::array<int, kTracePoints> source_indices{};

  /// (u0, v0, u1, v1, ...), the layout stored in trajectories and fed to the model.
  std::array<float, data::kTraceDim> flat() const;
  bool operator==(const ReasoningTrace&) const = default;
};

/// i_j = t + round_half_up(j * (T - 1 - t) / 4), j = 0..4.
std::array<int, kTracePoints> trace_indices(int length, int t);

/// Trace for step t, projected with the trajectory's third-view resolution.
/// Throws std::invalid_argument for an empty trajectory or t out of range.
ReasoningTrace generate_trace(const data::Trajectory& trajectory, int t);

/// Fills the trace column of every step. Other fields are left untouched.
void augment(data::Trajectory& trajectory);
std::vector<data::Trajectory> augment_dataset(std::vector<data::Trajectory> trajectories);

struct MaskPlan {
  float ratio = 0.0f;
  std::vector<int> masked_positions;  // sorted, within [0, n_target_steps)
};

/// ratio ~ U[0,1], then floor(ratio * n) positions drawn without replacement.
MaskPlan sample_mask(int n_target_steps, std::mt19937_64& rng);
MaskPlan mask_with_ratio(int n_target_steps, float ratio, std::mt19937_64& rng);

}  // namespace icil::traces
