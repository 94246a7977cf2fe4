#include "icil/traces/traces.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "icil/sim/render.hpp"

namespace icil::traces {

std::array<float, data::kTraceDim> ReasoningTrace::flat() const {
  std::array<float, data::kTraceDim> out{};
  for (int j = 0; j < kTracePoints; ++j) {
    out[static_cast<std::size_t>(2 * j)] = points[static_cast<std::size_t>(j)][0];
    out[static_cast<std::size_t>(2 * j + 1)] = points[static_cast<std::size_t>(j)][1];
  }
  return out;
}

std::array<int, kTracePoints> trace_indices(int length, int t) {
  if (length <= 0) throw std::invalid_argument("trace of an empty trajectory");
  if (t < 0 || t >= length) {
    throw std::invalid_argument("trace step " + std::to_string(t) + " outside [0, " + std::to_string(length) + ")");
  }
  const int horizon = length - 1 - t;
  std::array<int, kTracePoints> idx{};
  // round_half_up(j * horizon / 4) == floor((2 * j * horizon + 4) / 8) in exact integer arithmetic.
  for (int j = 0; j < kTracePoints; ++j) idx[static_cast<std::size_t>(j)] = t + (2 * j * horizon + 4) / 8;
  return idx;
}

ReasoningTrace generate_trace(const data::Trajectory& trajectory, int t) {
  if (trajectory.length <= 0 || trajectory.proprio.size() < static_cast<std::size_t>(trajectory.length) * 4) {
    throw std::invalid_argument("trace of an empty trajectory");
  }
  const sim::CameraModel camera{sim::View::third, trajectory.third_resolution, 1.0f};
  const auto g = static_cast<float>(trajectory.third_resolution);
  ReasoningTrace trace;
  trace.source_indices = trace_indices(trajectory.length, t);
  for (int j = 0; j < kTracePoints; ++j) {
    const auto p = trajectory.proprio_at(trace.source_indices[static_cast<std::size_t>(j)]);
    const auto px = sim::project_to_pixel(p[0], p[1], camera);
    trace.points[static_cast<std::size_t>(j)] = {std::clamp(px.u / g, 0.0f, 1.0f), std::clamp(px.v / g, 0.0f, 1.0f)};
  }
  return trace;
}

void augment(data::Trajectory& trajectory) {
  trajectory.trace.assign(static_cast<std::size_t>(trajectory.length) * data::kTraceDim, 0.0f);
  for (int t = 0; t < trajectory.length; ++t) {
    const auto flat = generate_trace(trajectory, t).flat();
    std::copy(flat.begin(), flat.end(), trajectory.trace.begin() + static_cast<std::ptrdiff_t>(t) * data::kTraceDim);
  }
  trajectory.has_traces = true;
}

std::vector<data::Trajectory> augment_dataset(std::vector<data::Trajectory> trajectories) {
  for (auto& t : trajectories) augment(t);
  return trajectories;
}

MaskPlan mask_with_ratio(int n_target_steps, float ratio, std::mt19937_64& rng) {
  if (n_target_steps < 0) throw std::invalid_argument("negative target step count");
  if (!(ratio >= 0.0f && ratio <= 1.0f)) throw std::invalid_argument("mask ratio outside [0, 1]");
  MaskPlan plan{ratio, {}};
  const auto count = static_cast<std::size_t>(std::floor(static_cast<double>(ratio) * n_target_steps));
  std::vector<int> all(static_cast<std::size_t>(n_target_steps));
  std::iota(all.begin(), all.end(), 0);
  std::sample(all.begin(), all.end(), std::back_inserter(plan.masked_positions), count, rng);
  return plan;
}

MaskPlan sample_mask(int n_target_steps, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  return mask_with_ratio(n_target_steps, u(rng), rng);
}

}  // namespace icil::traces
