#pragma once

#include <array>
#include <functional>
#include <string>

#include "icil/seqdata/trajectory.hpp"

namespace fixtures {

/// Small synthetic trajectory with gripper xy given by `path(t)`, blank images
/// and actions a_t = (t, -t, 0.5t, 1) / 1000 so rows are distinguishable.
inline icil::data::Trajectory synthetic(const std::string& label, int length,
                                        std::function<std::array<float, 2>(int)> path = nullptr, int g = 8,
                                        int c = 8) {
  icil::data::Trajectory t;
  t.task_label = label;
  t.third_resolution = g;
  t.wrist_resolution = c;
  t.length = length;
  const auto n = static_cast<std::size_t>(length);
  t.third.assign(n * t.third_size(), 0.25f);
  t.wrist.assign(n * t.wrist_size(), 0.5f);
  t.trace.assign(n * icil::data::kTraceDim, 0.0f);
  for (int i = 0; i < length; ++i) {
    const auto xy = path ? path(i) : std::array<float, 2>{0.1f + 0.8f * i / length, 0.5f};
    t.proprio.insert(t.proprio.end(), {xy[0], xy[1], 0.4f, 1.0f});
    const float f = static_cast<float>(i) / 1000.0f;
    t.action.insert(t.action.end(), {f, -f, 0.5f * f, 0.001f});
  }
  return t;
}

}  // namespace fixtures
