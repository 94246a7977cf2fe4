#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace icil::data {

inline constexpr int kProprioDim = 4;
inline constexpr int kTraceDim = 10;
inline constexpr int kActionDim = 4;

/// One demonstration, stored column-wise: each array holds `length` rows.
/// Images are row-major HWC float32 in [0,1].
struct Trajectory {
  std::string task_label;
  int third_resolution = 0;
  int wrist_resolution = 0;
  int length = 0;
  bool has_traces = false;
  std::vector<float> third;    // length * G * G * 3
  std::vector<float> wrist;    // length * C * C * 3
  std::vector<float> proprio;  // length * 4: gripper x, y, z, aperture
  std::vector<float> trace;    // length * 10: five (u, v) points, zero until augmented
  std::vector<float> action;   // length * 4

  std::size_t third_size() const { return static_cast<std::size_t>(third_resolution) * third_resolution * 3; }
  std::size_t wrist_size() const { return static_cast<std::size_t>(wrist_resolution) * wrist_resolution * 3; }

  std::span<const float> third_at(int t) const { return row(third, t, third_size()); }
  std::span<const float> wrist_at(int t) const { return row(wrist, t, wrist_size()); }
  std::span<const float> proprio_at(int t) const { return row(proprio, t, kProprioDim); }
  std::span<const float> trace_at(int t) const { return row(trace, t, kTraceDim); }
  std::span<const float> action_at(int t) const { return row(action, t, kActionDim); }

  /// Throws std::invalid_argument unless every column has `length` rows,
  /// length >= 2 and the label is nonempty.
  void validate() const {
    if (task_label.empty()) throw std::invalid_argument("trajectory has an empty task label");
    if (length < 2) throw std::invalid_argument("trajectory '" + task_label + "' is shorter than 2 steps");
    if (third_resolution <= 0 || wrist_resolution <= 0) {
      throw std::invalid_argument("trajectory '" + task_label + "' has no image resolution");
    }
    const auto n = static_cast<std::size_t>(length);
    if (third.size() != n * third_size() || wrist.size() != n * wrist_size() || proprio.size() != n * kProprioDim ||
        trace.size() != n * kTraceDim || action.size() != n * kActionDim) {
      throw std::invalid_argument("trajectory '" + task_label + "' has inconsistent column sizes");
    }
  }

  bool operator==(const Trajectory&) const = default;

 private:
  static std::span<const float> row(const std::vector<float>& v, int t, std::size_t width) {
    return {v.data() + static_cast<std::size_t>(t) * width, width};
  }
};

}  // namespace icil::data
