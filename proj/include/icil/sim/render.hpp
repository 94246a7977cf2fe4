#pragma once

#include <array>
#include <vector>

#include "icil/sim/world.hpp"

namespace icil::sim {

enum class View { third, wrist };

struct CameraModel {
  View view = View::third;
  int resolution = 32;
  float window = 1.0f;  // world width covered; the third view always covers [0,1]

  static CameraModel third(const WorldParams& params);
  static CameraModel wrist(const WorldParams& params);
  void validate() const;
};

/// Row-major HWC float image, values in [0,1].
struct Image {
  int resolution = 0;
  std::vector<float> rgb;

  std::array<float, 3> pixel(int u, int v) const;
  bool operator==(const Image&) const = default;
};

using Rgb = std::array<float, 3>;

/// Fixed class-id palettes. Objects and receptacles use disjoint hues.
Rgb object_color(int class_id);
Rgb receptacle_color(int class_id);
inline constexpr Rgb kBackground{0.12f, 0.12f, 0.12f};
inline constexpr Rgb kOffTable{0.0f, 0.0f, 0.0f};
inline constexpr Rgb kMarker{1.0f, 1.0f, 1.0f};

struct Pixel {
  float u = 0.0f;
  float v = 0.0f;
};

/// Orthographic third-view projection: u = x * G, v = (1 - y) * G.
Pixel project_to_pixel(float x, float y, const CameraModel& camera);

/// Receptacles, then objects, then (third view only) the gripper marker.
/// The wrist view is centred on the gripper and covers `window` world units.
Image render(const WorldState& state, const CameraModel& camera);

}  // namespace icil::sim
