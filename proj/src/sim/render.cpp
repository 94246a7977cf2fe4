#include "icil/sim/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace icil::sim {

namespace {

constexpr std::array<Rgb, 10> kObjectPalette{{
    {0.90f, 0.10f, 0.10f},  // 0 red
    {0.10f, 0.80f, 0.10f},  // 1 green
    {0.15f, 0.35f, 0.95f},  // 2 blue
    {0.95f, 0.90f, 0.10f},  // 3 yellow
    {0.90f, 0.15f, 0.90f},  // 4 magenta
    {0.10f, 0.90f, 0.90f},  // 5 cyan
    {1.00f, 0.55f, 0.00f},  // 6 orange
    {0.55f, 0.25f, 0.85f},  // 7 violet
    {0.60f, 1.00f, 0.45f},  // 8 lime
    {1.00f, 0.60f, 0.75f},  // 9 pink
}};

constexpr std::array<Rgb, 4> kReceptaclePalette{{
    {0.50f, 0.33f, 0.18f},  // 0 brown box
    {0.40f, 0.42f, 0.58f},  // 1 slate bowl
    {0.25f, 0.45f, 0.32f},  // 2 moss tray
    {0.58f, 0.28f, 0.38f},  // 3 maroon box
}};

void blend(float* px, const Rgb& c, float alpha) {
  if (alpha >= 1.0f) {
    std::copy(c.begin(), c.end(), px);
    return;
  }
  for (int k = 0; k < 3; ++k) px[k] += alpha * (c[static_cast<std::size_t>(k)] - px[k]);
}

// Anti-aliased disk coverage for a pixel of width `pixel` at distance d from the centre.
float coverage(float d, float radius, float pixel) { return std::clamp((radius - d) / pixel + 0.5f, 0.0f, 1.0f); }

}  // namespace

CameraModel CameraModel::third(const WorldParams& params) { return {View::third, params.third_resolution, 1.0f}; }

CameraModel CameraModel::wrist(const WorldParams& params) {
  return {View::wrist, params.wrist_resolution, params.wrist_window};
}

void CameraModel::validate() const {
  if (resolution < 8) throw std::invalid_argument("camera resolution must be >= 8");
  if (!(window > 0.0f && window <= 1.0f)) throw std::invalid_argument("camera window must lie in (0, 1]");
}

std::array<float, 3> Image::pixel(int u, int v) const {
  const auto i = (static_cast<std::size_t>(v) * resolution + u) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

Rgb object_color(int class_id) {
  if (class_id < 0 || class_id >= static_cast<int>(kObjectPalette.size())) {
    throw std::out_of_range("no palette colour for object class " + std::to_string(class_id));
  }
  return kObjectPalette[static_cast<std::size_t>(class_id)];
}

Rgb receptacle_color(int class_id) {
  if (class_id < 0 || class_id >= static_cast<int>(kReceptaclePalette.size())) {
    throw std::out_of_range("no palette colour for receptacle class " + std::to_string(class_id));
  }
  return kReceptaclePalette[static_cast<std::size_t>(class_id)];
}

Pixel project_to_pixel(float x, float y, const CameraModel& camera) {
  const auto g = static_cast<float>(camera.resolution);
  return {x * g, (1.0f - y) * g};
}

Image render(const WorldState& state, const CameraModel& camera) {
  camera.validate();
  const int res = camera.resolution;
  const bool wrist = camera.view == View::wrist;
  const float pixel = camera.window / static_cast<float>(res);
  const float x0 = wrist ? state.gripper.x - camera.window / 2 : 0.0f;
  const float y0 = wrist ? state.gripper.y + camera.window / 2 : 1.0f;

  Image img{res, std::vector<float>(static_cast<std::size_t>(res) * res * 3)};
  for (int v = 0; v < res; ++v) {
    for (int u = 0; u < res; ++u) {
      const float x = x0 + (static_cast<float>(u) + 0.5f) * pixel;
      const float y = y0 - (static_cast<float>(v) + 0.5f) * pixel;
      float* px = img.rgb.data() + (static_cast<std::size_t>(v) * res + u) * 3;
      const bool on_table = x >= 0.0f && x <= 1.0f && y >= 0.0f && y <= 1.0f;
      const Rgb& base = on_table ? kBackground : kOffTable;
      std::copy(base.begin(), base.end(), px);
      if (!on_table) continue;
      for (const auto& r : state.receptacles) {
        blend(px, receptacle_color(r.class_id), coverage(std::hypot(x - r.x, y - r.y), r.radius, pixel));
      }
      for (const auto& o : state.objects) {
        blend(px, object_color(o.class_id), coverage(std::hypot(x - o.x, y - o.y), o.radius, pixel));
      }
    }
  }

  if (!wrist) {
    const Pixel p = project_to_pixel(state.gripper.x, state.gripper.y, camera);
    const int cu = std::clamp(static_cast<int>(std::floor(p.u)), 0, res - 1);
    const int cv = std::clamp(static_cast<int>(std::floor(p.v)), 0, res - 1);
    constexpr int kArms[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (const auto& arm : kArms) {
      const int u = cu + arm[0];
      const int v = cv + arm[1];
      if (u < 0 || v < 0 || u >= res || v >= res) continue;
      blend(img.rgb.data() + (static_cast<std::size_t>(v) * res + u) * 3, kMarker, 0.5f);
    }
    float* centre = img.rgb.data() + (static_cast<std::size_t>(cv) * res + cu) * 3;
    std::copy(kMarker.begin(), kMarker.end(), centre);
  }
  return img;
}

}  // namespace icil::sim
