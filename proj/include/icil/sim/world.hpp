#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace icil::sim {

/// Scene and kinematics constants. The defaults are the reference
/// configuration; the harness config file can override them.
struct WorldParams {
  int third_resolution = 32;    // G
  int wrist_resolution = 16;    // C
  float wrist_window = 0.25f;   // w, world units spanned by the wrist view
  float max_delta = 0.05f;      // per-component action bound
  float grasp_radius = 0.06f;
  float z_grasp = 0.2f;         // gripper must be below this to grasp or touch
  float close_threshold = 0.3f;
  float open_threshold = 0.7f;
  float poke_displacement = 0.03f;
  float object_radius = 0.04f;
  float receptacle_radius = 0.1f;
  float placement_margin = 0.02f;
  int n_object_classes = 10;
  int n_receptacle_classes = 4;
  std::array<float, 4> home{0.5f, 0.5f, 0.5f, 1.0f};  // x, y, z, aperture
};

struct Gripper {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float aperture = 1.0f;  // 1 open, 0 closed

  std::array<float, 4> as_array() const { return {x, y, z, aperture}; }
  bool operator==(const Gripper&) const = default;
};

struct Entity {
  int class_id = 0;
  float x = 0.0f;
  float y = 0.0f;
  float radius = 0.0f;
  bool operator==(const Entity&) const = default;
};

struct WorldState {
  Gripper gripper;
  std::vector<Entity> objects;
  std::vector<Entity> receptacles;
  std::optional<int> held_object;  // index into objects
  int step_count = 0;

  // Sticky per-object history used by the success predicates.
  std::vector<std::array<float, 2>> initial_positions;
  std::vector<bool> ever_held;
  std::vector<bool> contacted;
  std::vector<std::uint32_t> released_in;  // bit c set: released inside a receptacle of class c

  bool operator==(const WorldState&) const = default;
};

enum class TaskKind { poke, pick_place };

struct TaskSpec {
  TaskKind kind = TaskKind::poke;
  int target_object_class = 0;
  std::optional<int> target_receptacle_class;

  static TaskSpec poke(int object_class);
  static TaskSpec pick_place(int object_class, int receptacle_class);

  /// Canonical text label, e.g. "poke:3" or "pick_place:3:1".
  std::string label() const;
  static TaskSpec parse(const std::string& label);

  /// Throws std::invalid_argument if the receptacle field disagrees with the kind.
  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

/// Bounded gripper delta. Construction through `clipped` enforces |component| <= max_delta.
struct Action {
  float dx = 0.0f;
  float dy = 0.0f;
  float dz = 0.0f;
  float dg = 0.0f;

  static Action clipped(float dx, float dy, float dz, float dg, float max_delta);
  std::array<float, 4> as_array() const { return {dx, dy, dz, dg}; }
  bool operator==(const Action&) const = default;
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InfeasibleTaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Samples a scene: the task's target object (and receptacle) plus distinct-class
/// distractors, placed without overlap by bounded rejection sampling.
WorldState reset(const WorldParams& params, const TaskSpec& task, int n_distractor_objects,
                 int n_distractor_receptacles, std::uint64_t seed);

WorldState step(const WorldParams& params, const WorldState& state, const Action& action);

/// Index of the object (receptacle) with the given class, if present.
std::optional<int> find_object(const WorldState& state, int class_id);
std::optional<int> find_receptacle(const WorldState& state, int class_id);

/// 0, 0.5 or 1. Poke: 1 once the target was touched at low height or moved
/// more than poke_displacement. Pick-and-place: 0.5 once the target has been
/// held, 1 once it has been released inside the target receptacle.
float success(const WorldParams& params, const WorldState& state, const TaskSpec& task);

}  // namespace icil::sim
