#include "icil/sim/world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace icil::sim {

namespace {

constexpr int kPlacementAttempts = 2000;

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

float dist(float ax, float ay, float bx, float by) { return std::hypot(ax - bx, ay - by); }

std::vector<int> pick_classes(int n_classes, int exclude, int count, std::mt19937_64& rng) {
  std::vector<int> pool;
  for (int c = 0; c < n_classes; ++c) {
    if (c != exclude) pool.push_back(c);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<std::size_t>(count));
  return pool;
}

}  // namespace

TaskSpec TaskSpec::poke(int object_class) { return {TaskKind::poke, object_class, std::nullopt}; }

TaskSpec TaskSpec::pick_place(int object_class, int receptacle_class) {
  return {TaskKind::pick_place, object_class, receptacle_class};
}

std::string TaskSpec::label() const {
  validate();
  if (kind == TaskKind::poke) return "poke:" + std::to_string(target_object_class);
  return "pick_place:" + std::to_string(target_object_class) + ":" + std::to_string(*target_receptacle_class);
}

TaskSpec TaskSpec::parse(const std::string& label) {
  std::vector<std::string> parts;
  std::stringstream ss(label);
  for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
  auto to_int = [&](const std::string& s) {
    std::size_t used = 0;
    int v = -1;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || v < 0) throw std::invalid_argument("malformed task label '" + label + "'");
    return v;
  };
  if (parts.size() == 2 && parts[0] == "poke") return poke(to_int(parts[1]));
  if (parts.size() == 3 && parts[0] == "pick_place") return pick_place(to_int(parts[1]), to_int(parts[2]));
  throw std::invalid_argument("malformed task label '" + label + "'");
}

void TaskSpec::validate() const {
  if (kind == TaskKind::pick_place && !target_receptacle_class) {
    throw std::invalid_argument("pick_place task needs a target receptacle class");
  }
  if (kind == TaskKind::poke && target_receptacle_class) {
    throw std::invalid_argument("poke task must not name a receptacle");
  }
}

Action Action::clipped(float dx, float dy, float dz, float dg, float max_delta) {
  auto c = [max_delta](float v) { return std::clamp(v, -max_delta, max_delta); };
  return {c(dx), c(dy), c(dz), c(dg)};
}

WorldState reset(const WorldParams& params, const TaskSpec& task, int n_distractor_objects,
                 int n_distractor_receptacles, std::uint64_t seed) {
  task.validate();
  const bool needs_receptacle = task.kind == TaskKind::pick_place;
  if (task.target_object_class < 0 || task.target_object_class >= params.n_object_classes) {
    throw PlacementError("target object class " + std::to_string(task.target_object_class) + " not in palette");
  }
  if (needs_receptacle &&
      (*task.target_receptacle_class < 0 || *task.target_receptacle_class >= params.n_receptacle_classes)) {
    throw PlacementError("target receptacle class " + std::to_string(*task.target_receptacle_class) +
                         " not in palette");
  }
  if (n_distractor_objects < 0 || n_distractor_objects + 1 > params.n_object_classes) {
    throw PlacementError("not enough distinct object classes for " + std::to_string(n_distractor_objects) +
                         " distractors");
  }
  const int receptacle_total = n_distractor_receptacles + (needs_receptacle ? 1 : 0);
  if (n_distractor_receptacles < 0 || receptacle_total > params.n_receptacle_classes) {
    throw PlacementError("not enough distinct receptacle classes for " + std::to_string(n_distractor_receptacles) +
                         " distractors");
  }

  std::mt19937_64 rng(seed);
  WorldState state;
  state.gripper = {params.home[0], params.home[1], params.home[2], params.home[3]};

  std::vector<int> receptacle_classes;
  if (needs_receptacle) receptacle_classes.push_back(*task.target_receptacle_class);
  for (int c : pick_classes(params.n_receptacle_classes, needs_receptacle ? *task.target_receptacle_class : -1,
                            n_distractor_receptacles, rng)) {
    receptacle_classes.push_back(c);
  }
  std::vector<int> object_classes{task.target_object_class};
  for (int c : pick_classes(params.n_object_classes, task.target_object_class, n_distractor_objects, rng)) {
    object_classes.push_back(c);
  }

  std::vector<Entity> placed;
  auto place = [&](int class_id, float radius) {
    const float lo = radius + 0.05f;
    std::uniform_real_distribution<float> coord(lo, 1.0f - lo);
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      Entity e{class_id, coord(rng), coord(rng), radius};
      const bool clear = std::all_of(placed.begin(), placed.end(), [&](const Entity& o) {
        return dist(e.x, e.y, o.x, o.y) > e.radius + o.radius + params.placement_margin;
      });
      if (clear) {
        placed.push_back(e);
        return e;
      }
    }
    throw PlacementError("could not place entity of class " + std::to_string(class_id) + " without overlap after " +
                         std::to_string(kPlacementAttempts) + " attempts");
  };
  for (int c : receptacle_classes) state.receptacles.push_back(place(c, params.receptacle_radius));
  for (int c : object_classes) state.objects.push_back(place(c, params.object_radius));

  const std::size_t n = state.objects.size();
  for (const auto& o : state.objects) state.initial_positions.push_back({o.x, o.y});
  state.ever_held.assign(n, false);
  state.contacted.assign(n, false);
  state.released_in.assign(n, 0u);
  return state;
}

WorldState step(const WorldParams& params, const WorldState& state, const Action& action) {
  const Action a = Action::clipped(action.dx, action.dy, action.dz, action.dg, params.max_delta);
  WorldState next = state;
  const Gripper prev = state.gripper;
  Gripper& g = next.gripper;
  g.x = clamp01(prev.x + a.dx);
  g.y = clamp01(prev.y + a.dy);
  g.z = clamp01(prev.z + a.dz);
  g.aperture = clamp01(prev.aperture + a.dg);

  if (next.held_object) {
    auto& o = next.objects[static_cast<std::size_t>(*next.held_object)];
    o.x = g.x;
    o.y = g.y;
  }

  const bool low = g.z < params.z_grasp;
  std::optional<int> nearest;
  float nearest_d = params.grasp_radius;
  for (std::size_t i = 0; i < next.objects.size(); ++i) {
    const auto& o = next.objects[i];
    const float d = dist(g.x, g.y, o.x, o.y);
    if (low && d <= params.grasp_radius) {
      next.contacted[i] = true;
      if (d <= nearest_d && (!next.held_object || *next.held_object != static_cast<int>(i))) {
        nearest = static_cast<int>(i);
        nearest_d = d;
      }
    }
  }

  const bool closing_cross = prev.aperture >= params.close_threshold && g.aperture < params.close_threshold;
  const bool opening_cross = prev.aperture <= params.open_threshold && g.aperture > params.open_threshold;
  if (!next.held_object && closing_cross && nearest) {
    next.held_object = nearest;
    next.ever_held[static_cast<std::size_t>(*nearest)] = true;
  } else if (next.held_object && opening_cross) {
    const auto idx = static_cast<std::size_t>(*next.held_object);
    const auto& o = next.objects[idx];
    for (const auto& r : next.receptacles) {
      if (dist(o.x, o.y, r.x, r.y) <= r.radius) next.released_in[idx] |= 1u << r.class_id;
    }
    next.held_object.reset();
  }
  ++next.step_count;
  return next;
}

std::optional<int> find_object(const WorldState& state, int class_id) {
  for (std::size_t i = 0; i < state.objects.size(); ++i) {
    if (state.objects[i].class_id == class_id) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<int> find_receptacle(const WorldState& state, int class_id) {
  for (std::size_t i = 0; i < state.receptacles.size(); ++i) {
    if (state.receptacles[i].class_id == class_id) return static_cast<int>(i);
  }
  return std::nullopt;
}

float success(const WorldParams& params, const WorldState& state, const TaskSpec& task) {
  const auto target = find_object(state, task.target_object_class);
  if (!target) return 0.0f;
  const auto i = static_cast<std::size_t>(*target);
  if (task.kind == TaskKind::poke) {
    const auto& o = state.objects[i];
    const float moved = dist(o.x, o.y, state.initial_positions[i][0], state.initial_positions[i][1]);
    return state.contacted[i] || moved > params.poke_displacement ? 1.0f : 0.0f;
  }
  if (state.released_in[i] & (1u << *task.target_receptacle_class)) return 1.0f;
  return state.ever_held[i] ? 0.5f : 0.0f;
}

}  // namespace icil::sim
