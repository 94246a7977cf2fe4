#include "icil/sim/expert.hpp"

#include <cmath>

namespace icil::sim {

namespace {

struct Target {
  int object = -1;
  int receptacle = -1;
};

Target locate(const WorldState& state, const TaskSpec& task) {
  task.validate();
  Target t;
  const auto obj = find_object(state, task.target_object_class);
  if (!obj) throw InfeasibleTaskError("target object class " + std::to_string(task.target_object_class) + " absent");
  t.object = *obj;
  if (task.kind == TaskKind::pick_place) {
    const auto rec = find_receptacle(state, *task.target_receptacle_class);
    if (!rec) {
      throw InfeasibleTaskError("target receptacle class " + std::to_string(*task.target_receptacle_class) +
                                " absent");
    }
    t.receptacle = *rec;
  }
  return t;
}

float xy_dist(const Gripper& g, float x, float y) { return std::hypot(g.x - x, g.y - y); }

// Alignment tolerance loosens once the gripper has left hover height, so that
// small drifts during a descent do not send it back up.
float align_tolerance(const Gripper& g, const ExpertParams& e) {
  return g.z < e.z_hover - e.z_tolerance ? 3.0f * e.xy_tolerance : e.xy_tolerance;
}

struct Command {
  float x, y, z;
  float dg = 0.0f;
};

bool placed(const WorldState& state, const TaskSpec& task, const Target& t) {
  return task.kind == TaskKind::pick_place &&
         (state.released_in[static_cast<std::size_t>(t.object)] & (1u << *task.target_receptacle_class)) != 0;
}

Command poke_command(const WorldParams& params, const WorldState& state, const TaskSpec& task, const Target& t,
                     const ExpertParams& e) {
  const Gripper& g = state.gripper;
  const auto& o = state.objects[static_cast<std::size_t>(t.object)];
  if (success(params, state, task) >= 1.0f) return {g.x, g.y, e.z_hover};
  if (xy_dist(g, o.x, o.y) > align_tolerance(g, e)) return {o.x, o.y, e.z_hover};
  return {o.x, o.y, e.z_low};
}

Command pick_place_command(const WorldParams& params, const WorldState& state, const Target& t,
                           const ExpertParams& e) {
  const Gripper& g = state.gripper;
  const auto& o = state.objects[static_cast<std::size_t>(t.object)];
  const auto& r = state.receptacles[static_cast<std::size_t>(t.receptacle)];
  const float open = params.max_delta;

  if (state.held_object && *state.held_object == t.object) {
    if (xy_dist(g, r.x, r.y) > align_tolerance(g, e)) {
      if (g.z < e.z_hover - e.z_tolerance) return {g.x, g.y, e.z_hover};
      return {r.x, r.y, e.z_hover};
    }
    if (g.z > e.z_place + e.z_tolerance) return {r.x, r.y, e.z_place};
    return {r.x, r.y, e.z_place, open};
  }
  if (state.held_object) return {g.x, g.y, g.z, open};  // wrong object: let go

  const bool aligned = xy_dist(g, o.x, o.y) <= align_tolerance(g, e);
  if (aligned && g.aperture >= params.close_threshold) {
    const bool closing = g.aperture < e.open_aperture;
    const float depth_limit = closing ? 0.5f * (e.z_low + params.z_grasp) : e.z_low + e.z_tolerance;
    if (g.z <= depth_limit) return {o.x, o.y, e.z_low, -open};
  }
  if (g.aperture < e.open_aperture) return {o.x, o.y, e.z_hover, open};  // missed grasp: reopen and retry
  if (!aligned) return {o.x, o.y, e.z_hover};
  return {o.x, o.y, e.z_low};
}

}  // namespace

Action expert_policy(const WorldParams& params, const WorldState& state, const TaskSpec& task,
                     const ExpertParams& expert, std::mt19937_64* rng) {
  const Target t = locate(state, task);
  Command cmd;
  if (task.kind == TaskKind::pick_place && placed(state, task, t)) {
    cmd = {state.gripper.x, state.gripper.y, expert.z_hover};
  } else if (task.kind == TaskKind::poke) {
    cmd = poke_command(params, state, task, t, expert);
  } else {
    cmd = pick_place_command(params, state, t, expert);
  }
  float dx = cmd.x - state.gripper.x;
  float dy = cmd.y - state.gripper.y;
  float dz = cmd.z - state.gripper.z;
  if (rng && expert.noise > 0.0f) {
    std::normal_distribution<float> noise(0.0f, expert.noise);
    dx += noise(*rng);
    dy += noise(*rng);
    dz += noise(*rng);
  }
  return Action::clipped(dx, dy, dz, cmd.dg, params.max_delta);
}

bool expert_done(const WorldParams& params, const WorldState& state, const TaskSpec& task,
                 const ExpertParams& expert) {
  return success(params, state, task) >= 1.0f && state.gripper.z >= expert.z_hover - expert.z_tolerance;
}

ExpertEpisode run_expert(const WorldParams& params, const WorldState& start, const TaskSpec& task,
                         const ExpertParams& expert, std::mt19937_64* rng, int max_steps) {
  ExpertEpisode ep;
  WorldState state = start;
  while (!expert_done(params, state, task, expert) && static_cast<int>(ep.actions.size()) < max_steps) {
    const Action a = expert_policy(params, state, task, expert, rng);
    ep.states.push_back(state);
    ep.actions.push_back(a);
    state = step(params, state, a);
  }
  ep.completed = expert_done(params, state, task, expert);
  ep.final_state = std::move(state);
  return ep;
}

}  // namespace icil::sim
