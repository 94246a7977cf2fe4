#pragma once

#include <random>
#include <vector>

#include "icil/sim/world.hpp"

namespace icil::sim {

/// Heights used by the scripted expert.
struct ExpertParams {
  float z_hover = 0.4f;
  float z_low = 0.1f;        // grasp / poke depth
  float z_place = 0.15f;
  float xy_tolerance = 0.01f;
  float z_tolerance = 0.005f;
  float open_aperture = 0.8f;
  float noise = 0.0f;        // std-dev of zero-mean Gaussian noise on dx, dy, dz
};

/// Scripted finite-state expert. The phase is derived from the state, so the
/// policy is a pure function of (state, task) apart from optional noise.
///
///   poke:       above target -> descend to contact -> ascend
///   pick_place: above target -> descend -> close -> ascend -> above receptacle
///               -> descend -> open -> ascend
///
/// Throws InfeasibleTaskError if the target (or receptacle) is absent.
Action expert_policy(const WorldParams& params, const WorldState& state, const TaskSpec& task,
                     const ExpertParams& expert = {}, std::mt19937_64* rng = nullptr);

/// True once the script has finished (task achieved and gripper back at hover height).
bool expert_done(const WorldParams& params, const WorldState& state, const TaskSpec& task,
                 const ExpertParams& expert = {});

struct ExpertEpisode {
  std::vector<WorldState> states;  // states[t] is observed before actions[t]
  std::vector<Action> actions;
  WorldState final_state;
  bool completed = false;
};

/// Runs the expert from `start` until expert_done or max_steps actions.
ExpertEpisode run_expert(const WorldParams& params, const WorldState& start, const TaskSpec& task,
                         const ExpertParams& expert = {}, std::mt19937_64* rng = nullptr, int max_steps = 400);

}  // namespace icil::sim
