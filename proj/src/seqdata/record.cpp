#include "icil/seqdata/record.hpp"

#include "icil/sim/render.hpp"

namespace icil::data {

Observation observe(const sim::WorldParams& params, const sim::WorldState& state) {
  return {sim::render(state, sim::CameraModel::third(params)).rgb,
          sim::render(state, sim::CameraModel::wrist(params)).rgb, state.gripper.as_array()};
}

Trajectory record_episode(const sim::WorldParams& params, const sim::ExpertEpisode& episode,
                          const sim::TaskSpec& task) {
  Trajectory traj;
  traj.task_label = task.label();
  traj.third_resolution = params.third_resolution;
  traj.wrist_resolution = params.wrist_resolution;
  traj.length = static_cast<int>(episode.actions.size());
  traj.trace.assign(static_cast<std::size_t>(traj.length) * kTraceDim, 0.0f);
  for (int t = 0; t < traj.length; ++t) {
    const auto obs = observe(params, episode.states[static_cast<std::size_t>(t)]);
    traj.third.insert(traj.third.end(), obs.third.begin(), obs.third.end());
    traj.wrist.insert(traj.wrist.end(), obs.wrist.begin(), obs.wrist.end());
    traj.proprio.insert(traj.proprio.end(), obs.proprio.begin(), obs.proprio.end());
    const auto a = episode.actions[static_cast<std::size_t>(t)].as_array();
    traj.action.insert(traj.action.end(), a.begin(), a.end());
  }
  return traj;
}

}  // namespace icil::data
