#pragma once

#include "icil/seqdata/trajectory.hpp"
#include "icil/sim/expert.hpp"

namespace icil::data {

/// Renders both views for every recorded state of an expert episode. Traces are not filled.
Trajectory record_episode(const sim::WorldParams& params, const sim::ExpertEpisode& episode,
                          const sim::TaskSpec& task);

/// Observation columns for a single state, in the trajectory layout.
struct Observation {
  std::vector<float> third;
  std::vector<float> wrist;
  std::array<float, kProprioDim> proprio{};
};
Observation observe(const sim::WorldParams& params, const sim::WorldState& state);

}  // namespace icil::data
