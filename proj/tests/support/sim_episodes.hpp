#pragma once

#include <cstdint>
#include <vector>

#include "icil/seqdata/record.hpp"
#include "icil/traces/traces.hpp"

namespace fixtures {

struct SimEpisode {
  icil::sim::WorldState start;
  icil::sim::ExpertEpisode expert;
};

/// Expert episodes for one task with one distractor, seeds base_seed, base_seed+1, ...
inline std::vector<SimEpisode> expert_runs(const icil::sim::WorldParams& params, const icil::sim::TaskSpec& task,
                                           int count, std::uint64_t base_seed) {
  std::vector<SimEpisode> out;
  for (int i = 0; i < count; ++i) {
    SimEpisode e;
    e.start = icil::sim::reset(params, task, 1, task.kind == icil::sim::TaskKind::pick_place ? 1 : 0,
                               base_seed + static_cast<std::uint64_t>(i));
    e.expert = icil::sim::run_expert(params, e.start, task);
    out.push_back(std::move(e));
  }
  return out;
}

/// Trace-augmented recordings of expert_runs.
inline std::vector<icil::data::Trajectory> expert_dataset(const icil::sim::WorldParams& params,
                                                          const icil::sim::TaskSpec& task, int count,
                                                          std::uint64_t base_seed) {
  std::vector<icil::data::Trajectory> out;
  for (const auto& e : expert_runs(params, task, count, base_seed)) {
    out.push_back(icil::data::record_episode(params, e.expert, task));
  }
  return icil::traces::augment_dataset(std::move(out));
}

}  // namespace fixtures
