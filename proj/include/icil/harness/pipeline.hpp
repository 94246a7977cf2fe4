#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "icil/harness/config.hpp"
#include "icil/harness/metrics.hpp"
#include "icil/seqdata/sequence.hpp"

namespace icil::harness {

class EpisodeGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stable 64-bit mixing of a base seed with extra keys (splitmix64 chain).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys);
/// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t label_hash(const std::string& label);

struct Distractors {
  int objects = 0;
  int receptacles = 0;
};
/// Difficulty level L: L distractor objects and L/2 distractor receptacles.
Distractors level_distractors(int level);
/// d0: none, d1: one distractor object, dr: one distractor receptacle.
Distractors prompt_distractors(const std::string& prompt_config);

/// Seeded choice of poke object classes and pick-and-place (object, receptacle) pairs, sorted by label.
std::vector<sim::TaskSpec> choose_tasks(const HarnessConfig& config);
/// Split at the task-label level, separately per task kind so both kinds are held out.
data::SplitSpec split_by_kind(const std::vector<sim::TaskSpec>& tasks, const DataPlan& plan);

struct GeneratedData {
  data::SplitSpec split;
  std::vector<data::Trajectory> train;
  std::vector<data::Trajectory> test;
};

/// Expert demos for every chosen task, trace-augmented. Throws
/// EpisodeGenerationError naming the task and episode if a scene cannot be
/// placed or the expert fails.
GeneratedData generate_data(const HarnessConfig& config);

/// train.eps, test.eps, split.txt.
void write_data(const std::filesystem::path& dir, const GeneratedData& data);
data::SplitSpec read_split(const std::filesystem::path& dir);
std::vector<data::Trajectory> read_train_episodes(const std::filesystem::path& dir);

/// Trains a fresh model for `variant` (initialized from config.seed).
model::PolicyModel train_variant(const HarnessConfig& config, const Variant& variant,
                                 const std::vector<data::Trajectory>& train_set,
                                 std::vector<engine::LossRecord>* history = nullptr,
                                 const std::filesystem::path& checkpoint_dir = {});

/// One row per log interval: the mean of each loss column over that interval.
std::string loss_csv(const std::vector<engine::LossRecord>& history, int log_interval);

/// A policy taking part in an evaluation. `model == nullptr` is the
/// expert-replay stub, which replays the scripted expert on each start scene.
struct Entrant {
  std::string name;
  const model::PolicyModel* model = nullptr;
  bool prompt_reasoning = true;
  int reasoning_interval = 1;
};

/// Entrant for a trained variant; icrt never decodes traces.
Entrant make_entrant(const std::string& variant, const model::PolicyModel* model, int reasoning_interval);

/// Runs every (entrant, task, prompt config, rollout) combination. Start
/// scenes and prompt demos depend only on (config.seed, task, index), so all
/// entrants face the same episodes. Records come back in plan order.
std::vector<RolloutRecord> run_plan(const HarnessConfig& config, const std::vector<sim::TaskSpec>& tasks,
                                    const std::vector<Entrant>& entrants,
                                    const std::vector<std::string>& prompt_configs);

/// Prompt demonstrations for one (task, prompt config), trace-augmented.
std::vector<data::Trajectory> prompt_demos(const HarnessConfig& config, const sim::TaskSpec& task,
                                           const std::string& prompt_config);

/// Start scene of rollout `index` for `task`.
sim::WorldState rollout_start(const HarnessConfig& config, const sim::TaskSpec& task, int index);

/// Writes rollouts.csv, metrics.csv, summary.txt and config.txt into `dir`.
std::vector<MetricsRow> write_results(const std::filesystem::path& dir, const HarnessConfig& config,
                                      const std::vector<RolloutRecord>& records);

}  // namespace icil::harness
