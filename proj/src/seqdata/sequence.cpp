#include "icil/seqdata/sequence.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "icil/traces/traces.hpp"

namespace icil::data {

bool SplitSpec::is_train(const std::string& label) const {
  return std::binary_search(train_tasks.begin(), train_tasks.end(), label);
}

bool SplitSpec::is_test(const std::string& label) const {
  return std::binary_search(test_tasks.begin(), test_tasks.end(), label);
}

SplitSpec split_tasks(std::vector<std::string> task_labels, double test_fraction, std::uint64_t seed) {
  std::sort(task_labels.begin(), task_labels.end());
  task_labels.erase(std::unique(task_labels.begin(), task_labels.end()), task_labels.end());
  if (task_labels.size() < 2) throw std::invalid_argument("need at least 2 distinct task labels to split");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test fraction must lie in (0, 1)");
  const auto n = task_labels.size();
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(n)));
  if (n_test == 0 || n_test == n) {
    throw std::invalid_argument("test fraction " + std::to_string(test_fraction) + " leaves one side of the split empty");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(task_labels.begin(), task_labels.end(), rng);
  SplitSpec split;
  split.seed = seed;
  split.train_tasks.assign(task_labels.begin(), task_labels.end() - static_cast<std::ptrdiff_t>(n_test));
  split.test_tasks.assign(task_labels.end() - static_cast<std::ptrdiff_t>(n_test), task_labels.end());
  std::sort(split.train_tasks.begin(), split.train_tasks.end());
  std::sort(split.test_tasks.begin(), split.test_tasks.end());
  return split;
}

std::pair<int, int> TrainingSequence::locate(int step) const {
  if (step < 0 || step >= total_steps) throw std::out_of_range("step outside the sequence");
  for (int e = 0; e < static_cast<int>(episodes.size()); ++e) {
    const int len = episodes[static_cast<std::size_t>(e)]->length;
    if (step < len) return {e, step};
    step -= len;
  }
  throw std::logic_error("sequence step bookkeeping is inconsistent");
}

ChunkLabels chunk_labels(const Trajectory& trajectory, int t, int horizon) {
  if (horizon < 1) throw std::invalid_argument("chunk horizon must be >= 1");
  if (t < 0 || t >= trajectory.length) throw std::invalid_argument("chunk start outside the episode");
  ChunkLabels out;
  out.actions.reserve(static_cast<std::size_t>(horizon) * kActionDim);
  for (int j = 0; j < horizon; ++j) {
    const int src = std::min(t + j, trajectory.length - 1);
    const auto a = trajectory.action_at(src);
    out.actions.insert(out.actions.end(), a.begin(), a.end());
    out.valid.push_back(t + j < trajectory.length);
  }
  return out;
}

TrainingSequence assemble_sequence(std::vector<const Trajectory*> prompts, const Trajectory& target,
                                   const SequenceOptions& options, const std::vector<int>& target_mask) {
  if (options.chunk_horizon < 1) throw std::invalid_argument("chunk horizon must be >= 1");
  TrainingSequence seq;
  seq.task_label = target.task_label;
  seq.n_prompt = static_cast<int>(prompts.size());
  seq.episodes = std::move(prompts);
  seq.episodes.push_back(&target);
  seq.chunk_horizon = options.chunk_horizon;
  for (const Trajectory* e : seq.episodes) {
    e->validate();
    if (e->task_label != seq.task_label) {
      throw std::invalid_argument("sequence mixes task labels '" + e->task_label + "' and '" + seq.task_label + "'");
    }
    if (!e->has_traces && (options.prompt_reasoning || options.target_reasoning)) {
      throw std::invalid_argument("episode of '" + e->task_label + "' has no traces but the variant uses them");
    }
    seq.total_steps += e->length;
  }
  seq.target_steps = target.length;
  seq.target_offset = seq.total_steps - target.length;

  const auto steps = static_cast<std::size_t>(seq.total_steps);
  seq.reasoning_inputs.assign(steps * kTraceDim, 0.0f);
  seq.trace_labels.reserve(steps * kTraceDim);
  seq.loss_mask.assign(steps * kTokensPerStep, false);
  seq.reasoning_input_mask.assign(static_cast<std::size_t>(target.length), !options.target_reasoning);
  for (int t : target_mask) {
    if (t < 0 || t >= target.length) throw std::invalid_argument("mask position outside the target episode");
    seq.reasoning_input_mask[static_cast<std::size_t>(t)] = true;
  }

  int step = 0;
  for (int e = 0; e < static_cast<int>(seq.episodes.size()); ++e) {
    const Trajectory& ep = *seq.episodes[static_cast<std::size_t>(e)];
    const bool is_target = e == seq.n_prompt;
    for (int t = 0; t < ep.length; ++t, ++step) {
      const auto trace = ep.trace_at(t);
      seq.trace_labels.insert(seq.trace_labels.end(), trace.begin(), trace.end());
      const bool feed = is_target ? !seq.reasoning_input_mask[static_cast<std::size_t>(t)] : options.prompt_reasoning;
      if (feed) std::copy(trace.begin(), trace.end(), seq.reasoning_inputs.begin() + step * kTraceDim);
      if (is_target) {
        seq.loss_mask[static_cast<std::size_t>(step * kTokensPerStep)] = options.target_reasoning;
        seq.loss_mask[static_cast<std::size_t>(step * kTokensPerStep + 1)] = true;
        auto chunk = chunk_labels(ep, t, options.chunk_horizon);
        seq.chunk_actions.insert(seq.chunk_actions.end(), chunk.actions.begin(), chunk.actions.end());
        seq.chunk_valid.insert(seq.chunk_valid.end(), chunk.valid.begin(), chunk.valid.end());
      }
    }
  }
  return seq;
}

TrainingSequence build_sequence(std::span<const Trajectory* const> subset, int n_prompt, std::mt19937_64& rng,
                                const SequenceOptions& options) {
  if (n_prompt < 0) throw std::invalid_argument("negative prompt count");
  if (subset.empty()) throw std::invalid_argument("cannot build a sequence from no episodes");
  for (const Trajectory* e : subset) {
    if (e->task_label != subset.front()->task_label) {
      throw std::invalid_argument("sequence mixes task labels '" + e->task_label + "' and '" +
                                  subset.front()->task_label + "'");
    }
  }
  if (static_cast<int>(subset.size()) <= n_prompt) {
    throw std::invalid_argument("need more than " + std::to_string(n_prompt) + " episodes to leave a target");
  }
  std::vector<const Trajectory*> order(subset.begin(), subset.end());
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<const Trajectory*> prompts(order.begin(), order.begin() + n_prompt);
  const Trajectory& target = *order[static_cast<std::size_t>(n_prompt)];

  std::vector<int> mask;
  if (options.target_reasoning && options.reasoning_dropout) mask = traces::sample_mask(target.length, rng).masked_positions;
  return assemble_sequence(std::move(prompts), target, options, mask);
}

TrainingSequence build_sequence(std::span<const Trajectory> subset, int n_prompt, std::mt19937_64& rng,
                                const SequenceOptions& options) {
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : subset) ptrs.push_back(&t);
  return build_sequence(std::span<const Trajectory* const>(ptrs), n_prompt, rng, options);
}

}  // namespace icil::data
