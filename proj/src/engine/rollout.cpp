#include "icil/engine/rollout.hpp"

#include <algorithm>
#include <stdexcept>

#include "icil/numerics/ops.hpp"

namespace icil::engine {

using num::Tensor;

ModelPolicy::ModelPolicy(const model::PolicyModel& model, bool prompt_reasoning)
    : model_(model), prompt_reasoning_(prompt_reasoning) {}

Tensor ModelPolicy::feed(const Tensor& token) {
  last_hidden_ = kv_decode(model_, cache_, token);
  return last_hidden_;
}

void ModelPolicy::begin(std::span<const data::Trajectory* const> prompts) {
  num::NoGradGuard no_grad;
  cache_.clear();
  last_hidden_ = {};
  const auto& cfg = model_.config();
  for (const data::Trajectory* ep : prompts) {
    std::vector<float> third, wrist, proprio, traces, actions;
    for (int t = 0; t < ep->length; ++t) {
      const auto pt = model::patchify(ep->third_at(t), ep->third_resolution, cfg.patch_size);
      const auto pw = model::patchify(ep->wrist_at(t), ep->wrist_resolution, cfg.patch_size);
      third.insert(third.end(), pt.begin(), pt.end());
      wrist.insert(wrist.end(), pw.begin(), pw.end());
      const auto pr = ep->proprio_at(t);
      proprio.insert(proprio.end(), pr.begin(), pr.end());
      const auto tr = ep->trace_at(t);
      if (prompt_reasoning_) {
        if (!ep->has_traces) throw std::invalid_argument("prompt demo of '" + ep->task_label + "' has no traces");
        traces.insert(traces.end(), tr.begin(), tr.end());
      } else {
        traces.insert(traces.end(), tr.size(), 0.0f);
      }
      for (float a : ep->action_at(t)) actions.push_back(a / cfg.action_scale);
    }
    const int S = ep->length;
    const Tensor states = model_.encode_states(Tensor::from({S * model_.n_third_patches(), model_.patch_dim()}, third),
                                               Tensor::from({S * model_.n_wrist_patches(), model_.patch_dim()}, wrist),
                                               Tensor::from({S, data::kProprioDim}, proprio));
    const Tensor reasoning = model_.encode_reasoning(Tensor::from({S, data::kTraceDim}, traces));
    const Tensor acts = model_.encode_actions(Tensor::from({S, data::kActionDim}, actions));
    feed(model_.interleave(states, reasoning, acts));
  }
}

void ModelPolicy::feed_state(const data::Observation& obs) {
  num::NoGradGuard no_grad;
  feed(model_.encode_state(obs.third, obs.wrist, obs.proprio));
}

Trace ModelPolicy::decode_trace() {
  num::NoGradGuard no_grad;
  if (!last_hidden_.defined()) throw std::logic_error("decode_trace before any token was fed");
  const Tensor r = model_.reasoning_head(last_hidden_);
  Trace out{};
  for (int i = 0; i < data::kTraceDim; ++i) out[static_cast<std::size_t>(i)] = std::clamp(r.data()[static_cast<std::size_t>(i)], 0.0f, 1.0f);
  return out;
}

void ModelPolicy::feed_trace(const Trace* trace) {
  num::NoGradGuard no_grad;
  static const Trace kZero{};
  feed(model_.encode_reasoning(trace ? *trace : kZero, trace == nullptr));
}

std::vector<float> ModelPolicy::decode_chunk() {
  num::NoGradGuard no_grad;
  if (!last_hidden_.defined()) throw std::logic_error("decode_chunk before any token was fed");
  const Tensor c = model_.action_head(last_hidden_);
  std::vector<float> out(c.data().begin(), c.data().end());
  for (auto& v : out) v *= model_.config().action_scale;
  return out;
}

void ModelPolicy::feed_action(const sim::Action& executed) {
  num::NoGradGuard no_grad;
  const float s = model_.config().action_scale;
  feed(model_.encode_actions(
      Tensor::from({1, data::kActionDim}, {executed.dx / s, executed.dy / s, executed.dz / s, executed.dg / s})));
}

ReplayPolicy::ReplayPolicy(std::vector<sim::Action> actions, int horizon) : actions_(std::move(actions)), horizon_(horizon) {
  if (actions_.empty()) throw std::invalid_argument("replay policy needs at least one action");
  if (horizon < 1) throw std::invalid_argument("replay horizon must be >= 1");
}

std::vector<float> ReplayPolicy::decode_chunk() {
  std::vector<float> out;
  for (int j = 0; j < horizon_; ++j) {
    const auto idx = static_cast<std::size_t>(std::min(step_ + j, static_cast<int>(actions_.size()) - 1));
    const auto a = actions_[idx].as_array();
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

void RolloutOptions::validate() const {
  if (reasoning_interval < 0) throw std::invalid_argument("reasoning interval must be >= 0");
  if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
  if (!(ensemble_decay >= 0.0f)) throw std::invalid_argument("ensemble decay must be >= 0");
}

RolloutResult rollout(RolloutPolicy& policy, const sim::WorldParams& params, const sim::WorldState& start,
                      const sim::TaskSpec& task, std::span<const data::Trajectory* const> prompts,
                      const RolloutOptions& options) {
  options.validate();
  policy.begin(prompts);
  EnsembleBuffer buffer(policy.horizon(), data::kActionDim, options.ensemble_decay);
  RolloutResult res;
  sim::WorldState state = start;
  const int k = options.reasoning_interval;
  for (int step = 0; step < options.max_steps; ++step) {
    if (sim::success(params, state, task) >= 1.0f) break;
    if (policy.remaining_context() < data::kTokensPerStep) {
      res.overflow = true;
      break;
    }
    policy.feed_state(data::observe(params, state));
    if (k > 0 && step % k == 0) {
      const Trace tr = policy.decode_trace();
      ++res.trace_decodes;
      res.traces.emplace_back(step, tr);
      policy.feed_trace(&tr);
    } else {
      policy.feed_trace(nullptr);
    }
    buffer.push(step, policy.decode_chunk());
    buffer.prune(step);
    const auto a = temporal_ensemble(buffer, step);
    const auto action = sim::Action::clipped(a[0], a[1], a[2], a[3], params.max_delta);
    policy.feed_action(action);
    state = sim::step(params, state, action);
    res.actions.push_back(action);
    ++res.steps;
  }
  res.score = sim::success(params, state, task);
  res.final_state = std::move(state);
  return res;
}

}  // namespace icil::engine
