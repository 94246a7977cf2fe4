#include "icil/engine/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>

#include "icil/numerics/ops.hpp"

namespace icil::engine {

float learning_rate(const TrainConfig& config, int step) {
  const float base = config.adamw.lr;
  if (config.warmup_steps > 0 && step <= config.warmup_steps) {
    return base * static_cast<float>(step) / static_cast<float>(config.warmup_steps);
  }
  const int decay_steps = config.steps - config.warmup_steps;
  if (decay_steps <= 0) return base;
  const double progress =
      std::clamp(static_cast<double>(step - config.warmup_steps) / static_cast<double>(decay_steps), 0.0, 1.0);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return base * static_cast<float>(config.min_lr_ratio + (1.0 - config.min_lr_ratio) * cosine);
}

float window_mean(const std::vector<LossRecord>& history, std::size_t begin, std::size_t end) {
  end = std::min(end, history.size());
  if (begin >= end) throw std::invalid_argument("empty loss window");
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += history[i].total;
  return static_cast<float>(s / static_cast<double>(end - begin));
}

TrainResult train(model::PolicyModel& model, const std::vector<data::Trajectory>& dataset, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_step) {
  if (config.steps < 0) throw std::invalid_argument("negative training step count");
  if (config.min_prompt < 0 || config.max_prompt < config.min_prompt) {
    throw std::invalid_argument("prompt count range is empty");
  }
  if (config.sequences_per_step < 1) throw std::invalid_argument("sequences_per_step must be >= 1");
  if (config.sequence.chunk_horizon != model.config().chunk_horizon) {
    throw std::invalid_argument("training chunk horizon differs from the model's");
  }

  std::map<std::string, std::vector<const data::Trajectory*>> by_task;
  for (const auto& t : dataset) by_task[t.task_label].push_back(&t);
  std::vector<const std::vector<const data::Trajectory*>*> usable;
  for (const auto& [label, eps] : by_task) {
    if (static_cast<int>(eps.size()) > config.min_prompt) usable.push_back(&eps);
  }
  TrainResult result;
  if (config.steps == 0) return result;
  if (usable.empty()) {
    throw std::invalid_argument("no task has more than " + std::to_string(config.min_prompt) +
                                " episodes; cannot form training sequences");
  }

  num::AdamW opt(model.trainable(), config.adamw);
  std::mt19937_64 rng(config.seed);
  const float inv_b = 1.0f / static_cast<float>(config.sequences_per_step);
  for (int step = 1; step <= config.steps; ++step) {
    LossRecord rec;
    rec.step = step;
    rec.lr = learning_rate(config, step);
    opt.set_lr(rec.lr);
    std::string last_task;
    for (int b = 0; b < config.sequences_per_step; ++b) {
      std::uniform_int_distribution<std::size_t> pick_task(0, usable.size() - 1);
      const auto& eps = *usable[pick_task(rng)];
      last_task = eps.front()->task_label;
      const int max_prompt = std::min(config.max_prompt, static_cast<int>(eps.size()) - 1);
      std::uniform_int_distribution<int> pick_prompt(config.min_prompt, max_prompt);
      const int n_prompt = pick_prompt(rng);
      const auto seq = data::build_sequence(std::span<const data::Trajectory* const>(eps), n_prompt, rng,
                                            config.sequence);
      const auto batch = model.make_batch(seq);
      model::LossParts parts;
      try {
        parts = model.loss(model.forward(batch), batch);
      } catch (const num::NonFiniteError& e) {
        throw num::NonFiniteError("non-finite forward at step " + std::to_string(step) + " on task '" + last_task +
                                  "': " + e.what());
      }
      if (!std::isfinite(parts.total.item())) {
        throw num::NonFiniteError("non-finite loss at step " + std::to_string(step) + " on task '" + last_task +
                                  "' (action " + std::to_string(parts.action) + ", reasoning " +
                                  std::to_string(parts.reasoning) + ")");
      }
      rec.total += parts.total.item() * inv_b;
      rec.action += parts.action * inv_b;
      rec.reasoning += parts.reasoning * inv_b;
      num::backward(config.sequences_per_step == 1 ? parts.total : num::scale(parts.total, inv_b));
    }
    // Parameters outside the loss graph (the reasoning head when no trace is supervised) get a zero gradient.
    for (auto p : opt.params()) {
      if (!p.has_grad()) p.mutable_grad();
    }
    rec.grad_norm = opt.clip_grad_norm(config.grad_clip);
    if (!std::isfinite(rec.grad_norm)) {
      throw num::NonFiniteError("non-finite gradient norm at step " + std::to_string(step) + " (last task '" +
                                last_task + "')");
    }
    opt.step();
    opt.zero_grad();
    result.history.push_back(rec);
    if (on_step) on_step(rec);
    if (config.checkpoint_interval > 0 && !config.checkpoint_dir.empty() && step % config.checkpoint_interval == 0) {
      std::filesystem::create_directories(config.checkpoint_dir);
      model.save((std::filesystem::path(config.checkpoint_dir) / ("step_" + std::to_string(step) + ".ckpt")).string());
    }
  }
  return result;
}

}  // namespace icil::engine
