#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "icil/engine/rollout.hpp"
#include "icil/engine/trainer.hpp"
#include "icil/numerics/ops.hpp"
#include "support/model_fixtures.hpp"
#include "support/reference.hpp"
#include "support/sim_episodes.hpp"

using namespace icil;
using engine::EnsembleBuffer;
using engine::TrainConfig;
using model::PolicyModel;
using num::Tensor;

namespace {

sim::WorldParams small_world(const model::ModelConfig& cfg) {
  sim::WorldParams p;
  p.third_resolution = cfg.third_resolution;
  p.wrist_resolution = cfg.wrist_resolution;
  return p;
}

TrainConfig quick_train(const model::ModelConfig& cfg, int steps) {
  TrainConfig t;
  t.steps = steps;
  t.seed = 5;
  t.warmup_steps = 10;
  t.adamw.lr = 3e-3f;
  t.max_prompt = 1;
  t.sequence.chunk_horizon = cfg.chunk_horizon;
  return t;
}

bool same_params(const PolicyModel& a, const PolicyModel& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto da = pa[i].second.data(), db = pb[i].second.data();
    if (!std::equal(da.begin(), da.end(), db.begin(), db.end())) return false;
  }
  return true;
}

std::vector<float> at(const EnsembleBuffer& b, int step) { return engine::temporal_ensemble(b, step); }

}  // namespace

TEST_CASE("learning rate warms up then decays to the floor") {
  TrainConfig t;
  t.steps = 1000;
  t.warmup_steps = 100;
  t.adamw.lr = 1e-3f;
  CHECK(engine::learning_rate(t, 1) == doctest::Approx(1e-5));
  CHECK(engine::learning_rate(t, 100) == doctest::Approx(1e-3));
  CHECK(engine::learning_rate(t, 550) == doctest::Approx(0.55e-3));
  CHECK(engine::learning_rate(t, 1000) == doctest::Approx(1e-4));
  for (int s = 101; s < 1000; ++s) CHECK(engine::learning_rate(t, s + 1) <= engine::learning_rate(t, s));
}

TEST_CASE("zero training steps leave the initialization untouched") {
  const auto cfg = fixtures::tiny_config(3);
  const auto data = fixtures::random_episodes(cfg, {3, 4, 3}, 2);
  PolicyModel m(cfg), fresh(cfg);
  const auto r = engine::train(m, data, quick_train(cfg, 0));
  CHECK(r.history.empty());
  CHECK(same_params(m, fresh));
}

TEST_CASE("training is seed deterministic") {
  const auto cfg = fixtures::tiny_config(3);
  const auto data = fixtures::random_episodes(cfg, {3, 4, 3, 5}, 2);
  PolicyModel a(cfg), b(cfg);
  const auto ra = engine::train(a, data, quick_train(cfg, 6));
  const auto rb = engine::train(b, data, quick_train(cfg, 6));
  CHECK(same_params(a, b));
  REQUIRE(ra.history.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(ra.history[i].total == rb.history[i].total);

  auto other = quick_train(cfg, 6);
  other.seed = 6;
  PolicyModel c(cfg);
  engine::train(c, data, other);
  CHECK_FALSE(same_params(a, c));
}

TEST_CASE("training rejects unusable input") {
  const auto cfg = fixtures::tiny_config();
  PolicyModel m(cfg);
  const auto single = fixtures::random_episodes(cfg, {3}, 2);
  CHECK_THROWS_AS(engine::train(m, single, quick_train(cfg, 1)), std::invalid_argument);
  auto bad = quick_train(cfg, 1);
  bad.sequence.chunk_horizon = cfg.chunk_horizon + 1;
  CHECK_THROWS_AS(engine::train(m, fixtures::random_episodes(cfg, {3, 3}, 2), bad), std::invalid_argument);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  const auto cfg = fixtures::tiny_config();
  PolicyModel m(cfg);
  auto data = fixtures::random_episodes(cfg, {3, 3}, 2);
  data[0].action[0] = std::numeric_limits<float>::quiet_NaN();
  data[1].action[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    engine::train(m, data, quick_train(cfg, 3));
    FAIL("expected NonFiniteError");
  } catch (const num::NonFiniteError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    CHECK(std::string(e.what()).find("poke:0") != std::string::npos);
  }
}

TEST_CASE("periodic checkpoints reload to the trained weights") {
  const auto cfg = fixtures::tiny_config();
  const auto dir = std::filesystem::temp_directory_path() / "icil_engine_ckpt";
  std::filesystem::remove_all(dir);
  auto t = quick_train(cfg, 4);
  t.checkpoint_interval = 2;
  t.checkpoint_dir = dir.string();
  PolicyModel m(cfg);
  engine::train(m, fixtures::random_episodes(cfg, {3, 3}, 2), t);
  CHECK(std::filesystem::exists(dir / "step_2.ckpt"));
  CHECK(same_params(PolicyModel::load((dir / "step_4.ckpt").string()), m));
  std::filesystem::remove_all(dir);
}

TEST_CASE("training reduces the loss on a small expert set") {
  const auto cfg = fixtures::tiny_config(4);
  const auto world = small_world(cfg);
  auto data = fixtures::expert_dataset(world, sim::TaskSpec::poke(2), 10, 100);
  const auto more = fixtures::expert_dataset(world, sim::TaskSpec::poke(5), 10, 200);
  data.insert(data.end(), more.begin(), more.end());
  PolicyModel m(cfg);
  const auto r = engine::train(m, data, quick_train(cfg, 500));
  const float first = engine::window_mean(r.history, 0, 20);
  const float last = engine::window_mean(r.history, 480, 500);
  MESSAGE("initial ", first, " final ", last);
  for (const auto& rec : r.history) REQUIRE(std::isfinite(rec.total));
  CHECK(last < 0.5f * first);
}

TEST_CASE("kv decode matches the full forward") {
  const auto cfg = fixtures::tiny_config(7);
  PolicyModel m(cfg);
  std::mt19937_64 rng(11);
  const Tensor tokens = Tensor::from({60, cfg.d_model}, ref::random_floats(60u * cfg.d_model, rng));
  Tensor full;
  {
    num::NoGradGuard g;
    full = m.transform(tokens);
  }
  model::KVCache cache;
  double worst = 0.0;
  for (int i = 0; i < 60; ++i) {
    const Tensor row = Tensor::from({1, cfg.d_model}, std::vector<float>(tokens.data().begin() + i * cfg.d_model,
                                                                          tokens.data().begin() + (i + 1) * cfg.d_model));
    const Tensor out = engine::kv_decode(m, cache, row);
    CHECK(cache.length == i + 1);
    for (int c = 0; c < cfg.d_model; ++c) {
      worst = std::max(worst, std::fabs(static_cast<double>(out.data()[c]) - full.data()[i * cfg.d_model + c]));
    }
  }
  CHECK(worst <= 1e-5);

  model::KVCache whole;
  const Tensor once = engine::kv_decode(m, whole, tokens);
  CHECK(whole.length == 60);
  CHECK(std::equal(once.data().begin(), once.data().end(), full.data().begin()));

  model::KVCache part;
  engine::kv_decode(m, part, Tensor::zeros({cfg.max_context - 1, cfg.d_model}));
  CHECK_THROWS_AS(engine::kv_decode(m, part, Tensor::zeros({2, cfg.d_model})), model::ContextOverflowError);
}

TEST_CASE("temporal ensemble weights the oldest covering chunk most") {
  EnsembleBuffer single(3, 1, 0.1f);
  single.push(0, {0.3f, 0.2f, 0.1f});
  CHECK(at(single, 1)[0] == 0.2f);

  EnsembleBuffer two(2, 1, 0.1f);
  two.push(0, {9.0f, 0.0f});
  two.push(1, {0.1f, 9.0f});
  const double expected = 0.1 * std::exp(-0.1) / (1.0 + std::exp(-0.1));
  CHECK(at(two, 1)[0] == doctest::Approx(expected).epsilon(1e-6));
  CHECK(at(two, 1)[0] == doctest::Approx(0.0475).epsilon(1e-3));

  EnsembleBuffer sharp(4, 2, 50.0f);
  for (int s = 0; s < 4; ++s) sharp.push(s, std::vector<float>(8, static_cast<float>(s + 1)));
  CHECK(std::fabs(at(sharp, 3)[0] - 1.0f) <= 1e-6);
  CHECK(std::fabs(at(sharp, 3)[1] - 1.0f) <= 1e-6);

  EnsembleBuffer h1(1, 1, 0.1f);
  for (int s = 0; s < 5; ++s) {
    h1.push(s, {static_cast<float>(s)});
    h1.prune(s);
    CHECK(h1.size() == 1);
    CHECK(at(h1, s)[0] == static_cast<float>(s));
  }
}

TEST_CASE("ensemble buffer prunes expired chunks and rejects bad input") {
  EnsembleBuffer b(3, 1, 0.1f);
  CHECK_THROWS_AS(at(b, 0), std::logic_error);
  for (int s = 0; s < 6; ++s) {
    b.push(s, {0.0f, 0.0f, 0.0f});
    b.prune(s);
    CHECK(b.size() == static_cast<std::size_t>(std::min(s + 1, 3)));
    for (const auto& e : b.entries()) CHECK(e.issue_step + 2 >= s);
  }
  CHECK_THROWS_AS(b.push(5, {0.0f, 0.0f, 0.0f}), std::invalid_argument);
  CHECK_THROWS_AS(b.push(9, {0.0f}), std::invalid_argument);
  CHECK_THROWS_AS(EnsembleBuffer(0, 1, 0.1f), std::invalid_argument);
}

TEST_CASE("replaying expert actions solves the task") {
  const sim::WorldParams world;
  for (const auto& task : {sim::TaskSpec::poke(1), sim::TaskSpec::pick_place(3, 2)}) {
    for (const auto& run : fixtures::expert_runs(world, task, 5, 40)) {
      REQUIRE(run.expert.completed);
      engine::ReplayPolicy replay(run.expert.actions, 8);
      engine::RolloutOptions opt;
      opt.max_steps = 3 * static_cast<int>(run.expert.actions.size());
      const auto r = engine::rollout(replay, world, run.start, task, {}, opt);
      CHECK(r.score == 1.0f);
      CHECK_FALSE(r.overflow);
    }
  }
}

TEST_CASE("model rollouts follow the reasoning interval and are deterministic") {
  const auto cfg = [] {
    auto c = fixtures::tiny_config(9);
    c.max_context = 512;
    return c;
  }();
  const auto world = small_world(cfg);
  const auto task = sim::TaskSpec::pick_place(1, 0);
  const auto demos = fixtures::expert_dataset(world, task, 1, 70);
  const data::Trajectory* prompt = &demos[0];
  const auto start = sim::reset(world, task, 1, 1, 99);
  PolicyModel m(cfg);
  for (int k : {0, 1, 3, 8}) {
    engine::ModelPolicy policy(m, true);
    engine::RolloutOptions opt;
    opt.reasoning_interval = k;
    opt.max_steps = 20;
    const auto r = engine::rollout(policy, world, start, task, {&prompt, 1}, opt);
    const int expected = k == 0 ? 0 : (r.steps + k - 1) / k;
    CHECK(r.trace_decodes == expected);
    CHECK(r.traces.size() == static_cast<std::size_t>(expected));
    for (const auto& [s, tr] : r.traces) {
      CHECK(s % k == 0);
      for (float v : tr) CHECK((v >= 0.0f && v <= 1.0f));
    }
    CHECK(policy.cache().length == 3 * (prompt->length + r.steps));
    for (const auto& a : r.actions) {
      for (float v : a.as_array()) CHECK(std::fabs(v) <= world.max_delta);
    }
  }
  engine::ModelPolicy p1(m, true), p2(m, true);
  engine::RolloutOptions opt;
  opt.max_steps = 15;
  const auto r1 = engine::rollout(p1, world, start, task, {&prompt, 1}, opt);
  const auto r2 = engine::rollout(p2, world, start, task, {&prompt, 1}, opt);
  CHECK(r1.actions == r2.actions);
  CHECK(r1.final_state == r2.final_state);
}

TEST_CASE("the first rollout step matches the teacher-forced forward") {
  const auto cfg = fixtures::tiny_config(12);
  const auto world = small_world(cfg);
  const auto task = sim::TaskSpec::poke(4);
  const auto demos = fixtures::expert_dataset(world, task, 2, 300);
  PolicyModel m(cfg);
  // The rollout's first chunk conditions on the prompt plus the target's first
  // state and trace, which the training forward sees at the same positions.
  data::SequenceOptions so;
  so.chunk_horizon = cfg.chunk_horizon;
  const auto seq = data::assemble_sequence({&demos[0]}, demos[1], so, {});
  const auto batch = m.make_batch(seq);
  Tensor chunks;
  {
    num::NoGradGuard g;
    chunks = m.forward(batch).chunks;
  }
  engine::ModelPolicy policy(m, true);
  const data::Trajectory* prompt = &demos[0];
  policy.begin({&prompt, 1});
  data::Observation obs;
  obs.third.assign(demos[1].third_at(0).begin(), demos[1].third_at(0).end());
  obs.wrist.assign(demos[1].wrist_at(0).begin(), demos[1].wrist_at(0).end());
  std::copy(demos[1].proprio_at(0).begin(), demos[1].proprio_at(0).end(), obs.proprio.begin());
  policy.feed_state(obs);
  engine::Trace tr{};
  std::copy(demos[1].trace_at(0).begin(), demos[1].trace_at(0).end(), tr.begin());
  policy.feed_trace(&tr);
  const auto chunk = policy.decode_chunk();
  const int row = demos[0].length;
  const int width = cfg.chunk_horizon * data::kActionDim;
  for (int j = 0; j < width; ++j) {
    CHECK(chunk[j] == doctest::Approx(chunks.data()[row * width + j] * cfg.action_scale).epsilon(1e-4));
  }
}

TEST_CASE("rollout stops with an overflow flag when the context is full") {
  auto cfg = fixtures::tiny_config(9);
  cfg.max_context = 96;
  const auto world = small_world(cfg);
  const auto task = sim::TaskSpec::poke(1);
  const auto demos = fixtures::expert_dataset(world, task, 1, 70);
  const data::Trajectory* prompt = &demos[0];
  REQUIRE(3 * prompt->length < cfg.max_context);
  PolicyModel m(cfg);
  engine::ModelPolicy policy(m, true);
  engine::RolloutOptions opt;
  opt.max_steps = 100;
  const auto r = engine::rollout(policy, world, sim::reset(world, task, 1, 0, 3), task, {&prompt, 1}, opt);
  CHECK(r.overflow);
  CHECK(r.steps == (cfg.max_context - 3 * prompt->length) / 3);
}

TEST_CASE("rollout options are validated") {
  engine::RolloutOptions o;
  o.reasoning_interval = -1;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = {};
  o.max_steps = 0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
}
