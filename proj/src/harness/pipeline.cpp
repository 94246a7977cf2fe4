#include "icil/harness/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "icil/seqdata/episode_io.hpp"
#include "icil/seqdata/record.hpp"
#include "icil/traces/traces.hpp"

namespace icil::harness {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

data::Trajectory record_demo(const HarnessConfig& config, const sim::TaskSpec& task, Distractors d,
                             std::uint64_t seed, const std::string& what) {
  sim::WorldState start;
  try {
    start = sim::reset(config.world, task, d.objects, d.receptacles, seed);
  } catch (const sim::PlacementError& e) {
    throw EpisodeGenerationError(what + ": " + e.what());
  }
  sim::ExpertParams ep;
  ep.noise = config.data.expert_noise;
  std::mt19937_64 rng(derive_seed(seed, {0x6e6f697365ULL}));
  const auto run = sim::run_expert(config.world, start, task, ep, &rng);
  if (!run.completed || sim::success(config.world, run.final_state, task) < 1.0f) {
    throw EpisodeGenerationError(what + ": expert did not complete the task");
  }
  return data::record_episode(config.world, run, task);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix(base);
  for (auto k : keys) h = splitmix(h ^ splitmix(k));
  return h;
}

std::uint64_t label_hash(const std::string& label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Distractors level_distractors(int level) { return {level, level / 2}; }

Distractors prompt_distractors(const std::string& prompt_config) {
  if (prompt_config == "d0") return {0, 0};
  if (prompt_config == "d1") return {1, 0};
  if (prompt_config == "dr") return {0, 1};
  throw ConfigError("unknown prompt config '" + prompt_config + "'");
}

std::vector<sim::TaskSpec> choose_tasks(const HarnessConfig& config) {
  std::mt19937_64 rng(derive_seed(config.data.seed, {label_hash("tasks")}));
  std::vector<int> objects(static_cast<std::size_t>(config.world.n_object_classes));
  for (int i = 0; i < config.world.n_object_classes; ++i) objects[static_cast<std::size_t>(i)] = i;
  std::shuffle(objects.begin(), objects.end(), rng);
  std::vector<sim::TaskSpec> tasks;
  for (int i = 0; i < config.data.poke_tasks; ++i) tasks.push_back(sim::TaskSpec::poke(objects[static_cast<std::size_t>(i)]));
  std::vector<std::pair<int, int>> pairs;
  for (int o = 0; o < config.world.n_object_classes; ++o)
    for (int r = 0; r < config.world.n_receptacle_classes; ++r) pairs.emplace_back(o, r);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  for (int i = 0; i < config.data.pick_place_tasks; ++i) {
    tasks.push_back(sim::TaskSpec::pick_place(pairs[static_cast<std::size_t>(i)].first,
                                              pairs[static_cast<std::size_t>(i)].second));
  }
  std::sort(tasks.begin(), tasks.end(), [](const auto& a, const auto& b) { return a.label() < b.label(); });
  return tasks;
}

data::SplitSpec split_by_kind(const std::vector<sim::TaskSpec>& tasks, const DataPlan& plan) {
  data::SplitSpec out;
  out.seed = plan.seed;
  for (auto kind : {sim::TaskKind::poke, sim::TaskKind::pick_place}) {
    std::vector<std::string> labels;
    for (const auto& t : tasks)
      if (t.kind == kind) labels.push_back(t.label());
    if (labels.empty()) continue;
    const auto s = data::split_tasks(labels, plan.test_fraction,
                                     derive_seed(plan.seed, {label_hash("split"), static_cast<std::uint64_t>(kind)}));
    out.train_tasks.insert(out.train_tasks.end(), s.train_tasks.begin(), s.train_tasks.end());
    out.test_tasks.insert(out.test_tasks.end(), s.test_tasks.begin(), s.test_tasks.end());
  }
  std::sort(out.train_tasks.begin(), out.train_tasks.end());
  std::sort(out.test_tasks.begin(), out.test_tasks.end());
  return out;
}

GeneratedData generate_data(const HarnessConfig& config) {
  config.validate();
  const auto tasks = choose_tasks(config);
  GeneratedData out;
  out.split = split_by_kind(tasks, config.data);
  for (const auto& task : tasks) {
    const std::string label = task.label();
    std::vector<data::Trajectory> demos;
    for (int d = 0; d < config.data.demos_per_task; ++d) {
      const std::uint64_t seed = derive_seed(config.data.seed, {label_hash(label), static_cast<std::uint64_t>(d)});
      const int level = static_cast<int>(derive_seed(seed, {label_hash("level")}) %
                                         static_cast<std::uint64_t>(config.data.max_level + 1));
      demos.push_back(record_demo(config, task, level_distractors(level), seed,
                                  "task " + label + " episode " + std::to_string(d)));
    }
    demos = traces::augment_dataset(std::move(demos));
    auto& dest = out.split.is_test(label) ? out.test : out.train;
    dest.insert(dest.end(), std::make_move_iterator(demos.begin()), std::make_move_iterator(demos.end()));
  }
  return out;
}

void write_data(const std::filesystem::path& dir, const GeneratedData& data) {
  std::filesystem::create_directories(dir);
  data::save_episodes(dir / "train.eps", data.train);
  data::save_episodes(dir / "test.eps", data.test);
  std::string split = "seed " + std::to_string(data.split.seed) + "\n";
  for (const auto& t : data.split.train_tasks) split += "train " + t + "\n";
  for (const auto& t : data.split.test_tasks) split += "test " + t + "\n";
  write_text(dir / "split.txt", split);
}

data::SplitSpec read_split(const std::filesystem::path& dir) {
  std::ifstream in(dir / "split.txt");
  if (!in) throw std::runtime_error("missing split file " + (dir / "split.txt").string());
  data::SplitSpec s;
  std::string kind, value;
  while (in >> kind >> value) {
    if (kind == "seed") s.seed = std::stoull(value);
    else if (kind == "train") s.train_tasks.push_back(value);
    else if (kind == "test") s.test_tasks.push_back(value);
    else throw std::runtime_error("split file: unknown entry '" + kind + "'");
  }
  if (s.test_tasks.empty()) throw std::runtime_error("split file lists no test tasks");
  return s;
}

std::vector<data::Trajectory> read_train_episodes(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "train.eps")) {
    throw std::runtime_error("missing training episodes " + (dir / "train.eps").string() + " (run gen-data first)");
  }
  return data::load_episodes(dir / "train.eps");
}

model::PolicyModel train_variant(const HarnessConfig& config, const Variant& variant,
                                 const std::vector<data::Trajectory>& train_set,
                                 std::vector<engine::LossRecord>* history,
                                 const std::filesystem::path& checkpoint_dir) {
  model::PolicyModel m(model_config(config));
  auto tc = train_config(config, variant);
  tc.checkpoint_dir = checkpoint_dir.string();
  auto result = engine::train(m, train_set, tc);
  if (history) *history = std::move(result.history);
  return m;
}

std::string loss_csv(const std::vector<engine::LossRecord>& history, int log_interval) {
  if (log_interval < 1) throw std::invalid_argument("log interval must be >= 1");
  std::string out = "step,total,action,reasoning,grad_norm,lr\n";
  auto num = [](double v) {
    char buf[64];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, static_cast<float>(v)).ptr);
  };
  for (std::size_t b = 0; b < history.size(); b += static_cast<std::size_t>(log_interval)) {
    const std::size_t e = std::min(history.size(), b + static_cast<std::size_t>(log_interval));
    double t = 0, a = 0, r = 0, g = 0;
    for (std::size_t i = b; i < e; ++i) {
      t += history[i].total;
      a += history[i].action;
      r += history[i].reasoning;
      g += history[i].grad_norm;
    }
    const double n = static_cast<double>(e - b);
    out += std::to_string(history[e - 1].step) + ',' + num(t / n) + ',' + num(a / n) + ',' + num(r / n) + ',' +
           num(g / n) + ',' + num(history[e - 1].lr) + '\n';
  }
  return out;
}

Entrant make_entrant(const std::string& variant, const model::PolicyModel* model, int reasoning_interval) {
  const auto v = Variant::parse(variant);
  return {v.name, model, v.prompt_reasoning, v.target_reasoning ? reasoning_interval : 0};
}

std::vector<data::Trajectory> prompt_demos(const HarnessConfig& config, const sim::TaskSpec& task,
                                           const std::string& prompt_config) {
  std::vector<data::Trajectory> demos;
  for (int d = 0; d < config.eval.n_prompt; ++d) {
    const std::uint64_t seed =
        derive_seed(config.seed, {label_hash("prompt"), label_hash(task.label()), label_hash(prompt_config),
                                  static_cast<std::uint64_t>(d)});
    demos.push_back(record_demo(config, task, prompt_distractors(prompt_config), seed,
                                "prompt " + prompt_config + " for task " + task.label()));
  }
  return traces::augment_dataset(std::move(demos));
}

sim::WorldState rollout_start(const HarnessConfig& config, const sim::TaskSpec& task, int index) {
  const std::uint64_t seed =
      derive_seed(config.seed, {label_hash("rollout"), label_hash(task.label()), static_cast<std::uint64_t>(index)});
  const int level =
      static_cast<int>(derive_seed(seed, {label_hash("level")}) % static_cast<std::uint64_t>(config.data.max_level + 1));
  const auto d = level_distractors(level);
  return sim::reset(config.world, task, d.objects, d.receptacles, seed);
}

std::vector<RolloutRecord> run_plan(const HarnessConfig& config, const std::vector<sim::TaskSpec>& tasks,
                                    const std::vector<Entrant>& entrants,
                                    const std::vector<std::string>& prompt_configs) {
  config.validate();
  for (const auto& e : entrants) {
    if (e.model && e.model->config().chunk_horizon != config.model.chunk_horizon) {
      throw ConfigError("entrant '" + e.name + "' has chunk horizon " +
                        std::to_string(e.model->config().chunk_horizon) + ", config says " +
                        std::to_string(config.model.chunk_horizon));
    }
  }
  const int R = config.eval.rollouts;
  struct Scene {
    sim::WorldState start;
    std::vector<sim::Action> expert_actions;
  };
  std::vector<std::vector<Scene>> scenes(tasks.size());
  std::vector<std::vector<std::vector<data::Trajectory>>> prompts(tasks.size());
  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    for (int r = 0; r < R; ++r) {
      Scene s;
      s.start = rollout_start(config, tasks[ti], r);
      const auto run = sim::run_expert(config.world, s.start, tasks[ti]);
      if (!run.completed) throw EpisodeGenerationError("expert cannot solve rollout scene of " + tasks[ti].label());
      s.expert_actions = run.actions;
      scenes[ti].push_back(std::move(s));
    }
    for (const auto& p : prompt_configs) prompts[ti].push_back(prompt_demos(config, tasks[ti], p));
  }

  struct Job {
    std::size_t entrant, task, prompt;
    int rollout;
  };
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < entrants.size(); ++e)
    for (std::size_t t = 0; t < tasks.size(); ++t)
      for (std::size_t p = 0; p < prompt_configs.size(); ++p)
        for (int r = 0; r < R; ++r) jobs.push_back({e, t, p, r});

  std::vector<RolloutRecord> records(jobs.size());
  auto run_job = [&](std::size_t j) {
    const Job& job = jobs[j];
    const Entrant& ent = entrants[job.entrant];
    const auto& task = tasks[job.task];
    const Scene& scene = scenes[job.task][static_cast<std::size_t>(job.rollout)];
    std::vector<const data::Trajectory*> demo_ptrs;
    for (const auto& d : prompts[job.task][job.prompt]) demo_ptrs.push_back(&d);

    engine::RolloutOptions opt;
    opt.reasoning_interval = ent.reasoning_interval;
    opt.max_steps = config.eval.max_steps_factor * static_cast<int>(scene.expert_actions.size());
    opt.ensemble_decay = config.eval.ensemble_decay;
    engine::RolloutResult res;
    if (ent.model) {
      engine::ModelPolicy policy(*ent.model, ent.prompt_reasoning);
      res = engine::rollout(policy, config.world, scene.start, task, demo_ptrs, opt);
    } else {
      engine::ReplayPolicy policy(scene.expert_actions, config.model.chunk_horizon);
      res = engine::rollout(policy, config.world, scene.start, task, demo_ptrs, opt);
    }
    RolloutRecord& rec = records[j];
    rec.variant = ent.name;
    rec.task = task.label();
    rec.prompt_config = prompt_configs[job.prompt];
    rec.k = ent.reasoning_interval;
    rec.seed = config.seed;
    rec.index = job.rollout;
    rec.score = res.score;
    rec.steps = res.steps;
    rec.max_steps = opt.max_steps;
    rec.trace_decodes = res.trace_decodes;
    rec.failure = classify_failure(res, task, scene.start, config.world);
  };

  const int n_threads = std::min<int>(config.eval.threads, static_cast<int>(jobs.size()));
  if (n_threads <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_threads));
    std::vector<std::thread> pool;
    for (int w = 0; w < n_threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) run_job(j);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
          next = jobs.size();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return records;
}

std::vector<MetricsRow> write_results(const std::filesystem::path& dir, const HarnessConfig& config,
                                      const std::vector<RolloutRecord>& records) {
  std::filesystem::create_directories(dir);
  const auto rows = aggregate(records);
  write_text(dir / "rollouts.csv", rollouts_csv(records));
  write_text(dir / "metrics.csv", metrics_csv(rows));
  write_text(dir / "summary.txt", summary(rows));
  config.save(dir / "config.txt");
  return rows;
}

}  // namespace icil::harness
