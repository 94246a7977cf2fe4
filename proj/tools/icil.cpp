// Command-line harness: gen-data, train, eval, sweep-interval, report.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "icil/harness/pipeline.hpp"

namespace fs = std::filesystem;
using namespace icil;
using namespace icil::harness;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Harness config file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set train.steps=100");
  cmd->add_option("--seed", c.seed, "Seed (data.seed for gen-data, seed otherwise)");
  cmd->add_option("--out", c.out, "Output directory")->required();
}

HarnessConfig resolve(const Common& c, bool data_seed) {
  std::string text;
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    std::stringstream buf;
    buf << in.rdbuf();
    text = buf.str() + "\n";
  }
  for (const auto& o : c.overrides) {
    if (o.find('=') == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    text += o + "\n";
  }
  HarnessConfig cfg = HarnessConfig::parse(text);
  if (c.seed) (data_seed ? cfg.data.seed : cfg.seed) = *c.seed;
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

std::vector<sim::TaskSpec> split_tasks(const fs::path& data_dir, const std::string& which) {
  const auto split = read_split(data_dir);
  if (which != "test" && which != "train") throw ConfigError("--split must be train or test");
  std::vector<sim::TaskSpec> tasks;
  for (const auto& label : which == "test" ? split.test_tasks : split.train_tasks) {
    tasks.push_back(sim::TaskSpec::parse(label));
  }
  return tasks;
}

model::PolicyModel load_model(const std::string& variant, const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint for variant '" + variant + "' not found: " + path);
  return model::PolicyModel::load(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context imitation learning with visual reasoning traces"};
  app.require_subcommand(1);

  Common gen_c;
  auto* gen = app.add_subcommand("gen-data", "Generate expert demos and the task split");
  add_common(gen, gen_c);

  Common train_c;
  std::string train_data, train_variant_name = "ours";
  auto* train = app.add_subcommand("train", "Train one variant");
  add_common(train, train_c);
  train->add_option("--data", train_data, "Directory written by gen-data")->required();
  train->add_option("--variant", train_variant_name, "ours, to or icrt");

  Common eval_c;
  std::string eval_data;
  std::vector<std::string> eval_ckpts;
  std::optional<int> eval_rollouts;
  bool eval_expert = false;
  std::string eval_split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate variants on the held-out tasks");
  add_common(eval, eval_c);
  eval->add_option("--data", eval_data, "Directory written by gen-data")->required();
  eval->add_option("--checkpoint", eval_ckpts, "VARIANT=PATH, repeatable (VARIANT in ours, to, icrt)");
  eval->add_flag("--expert-replay", eval_expert, "Also evaluate the expert-replay stub");
  eval->add_option("--rollouts", eval_rollouts, "Rollouts per (task, prompt config)");
  eval->add_option("--split", eval_split, "Evaluate on the held-out (test) or seen (train) tasks");

  Common sweep_c;
  std::string sweep_data, sweep_ckpt, sweep_variant = "ours";
  std::optional<int> sweep_rollouts;
  std::vector<int> sweep_intervals;
  std::string sweep_split = "test";
  auto* sweep = app.add_subcommand("sweep-interval", "Evaluate one checkpoint at several reasoning intervals");
  add_common(sweep, sweep_c);
  sweep->add_option("--data", sweep_data, "Directory written by gen-data")->required();
  sweep->add_option("--checkpoint", sweep_ckpt, "Checkpoint trained with reasoning dropout")->required();
  sweep->add_option("--variant", sweep_variant, "Variant the checkpoint was trained as");
  sweep->add_option("--intervals", sweep_intervals, "Reasoning intervals, 0 = never")->delimiter(',');
  sweep->add_option("--rollouts", sweep_rollouts, "Rollouts per task");
  sweep->add_option("--split", sweep_split, "Evaluate on the held-out (test) or seen (train) tasks");

  std::string report_out;
  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "Merge metrics CSVs into one report");
  report->add_option("--out", report_out, "Output directory")->required();
  report->add_option("metrics", report_inputs, "metrics.csv files")->required()->check(CLI::ExistingFile);

  auto* keys = app.add_subcommand("config-keys", "Print every config key with its default");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = resolve(gen_c, true);
      const auto data = generate_data(cfg);
      write_data(gen_c.out, data);
      cfg.save(fs::path(gen_c.out) / "config.txt");
      std::printf("%zu train episodes, %zu test episodes, %zu train / %zu test tasks -> %s\n", data.train.size(),
                  data.test.size(), data.split.train_tasks.size(), data.split.test_tasks.size(), gen_c.out.c_str());
    } else if (*train) {
      const auto cfg = resolve(train_c, false);
      const auto variant = Variant::parse(train_variant_name);
      const auto episodes = read_train_episodes(train_data);
      fs::create_directories(train_c.out);
      cfg.save(fs::path(train_c.out) / "config.txt");
      std::vector<engine::LossRecord> history;
      const auto m = train_variant(cfg, variant, episodes, &history,
                                   cfg.train.checkpoint_interval > 0 ? fs::path(train_c.out) / "checkpoints" : fs::path());
      m.save((fs::path(train_c.out) / "model.ckpt").string());
      write_file(fs::path(train_c.out) / "loss.csv", loss_csv(history, cfg.train.log_interval));
      if (!history.empty()) {
        const std::size_t w = std::max<std::size_t>(1, std::min<std::size_t>(100, history.size() / 10));
        std::printf("%s: %zu steps, loss %.4f -> %.4f\n", variant.name.c_str(), history.size(),
                    engine::window_mean(history, 0, w), engine::window_mean(history, history.size() - w, history.size()));
      }
    } else if (*eval) {
      auto cfg = resolve(eval_c, false);
      if (eval_rollouts) cfg.eval.rollouts = *eval_rollouts;
      cfg.validate();
      if (eval_ckpts.empty() && !eval_expert) throw ConfigError("eval needs --checkpoint or --expert-replay");
      std::vector<model::PolicyModel> models;
      std::vector<std::string> names;
      models.reserve(eval_ckpts.size());
      for (const auto& spec : eval_ckpts) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw ConfigError("--checkpoint expects VARIANT=PATH, got '" + spec + "'");
        names.push_back(Variant::parse(spec.substr(0, eq)).name);
        models.push_back(load_model(names.back(), spec.substr(eq + 1)));
      }
      std::vector<Entrant> entrants;
      if (eval_expert) entrants.push_back({"expert", nullptr, true, 0});
      for (std::size_t i = 0; i < models.size(); ++i) {
        entrants.push_back(make_entrant(names[i], &models[i], cfg.eval.reasoning_interval));
      }
      const auto records = run_plan(cfg, split_tasks(eval_data, eval_split), entrants, cfg.eval.prompt_configs);
      const auto rows = write_results(eval_c.out, cfg, records);
      std::printf("%zu rollouts, %zu metric rows -> %s\n", records.size(), rows.size(), eval_c.out.c_str());
    } else if (*sweep) {
      auto cfg = resolve(sweep_c, false);
      if (sweep_rollouts) cfg.eval.rollouts = *sweep_rollouts;
      if (!sweep_intervals.empty()) cfg.eval.intervals = sweep_intervals;
      cfg.validate();
      const auto m = load_model(sweep_variant, sweep_ckpt);
      std::vector<Entrant> entrants;
      for (int k : cfg.eval.intervals) entrants.push_back(make_entrant(sweep_variant, &m, k));
      const auto records = run_plan(cfg, split_tasks(sweep_data, sweep_split), entrants, {cfg.eval.sweep_prompt_config});
      const auto rows = write_results(sweep_c.out, cfg, records);
      std::printf("%zu rollouts, %zu metric rows -> %s\n", records.size(), rows.size(), sweep_c.out.c_str());
    } else if (*report) {
      std::vector<MetricsRow> all;
      for (const auto& path : report_inputs) {
        std::ifstream in(path, std::ios::binary);
        std::stringstream buf;
        buf << in.rdbuf();
        try {
          const auto rows = parse_metrics_csv(buf.str());
          all.insert(all.end(), rows.begin(), rows.end());
        } catch (const MetricsFormatError& e) {
          throw MetricsFormatError(path + ": " + e.what());
        }
      }
      const auto merged = merge(all);
      fs::create_directories(report_out);
      write_file(fs::path(report_out) / "report.csv", metrics_csv(merged));
      const auto text = summary(merged);
      write_file(fs::path(report_out) / "summary.txt", text);
      std::fputs(text.c_str(), stdout);
    } else if (*keys) {
      for (const auto& [k, v] : HarnessConfig::documented_keys()) std::printf("%s = %s\n", k.c_str(), v.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
