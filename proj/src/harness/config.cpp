#include "icil/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace icil::harness {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
std::string format(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_arithmetic_v<T>) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  } else {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format(v[i]);
    return out;
  }
}

template <class T>
void parse_value(const std::string& key, const std::string& text, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") out = true;
    else if (text == "false" || text == "0") out = false;
    else throw ConfigError(key + ": expected true or false, got '" + text + "'");
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = text;
  } else if constexpr (std::is_arithmetic_v<T>) {
    const auto r = std::from_chars(text.data(), text.data() + text.size(), out);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
      throw ConfigError(key + ": cannot parse '" + text + "'");
    }
  } else {
    out.clear();
    for (const auto& item : split_list(text)) {
      typename T::value_type v;
      parse_value(key, item, v);
      out.push_back(v);
    }
  }
}

struct Field {
  std::string key;
  std::function<std::string(const HarnessConfig&)> get;
  std::function<void(HarnessConfig&, const std::string&)> set;
};

template <class F>
Field bind(std::string key, F member) {
  return {key,
          [member](const HarnessConfig& c) { return format(member(const_cast<HarnessConfig&>(c))); },
          [member, key](HarnessConfig& c, const std::string& v) { parse_value(key, v, member(c)); }};
}

#define ICIL_FIELD(key, expr) bind(key, [](HarnessConfig& c) -> auto& { return c.expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      ICIL_FIELD("seed", seed),
      ICIL_FIELD("world.third_resolution", world.third_resolution),
      ICIL_FIELD("world.wrist_resolution", world.wrist_resolution),
      ICIL_FIELD("world.wrist_window", world.wrist_window),
      ICIL_FIELD("world.max_delta", world.max_delta),
      ICIL_FIELD("world.grasp_radius", world.grasp_radius),
      ICIL_FIELD("world.object_radius", world.object_radius),
      ICIL_FIELD("world.receptacle_radius", world.receptacle_radius),
      ICIL_FIELD("data.poke_tasks", data.poke_tasks),
      ICIL_FIELD("data.pick_place_tasks", data.pick_place_tasks),
      ICIL_FIELD("data.demos_per_task", data.demos_per_task),
      ICIL_FIELD("data.max_level", data.max_level),
      ICIL_FIELD("data.test_fraction", data.test_fraction),
      ICIL_FIELD("data.seed", data.seed),
      ICIL_FIELD("data.expert_noise", data.expert_noise),
      ICIL_FIELD("model.d_model", model.d_model),
      ICIL_FIELD("model.n_layers", model.n_layers),
      ICIL_FIELD("model.n_heads", model.n_heads),
      ICIL_FIELD("model.ffn_hidden", model.ffn_hidden),
      ICIL_FIELD("model.patch_size", model.patch_size),
      ICIL_FIELD("model.max_context", model.max_context),
      ICIL_FIELD("model.chunk_horizon", model.chunk_horizon),
      ICIL_FIELD("model.lambda_r", model.lambda_r),
      ICIL_FIELD("model.action_scale", model.action_scale),
      ICIL_FIELD("model.patch_positional", model.patch_positional),
      ICIL_FIELD("train.steps", train.steps),
      ICIL_FIELD("train.lr", train.lr),
      ICIL_FIELD("train.weight_decay", train.weight_decay),
      ICIL_FIELD("train.grad_clip", train.grad_clip),
      ICIL_FIELD("train.warmup_steps", train.warmup_steps),
      ICIL_FIELD("train.min_lr_ratio", train.min_lr_ratio),
      ICIL_FIELD("train.min_prompt", train.min_prompt),
      ICIL_FIELD("train.max_prompt", train.max_prompt),
      ICIL_FIELD("train.sequences_per_step", train.sequences_per_step),
      ICIL_FIELD("train.log_interval", train.log_interval),
      ICIL_FIELD("train.checkpoint_interval", train.checkpoint_interval),
      ICIL_FIELD("eval.rollouts", eval.rollouts),
      ICIL_FIELD("eval.prompt_configs", eval.prompt_configs),
      ICIL_FIELD("eval.n_prompt", eval.n_prompt),
      ICIL_FIELD("eval.max_steps_factor", eval.max_steps_factor),
      ICIL_FIELD("eval.reasoning_interval", eval.reasoning_interval),
      ICIL_FIELD("eval.ensemble_decay", eval.ensemble_decay),
      ICIL_FIELD("eval.intervals", eval.intervals),
      ICIL_FIELD("eval.sweep_prompt_config", eval.sweep_prompt_config),
      ICIL_FIELD("eval.threads", eval.threads),
  };
  return table;
}

#undef ICIL_FIELD

}  // namespace

HarnessConfig HarnessConfig::parse(const std::string& text) {
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  HarnessConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second->set(c, trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

HarnessConfig HarnessConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string HarnessConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

void HarnessConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_text();
}

std::vector<std::pair<std::string, std::string>> HarnessConfig::documented_keys() {
  const HarnessConfig defaults;
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(defaults));
  return out;
}

void HarnessConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(data.poke_tasks >= 0 && data.pick_place_tasks >= 0, "data task counts must be >= 0");
  require(data.poke_tasks <= world.n_object_classes, "data.poke_tasks exceeds the object palette");
  require(data.pick_place_tasks <= world.n_object_classes * world.n_receptacle_classes,
          "data.pick_place_tasks exceeds the object x receptacle combinations");
  require(data.demos_per_task >= 2, "data.demos_per_task must be >= 2");
  require(data.max_level >= 0 && data.max_level < world.n_object_classes, "data.max_level out of range");
  require(data.max_level / 2 + 1 <= world.n_receptacle_classes, "data.max_level needs too many receptacle classes");
  require(data.test_fraction > 0.0 && data.test_fraction < 1.0, "data.test_fraction must be in (0, 1)");
  require(data.expert_noise >= 0.0f, "data.expert_noise must be >= 0");
  require(train.steps >= 0, "train.steps must be >= 0");
  require(train.lr > 0.0f, "train.lr must be > 0");
  require(train.min_prompt >= 1 && train.max_prompt >= train.min_prompt, "train prompt range is empty");
  require(train.log_interval >= 1, "train.log_interval must be >= 1");
  require(train.sequences_per_step >= 1, "train.sequences_per_step must be >= 1");
  require(eval.rollouts >= 1, "eval.rollouts must be >= 1");
  require(!eval.prompt_configs.empty(), "eval.prompt_configs is empty");
  for (const auto& p : eval.prompt_configs) {
    require(p == "d0" || p == "d1" || p == "dr", "unknown prompt config '" + p + "' (expected d0, d1 or dr)");
  }
  require(eval.sweep_prompt_config == "d0" || eval.sweep_prompt_config == "d1" || eval.sweep_prompt_config == "dr",
          "unknown eval.sweep_prompt_config");
  require(eval.n_prompt >= 1, "eval.n_prompt must be >= 1");
  require(eval.max_steps_factor >= 1, "eval.max_steps_factor must be >= 1");
  require(eval.reasoning_interval >= 0, "eval.reasoning_interval must be >= 0");
  require(!eval.intervals.empty(), "eval.intervals is empty");
  for (int k : eval.intervals) require(k >= 0, "eval.intervals must be >= 0");
  require(eval.threads >= 1, "eval.threads must be >= 1");
  try {
    model_config(*this).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

Variant Variant::parse(const std::string& name) {
  if (name == "ours") return {name, true, true, true};
  if (name == "to") return {name, false, true, true};
  if (name == "icrt") return {name, false, false, false};
  throw ConfigError("unknown variant '" + name + "' (expected ours, to or icrt)");
}

model::ModelConfig model_config(const HarnessConfig& config) {
  model::ModelConfig m = config.model;
  m.third_resolution = config.world.third_resolution;
  m.wrist_resolution = config.world.wrist_resolution;
  m.init_seed = config.seed;
  return m;
}

engine::TrainConfig train_config(const HarnessConfig& config, const Variant& variant) {
  engine::TrainConfig t;
  t.steps = config.train.steps;
  t.seed = config.seed;
  t.adamw.lr = config.train.lr;
  t.adamw.weight_decay = config.train.weight_decay;
  t.grad_clip = config.train.grad_clip;
  t.warmup_steps = config.train.warmup_steps;
  t.min_lr_ratio = config.train.min_lr_ratio;
  t.min_prompt = config.train.min_prompt;
  t.max_prompt = config.train.max_prompt;
  t.sequences_per_step = config.train.sequences_per_step;
  t.checkpoint_interval = config.train.checkpoint_interval;
  t.sequence.chunk_horizon = config.model.chunk_horizon;
  t.sequence.prompt_reasoning = variant.prompt_reasoning;
  t.sequence.target_reasoning = variant.target_reasoning;
  t.sequence.reasoning_dropout = variant.reasoning_dropout;
  return t;
}

}  // namespace icil::harness
