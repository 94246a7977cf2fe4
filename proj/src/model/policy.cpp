#include "icil/model/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "icil/numerics/ops.hpp"

namespace icil::model {

namespace {

using namespace icil::num;

constexpr int kRoleState = 0;
constexpr int kRoleReasoning = 1;
constexpr int kRoleAction = 2;

std::string layer_name(int layer, const char* what) { return "layer" + std::to_string(layer) + "." + what; }

void check_unit_range(std::span<const float> values) {
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw std::invalid_argument("reasoning trace value " + std::to_string(v) + " outside [0, 1]");
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_hidden <= 0) fail("sizes must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if ((d_model / n_heads) % 2 != 0) fail("head width must be even for rotary embeddings");
  if (patch_size <= 0 || third_resolution % patch_size != 0 || wrist_resolution % patch_size != 0) {
    fail("image resolutions must be multiples of the patch size");
  }
  if (max_context < 3) fail("max_context must hold at least one step");
  if (chunk_horizon < 1) fail("chunk_horizon must be >= 1");
  if (!(lambda_r >= 0.0f)) fail("lambda_r must be >= 0");
  if (!(action_scale > 0.0f)) fail("action_scale must be > 0");
}

std::map<std::string, std::string> ModelConfig::to_header() const {
  auto f = [](float v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
  };
  return {
      {"d_model", std::to_string(d_model)},
      {"n_layers", std::to_string(n_layers)},
      {"n_heads", std::to_string(n_heads)},
      {"ffn_hidden", std::to_string(ffn_hidden)},
      {"patch_size", std::to_string(patch_size)},
      {"max_context", std::to_string(max_context)},
      {"chunk_horizon", std::to_string(chunk_horizon)},
      {"lambda_r", f(lambda_r)},
      {"third_resolution", std::to_string(third_resolution)},
      {"wrist_resolution", std::to_string(wrist_resolution)},
      {"action_scale", f(action_scale)},
      {"patch_positional", patch_positional ? "1" : "0"},
      {"init_seed", std::to_string(init_seed)},
  };
}

ModelConfig ModelConfig::from_header(const std::map<std::string, std::string>& header) {
  auto get = [&](const char* key) -> const std::string& {
    const auto it = header.find(key);
    if (it == header.end()) throw CheckpointError(std::string("checkpoint header lacks '") + key + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.d_model = std::stoi(get("d_model"));
    c.n_layers = std::stoi(get("n_layers"));
    c.n_heads = std::stoi(get("n_heads"));
    c.ffn_hidden = std::stoi(get("ffn_hidden"));
    c.patch_size = std::stoi(get("patch_size"));
    c.max_context = std::stoi(get("max_context"));
    c.chunk_horizon = std::stoi(get("chunk_horizon"));
    c.lambda_r = std::stof(get("lambda_r"));
    c.third_resolution = std::stoi(get("third_resolution"));
    c.wrist_resolution = std::stoi(get("wrist_resolution"));
    c.action_scale = std::stof(get("action_scale"));
    c.patch_positional = get("patch_positional") == "1";
    c.init_seed = std::stoull(get("init_seed"));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const CheckpointError*>(&e)) throw;
    throw CheckpointError(std::string("malformed model header value: ") + e.what());
  }
  c.validate();
  return c;
}

void KVCache::clear() {
  keys.clear();
  values.clear();
  length = 0;
}

std::vector<float> patchify(std::span<const float> image, int resolution, int patch) {
  if (patch <= 0 || resolution % patch != 0) throw std::invalid_argument("patchify: resolution not a multiple of patch");
  if (image.size() != static_cast<std::size_t>(resolution) * resolution * 3) {
    throw std::invalid_argument("patchify: image has " + std::to_string(image.size()) + " values, expected " +
                                std::to_string(resolution * resolution * 3));
  }
  const int n = resolution / patch;
  std::vector<float> out;
  out.reserve(image.size());
  for (int pr = 0; pr < n; ++pr) {
    for (int pc = 0; pc < n; ++pc) {
      for (int r = 0; r < patch; ++r) {
        const auto* row = image.data() + (static_cast<std::size_t>(pr * patch + r) * resolution + pc * patch) * 3;
        out.insert(out.end(), row, row + patch * 3);
      }
    }
  }
  return out;
}

Tensor attention_pool(const Tensor& items, const Tensor& values, const Tensor& query) {
  const auto& s = items.shape();
  if (s.size() != 3 || values.shape() != s || query.shape() != Shape{s[2], 1}) {
    throw ShapeError("attention_pool: items/values [S, n, d] and query [d, 1] expected, got " + shape_str(s) + ", " +
                     shape_str(values.shape()) + ", " + shape_str(query.shape()));
  }
  const int S = s[0], n = s[1], d = s[2];
  Tensor scores = scale(reshape(matmul(items, query), {S, 1, n}), 1.0f / std::sqrt(static_cast<float>(d)));
  return reshape(matmul(softmax(scores), values), {S, d});
}

PolicyModel::PolicyModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.init_seed);
  const int d = config_.d_model;
  const int pd = patch_dim();
  const float in_d = 1.0f / std::sqrt(static_cast<float>(d));
  const float out_scale = in_d / std::sqrt(2.0f * static_cast<float>(config_.n_layers));

  auto linear_params = [&](const std::string& prefix, int in, int out, float stddev) {
    add_param(prefix + ".w", {in, out}, stddev, rng);
    add_param_filled(prefix + ".b", {out}, 0.0f);
  };
  auto mlp_params = [&](const std::string& prefix, int in) {
    linear_params(prefix + ".fc1", in, d, 1.0f / std::sqrt(static_cast<float>(in)));
    linear_params(prefix + ".fc2", d, d, in_d);
  };

  linear_params("third_patch", pd, d, 1.0f / std::sqrt(static_cast<float>(pd)));
  linear_params("wrist_patch", pd, d, 1.0f / std::sqrt(static_cast<float>(pd)));
  if (config_.patch_positional) {
    add_param("third_pos", {n_third_patches(), d}, 0.5f, rng);
    add_param("wrist_pos", {n_wrist_patches(), d}, 0.5f, rng);
  }
  mlp_params("proprio", data::kProprioDim);
  add_param_filled("item.norm", {d}, 1.0f);
  mlp_params("item", d);
  add_param("pool.query", {d, 1}, in_d, rng);
  linear_params("pool.out", d, d, in_d);
  mlp_params("reasoning_enc", data::kTraceDim);
  mlp_params("action_enc", data::kActionDim);
  add_param("role", {3, d}, 0.5f, rng);

  for (int l = 0; l < config_.n_layers; ++l) {
    add_param_filled(layer_name(l, "attn_norm"), {d}, 1.0f);
    add_param(layer_name(l, "wq"), {d, d}, in_d, rng);
    add_param(layer_name(l, "wk"), {d, d}, in_d, rng);
    add_param(layer_name(l, "wv"), {d, d}, in_d, rng);
    add_param(layer_name(l, "wo"), {d, d}, out_scale, rng);
    add_param_filled(layer_name(l, "mlp_norm"), {d}, 1.0f);
    add_param(layer_name(l, "w1"), {d, config_.ffn_hidden}, in_d, rng);
    add_param(layer_name(l, "w3"), {d, config_.ffn_hidden}, in_d, rng);
    add_param(layer_name(l, "w2"), {config_.ffn_hidden, d},
              out_scale * std::sqrt(static_cast<float>(d) / static_cast<float>(config_.ffn_hidden)), rng);
  }
  add_param_filled("final_norm", {d}, 1.0f);
  linear_params("head_reasoning", d, data::kTraceDim, 0.5f * in_d);
  linear_params("head_action", d, config_.chunk_horizon * data::kActionDim, 0.5f * in_d);
}

Tensor PolicyModel::add_param(const std::string& name, Shape shape, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  index_[name] = params_.size();
  params_.emplace_back(name, Tensor::from(std::move(shape), std::move(values), true));
  return params_.back().second;
}

Tensor PolicyModel::add_param_filled(const std::string& name, Shape shape, float value) {
  index_[name] = params_.size();
  params_.emplace_back(name, Tensor::full(std::move(shape), value, true));
  return params_.back().second;
}

const Tensor& PolicyModel::p(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no model parameter named '" + name + "'");
  return params_[it->second].second;
}

Tensor& PolicyModel::param(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no model parameter named '" + name + "'");
  return params_[it->second].second;
}

std::vector<Tensor> PolicyModel::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

std::size_t PolicyModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

int PolicyModel::n_third_patches() const {
  const int n = config_.third_resolution / config_.patch_size;
  return n * n;
}

int PolicyModel::n_wrist_patches() const {
  const int n = config_.wrist_resolution / config_.patch_size;
  return n * n;
}

Tensor PolicyModel::linear(const Tensor& x, const std::string& prefix) const {
  return add(matmul(x, p(prefix + ".w")), p(prefix + ".b"));
}

Tensor PolicyModel::mlp(const Tensor& x, const std::string& prefix) const {
  return linear(silu(linear(x, prefix + ".fc1")), prefix + ".fc2");
}

Tensor PolicyModel::role_embedding(int role) const {
  return reshape(index_rows(p("role"), std::vector<int>{role}), {config_.d_model});
}

Tensor PolicyModel::encode_states(const Tensor& third_patches, const Tensor& wrist_patches,
                                  const Tensor& proprio) const {
  const int n3 = n_third_patches();
  const int nw = n_wrist_patches();
  const int d = config_.d_model;
  if (proprio.rank() != 2 || proprio.dim(1) != data::kProprioDim) {
    throw ShapeError("encode_states: proprio must be [S, 4], got " + shape_str(proprio.shape()));
  }
  const int S = proprio.dim(0);
  if (third_patches.shape() != Shape{S * n3, patch_dim()} || wrist_patches.shape() != Shape{S * nw, patch_dim()}) {
    throw ShapeError("encode_states: image patches do not match the configured resolutions (got " +
                     shape_str(third_patches.shape()) + " and " + shape_str(wrist_patches.shape()) + ")");
  }
  Tensor third = reshape(linear(third_patches, "third_patch"), {S, n3, d});
  Tensor wrist = reshape(linear(wrist_patches, "wrist_patch"), {S, nw, d});
  if (config_.patch_positional) {
    third = add(third, p("third_pos"));
    wrist = add(wrist, p("wrist_pos"));
  }
  const Tensor prop = reshape(mlp(proprio, "proprio"), {S, 1, d});
  const std::vector<Tensor> parts{third, wrist, prop};
  Tensor items = concat(parts, 1);
  items = add(items, mlp(rmsnorm(items, p("item.norm")), "item"));
  const Tensor pooled = attention_pool(items, items, p("pool.query"));
  return add(linear(pooled, "pool.out"), role_embedding(kRoleState));
}

Tensor PolicyModel::encode_state(std::span<const float> third_image, std::span<const float> wrist_image,
                                 std::span<const float> proprio) const {
  if (proprio.size() != data::kProprioDim) throw ShapeError("encode_state: proprio must have 4 values");
  const auto third = patchify(third_image, config_.third_resolution, config_.patch_size);
  const auto wrist = patchify(wrist_image, config_.wrist_resolution, config_.patch_size);
  return encode_states(Tensor::from({n_third_patches(), patch_dim()}, third),
                       Tensor::from({n_wrist_patches(), patch_dim()}, wrist),
                       Tensor::from({1, data::kProprioDim}, {proprio.begin(), proprio.end()}));
}

Tensor PolicyModel::encode_reasoning(const Tensor& traces) const {
  if (traces.rank() != 2 || traces.dim(1) != data::kTraceDim) {
    throw ShapeError("encode_reasoning: traces must be [S, 10], got " + shape_str(traces.shape()));
  }
  check_unit_range(traces.data());
  return add(mlp(traces, "reasoning_enc"), role_embedding(kRoleReasoning));
}

Tensor PolicyModel::encode_reasoning(std::span<const float> trace, bool masked) const {
  if (trace.size() != data::kTraceDim) throw ShapeError("encode_reasoning: trace must have 10 values");
  std::vector<float> values(data::kTraceDim, 0.0f);
  if (!masked) values.assign(trace.begin(), trace.end());
  return encode_reasoning(Tensor::from({1, data::kTraceDim}, std::move(values)));
}

Tensor PolicyModel::encode_actions(const Tensor& scaled_actions) const {
  if (scaled_actions.rank() != 2 || scaled_actions.dim(1) != data::kActionDim) {
    throw ShapeError("encode_actions: actions must be [S, 4], got " + shape_str(scaled_actions.shape()));
  }
  return add(mlp(scaled_actions, "action_enc"), role_embedding(kRoleAction));
}

Tensor PolicyModel::interleave(const Tensor& states, const Tensor& reasonings, const Tensor& actions) const {
  const int S = states.dim(0);
  const int d = config_.d_model;
  const std::vector<Tensor> parts{reshape(states, {S, 1, d}), reshape(reasonings, {S, 1, d}),
                                  reshape(actions, {S, 1, d})};
  return reshape(concat(parts, 1), {3 * S, d});
}

Tensor PolicyModel::transform(const Tensor& tokens, KVCache* cache) const {
  const int d = config_.d_model;
  if (tokens.rank() != 2 || tokens.dim(1) != d) {
    throw ShapeError("transform: tokens must be [n, d_model], got " + shape_str(tokens.shape()));
  }
  const int n = tokens.dim(0);
  const int past = cache ? cache->length : 0;
  if (past + n > config_.max_context) {
    throw ContextOverflowError("context overflow: " + std::to_string(past) + " cached + " + std::to_string(n) +
                               " new tokens exceed max_context " + std::to_string(config_.max_context));
  }
  if (cache && cache->keys.empty()) {
    cache->keys.assign(static_cast<std::size_t>(config_.n_layers), {});
    cache->values.assign(static_cast<std::size_t>(config_.n_layers), {});
  }
  std::vector<int> positions(static_cast<std::size_t>(n));
  std::iota(positions.begin(), positions.end(), past);

  Tensor x = tokens;
  for (int l = 0; l < config_.n_layers; ++l) {
    const Tensor h = rmsnorm(x, p(layer_name(l, "attn_norm")));
    const Tensor q = rope(matmul(h, p(layer_name(l, "wq"))), positions, config_.n_heads);
    Tensor k = rope(matmul(h, p(layer_name(l, "wk"))), positions, config_.n_heads);
    Tensor v = matmul(h, p(layer_name(l, "wv")));
    if (cache) {
      auto& ck = cache->keys[static_cast<std::size_t>(l)];
      auto& cv = cache->values[static_cast<std::size_t>(l)];
      if (past > 0) {
        const std::vector<Tensor> ks{Tensor::from({past, d}, ck), k};
        const std::vector<Tensor> vs{Tensor::from({past, d}, cv), v};
        const Tensor new_k = k;
        const Tensor new_v = v;
        k = concat(ks, 0);
        v = concat(vs, 0);
        ck.insert(ck.end(), new_k.data().begin(), new_k.data().end());
        cv.insert(cv.end(), new_v.data().begin(), new_v.data().end());
      } else {
        ck.assign(k.data().begin(), k.data().end());
        cv.assign(v.data().begin(), v.data().end());
      }
    }
    x = add(x, matmul(causal_attention(q, k, v, config_.n_heads), p(layer_name(l, "wo"))));
    const Tensor h2 = rmsnorm(x, p(layer_name(l, "mlp_norm")));
    const Tensor gate = silu(matmul(h2, p(layer_name(l, "w1"))));
    x = add(x, matmul(mul(gate, matmul(h2, p(layer_name(l, "w3")))), p(layer_name(l, "w2"))));
  }
  if (cache) cache->length = past + n;
  return rmsnorm(x, p("final_norm"));
}

Tensor PolicyModel::reasoning_head(const Tensor& hidden) const { return linear(hidden, "head_reasoning"); }
Tensor PolicyModel::action_head(const Tensor& hidden) const { return linear(hidden, "head_action"); }

Outputs PolicyModel::forward_tokens(const Tensor& tokens) const {
  const int n = tokens.dim(0);
  if (n % data::kTokensPerStep != 0) throw ShapeError("forward: token count must be a multiple of 3");
  const Tensor hidden = transform(tokens);
  std::vector<int> state_pos, reasoning_pos;
  for (int s = 0; s < n / data::kTokensPerStep; ++s) {
    state_pos.push_back(s * data::kTokensPerStep);
    reasoning_pos.push_back(s * data::kTokensPerStep + 1);
  }
  return {reasoning_head(index_rows(hidden, state_pos)), action_head(index_rows(hidden, reasoning_pos))};
}

Outputs PolicyModel::forward(const Batch& batch) const {
  if (batch.steps * data::kTokensPerStep > config_.max_context) {
    throw ContextOverflowError("sequence of " + std::to_string(batch.steps) + " steps exceeds max_context " +
                               std::to_string(config_.max_context));
  }
  const Tensor states = encode_states(batch.third_patches, batch.wrist_patches, batch.proprio);
  const Tensor reasonings = encode_reasoning(batch.reasoning_in);
  const Tensor actions = encode_actions(batch.actions_in);
  return forward_tokens(interleave(states, reasonings, actions));
}

LossParts PolicyModel::loss(const Outputs& out, const Tensor& chunk_labels, const Tensor& trace_labels,
                            std::span<const std::uint8_t> action_mask,
                            std::span<const std::uint8_t> reasoning_mask) const {
  if (std::none_of(action_mask.begin(), action_mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw std::invalid_argument("loss: no unmasked action targets");
  }
  LossParts parts;
  const Tensor la = masked_l1(out.chunks, chunk_labels, action_mask);
  parts.action = la.item();
  parts.total = la;
  if (std::any_of(reasoning_mask.begin(), reasoning_mask.end(), [](std::uint8_t m) { return m != 0; })) {
    const Tensor lr = masked_l1(out.reasoning, trace_labels, reasoning_mask);
    parts.reasoning = lr.item();
    parts.total = add(la, scale(lr, config_.lambda_r));
  }
  return parts;
}

LossParts PolicyModel::loss(const Outputs& out, const Batch& batch) const {
  return loss(out, batch.chunk_labels, batch.trace_labels, batch.action_loss_mask, batch.reasoning_loss_mask);
}

Batch PolicyModel::make_batch(const data::TrainingSequence& seq) const {
  if (seq.chunk_horizon != config_.chunk_horizon) {
    throw std::invalid_argument("sequence chunk horizon " + std::to_string(seq.chunk_horizon) +
                                " differs from model horizon " + std::to_string(config_.chunk_horizon));
  }
  const int S = seq.total_steps;
  const int H = config_.chunk_horizon;
  const float inv_scale = 1.0f / config_.action_scale;
  std::vector<float> third, wrist, proprio, actions, chunks;
  third.reserve(static_cast<std::size_t>(S) * n_third_patches() * patch_dim());
  wrist.reserve(static_cast<std::size_t>(S) * n_wrist_patches() * patch_dim());
  Batch b;
  b.steps = S;
  b.reasoning_loss_mask.assign(static_cast<std::size_t>(S) * data::kTraceDim, 0);
  b.action_loss_mask.assign(static_cast<std::size_t>(S) * H * data::kActionDim, 0);
  for (int s = 0; s < S; ++s) {
    const auto [e, t] = seq.locate(s);
    const data::Trajectory& ep = *seq.episodes[static_cast<std::size_t>(e)];
    if (ep.third_resolution != config_.third_resolution || ep.wrist_resolution != config_.wrist_resolution) {
      throw ShapeError("episode image resolution does not match the model config");
    }
    const auto pt = patchify(ep.third_at(t), ep.third_resolution, config_.patch_size);
    const auto pw = patchify(ep.wrist_at(t), ep.wrist_resolution, config_.patch_size);
    third.insert(third.end(), pt.begin(), pt.end());
    wrist.insert(wrist.end(), pw.begin(), pw.end());
    const auto pr = ep.proprio_at(t);
    proprio.insert(proprio.end(), pr.begin(), pr.end());
    for (float a : ep.action_at(t)) actions.push_back(a * inv_scale);

    const bool target = s >= seq.target_offset;
    std::vector<float> chunk;
    std::vector<bool> valid;
    if (target) {
      const auto off = static_cast<std::size_t>(t) * H;
      chunk.assign(seq.chunk_actions.begin() + static_cast<std::ptrdiff_t>(off * data::kActionDim),
                   seq.chunk_actions.begin() + static_cast<std::ptrdiff_t>((off + H) * data::kActionDim));
      valid.assign(seq.chunk_valid.begin() + static_cast<std::ptrdiff_t>(off),
                   seq.chunk_valid.begin() + static_cast<std::ptrdiff_t>(off + H));
    } else {
      auto c = data::chunk_labels(ep, t, H);
      chunk = std::move(c.actions);
      valid = std::move(c.valid);
    }
    for (float a : chunk) chunks.push_back(a * inv_scale);
    if (seq.loss_mask[static_cast<std::size_t>(s * data::kTokensPerStep)]) {
      std::fill_n(b.reasoning_loss_mask.begin() + s * data::kTraceDim, data::kTraceDim, 1);
    }
    if (seq.loss_mask[static_cast<std::size_t>(s * data::kTokensPerStep + 1)]) {
      for (int j = 0; j < H; ++j) {
        if (!valid[static_cast<std::size_t>(j)]) continue;
        std::fill_n(b.action_loss_mask.begin() + (s * H + j) * data::kActionDim, data::kActionDim, 1);
      }
    }
  }
  b.third_patches = Tensor::from({S * n_third_patches(), patch_dim()}, std::move(third));
  b.wrist_patches = Tensor::from({S * n_wrist_patches(), patch_dim()}, std::move(wrist));
  b.proprio = Tensor::from({S, data::kProprioDim}, std::move(proprio));
  b.reasoning_in = Tensor::from({S, data::kTraceDim}, seq.reasoning_inputs);
  check_unit_range(b.reasoning_in.data());
  b.actions_in = Tensor::from({S, data::kActionDim}, std::move(actions));
  b.trace_labels = Tensor::from({S, data::kTraceDim}, seq.trace_labels);
  b.chunk_labels = Tensor::from({S, H * data::kActionDim}, std::move(chunks));
  return b;
}

num::Checkpoint PolicyModel::to_checkpoint() const {
  num::Checkpoint ckpt;
  ckpt.header = config_.to_header();
  ckpt.header["format"] = "icil-policy";
  for (const auto& [name, t] : params_) ckpt.tensors.emplace_back(name, t.detach().clone());
  return ckpt;
}

PolicyModel PolicyModel::from_checkpoint(const num::Checkpoint& ckpt) {
  PolicyModel model(ModelConfig::from_header(ckpt.header));
  if (ckpt.tensors.size() != model.params_.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                          std::to_string(model.params_.size()));
  }
  for (auto& [name, t] : model.params_) {
    const Tensor& src = ckpt.tensor(name);
    if (src.shape() != t.shape()) {
      throw CheckpointError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                            shape_str(t.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), t.data().begin());
  }
  return model;
}

void PolicyModel::save(const std::string& path) const { save_checkpoint(path, to_checkpoint()); }

PolicyModel PolicyModel::load(const std::string& path) { return from_checkpoint(load_checkpoint(path)); }

}  // namespace icil::model
