#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icil/numerics/checkpoint.hpp"
#include "icil/numerics/tensor.hpp"
#include "icil/seqdata/sequence.hpp"

namespace icil::model {

using num::Tensor;

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int ffn_hidden = 256;
  int patch_size = 8;
  int max_context = 2048;
  int chunk_horizon = 8;
  float lambda_r = 0.3f;
  int third_resolution = 32;
  int wrist_resolution = 16;
  float action_scale = 0.05f;  // actions are divided by this before entering the model
  bool patch_positional = true;
  std::uint64_t init_seed = 0;

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;
  std::map<std::string, std::string> to_header() const;
  static ModelConfig from_header(const std::map<std::string, std::string>& header);
  bool operator==(const ModelConfig&) const = default;
};

class ContextOverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-layer keys and values for incremental decoding.
struct KVCache {
  std::vector<std::vector<float>> keys;    // per layer, length * d_model
  std::vector<std::vector<float>> values;  // per layer, length * d_model
  int length = 0;

  void clear();
};

/// Teacher-forcing inputs and labels for one sequence. Labels cover every step;
/// the masks select the target ones.
struct Batch {
  int steps = 0;
  Tensor third_patches;   // [S * n_third_patches, patch_dim]
  Tensor wrist_patches;   // [S * n_wrist_patches, patch_dim]
  Tensor proprio;         // [S, 4]
  Tensor reasoning_in;    // [S, 10]
  Tensor actions_in;      // [S, 4], scaled
  Tensor trace_labels;    // [S, 10]
  Tensor chunk_labels;    // [S, H * 4], scaled
  std::vector<std::uint8_t> reasoning_loss_mask;  // S * 10
  std::vector<std::uint8_t> action_loss_mask;     // S * H * 4
};

struct Outputs {
  Tensor reasoning;  // [S, 10], read at state positions
  Tensor chunks;     // [S, H * 4], read at reasoning positions, scaled units
};

struct LossParts {
  Tensor total;
  float action = 0.0f;
  float reasoning = 0.0f;  // 0 when no reasoning target is unmasked
};

/// Flattens an HWC image into non-overlapping P x P patches, each P * P * 3 long, row-major over patches.
std::vector<float> patchify(std::span<const float> image, int resolution, int patch);

/// Single learned-query softmax pooling. items, values: [S, n, d]; query: [d, 1].
/// Returns [S, d] = sum_i softmax_i(items_i . query / sqrt(d)) * values_i.
Tensor attention_pool(const Tensor& items, const Tensor& values, const Tensor& query);

class PolicyModel {
 public:
  explicit PolicyModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  std::vector<Tensor> trainable() const;
  Tensor& param(const std::string& name);
  std::size_t parameter_count() const;

  Batch make_batch(const data::TrainingSequence& seq) const;

  /// State tokens f_s for a batch of steps: [S, d].
  Tensor encode_states(const Tensor& third_patches, const Tensor& wrist_patches, const Tensor& proprio) const;
  Tensor encode_state(std::span<const float> third_image, std::span<const float> wrist_image,
                      std::span<const float> proprio) const;
  /// Reasoning tokens f_r: [S, d]. Throws std::invalid_argument for values outside [0,1].
  Tensor encode_reasoning(const Tensor& traces) const;
  Tensor encode_reasoning(std::span<const float> trace, bool masked) const;
  /// Action tokens f_a from scaled actions: [S, d].
  Tensor encode_actions(const Tensor& scaled_actions) const;

  /// Interleaves [s, r, a] per step into a [3S, d] token matrix.
  Tensor interleave(const Tensor& states, const Tensor& reasonings, const Tensor& actions) const;

  /// Causal transformer over tokens appended to `cache` (nullptr means an empty
  /// cache that is not kept). Returns final-normed hidden states for the new tokens.
  Tensor transform(const Tensor& tokens, KVCache* cache = nullptr) const;

  Tensor reasoning_head(const Tensor& hidden) const;  // [n, 10]
  Tensor action_head(const Tensor& hidden) const;     // [n, H * 4]

  Outputs forward(const Batch& batch) const;
  Outputs forward_tokens(const Tensor& tokens) const;

  /// mean-L1 over unmasked valid chunk elements + lambda_r * mean-L1 over unmasked trace elements.
  LossParts loss(const Outputs& out, const Batch& batch) const;
  LossParts loss(const Outputs& out, const Tensor& chunk_labels, const Tensor& trace_labels,
                 std::span<const std::uint8_t> action_mask, std::span<const std::uint8_t> reasoning_mask) const;

  num::Checkpoint to_checkpoint() const;
  static PolicyModel from_checkpoint(const num::Checkpoint& ckpt);
  void save(const std::string& path) const;
  static PolicyModel load(const std::string& path);

  int n_third_patches() const;
  int n_wrist_patches() const;
  int patch_dim() const { return config_.patch_size * config_.patch_size * 3; }

 private:
  Tensor add_param(const std::string& name, num::Shape shape, float stddev, std::mt19937_64& rng);
  Tensor add_param_filled(const std::string& name, num::Shape shape, float value);
  Tensor linear(const Tensor& x, const std::string& prefix) const;
  Tensor mlp(const Tensor& x, const std::string& prefix) const;
  const Tensor& p(const std::string& name) const;
  Tensor role_embedding(int role) const;

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace icil::model
