#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ficl/digest.hpp"
#include "ficl/image.hpp"
#include "ficl/tensor.hpp"

namespace ficl {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 8;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 259;
  std::size_t visual_tokens = 16;  // M; also the number of resampler queries
  std::size_t patch_size = 4;
  std::size_t max_seq = 512;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t mlp_dim() const { return 4 * d_model; }

  // Throws ConfigError when an invariant does not hold.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

Digest config_digest(const ModelConfig& cfg);

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

// Perceiver-style resampler: M learned queries cross-attend once over
// linearly projected patches, then a connector maps into LM input space.
struct VisionWeights {
  Tensor patch_proj, patch_bias;
  Tensor patch_ln_gain, patch_ln_bias;
  Tensor queries;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor out_ln_gain, out_ln_bias;
  Tensor connector, connector_bias;
};

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

struct ParamGroup {
  std::string name;
  std::vector<NamedTensor> params;
};

// Frozen parameters of the toy multimodal model. Nothing in here is ever
// trained; the only trainable parameters live in ProjectionLayer.
struct BackboneWeights {
  ModelConfig config;
  Tensor token_embedding;     // [V x d]
  Tensor position_embedding;  // [max_seq x d]
  std::vector<LayerWeights> layers;
  Tensor final_ln_gain, final_ln_bias;
  Tensor head, head_bias;  // [d x V], [V]
  VisionWeights vision;

  // Parameter groups in the declared (serialisation) order.
  std::vector<ParamGroup> groups() const;
  Digest group_digest(const ParamGroup& g) const;
  // Digest over every group; used as the backbone version.
  Digest digest() const;
};

// Deterministic initialisation from config.seed.
BackboneWeights init_backbone(const ModelConfig& cfg);

struct VisualTokens {
  Tensor tokens;  // [M x d]
  Digest source_hash;
};

// Optional instrumentation threaded through forward passes.
struct ForwardTrace {
  std::uint64_t forward_calls = 0;     // forward_layers invocations
  std::uint64_t attention_scores = 0;  // self-attention score elements computed
  // When set, per-head queries, keys and attention probabilities of that layer
  // are captured from the most recent forward.
  std::optional<std::size_t> capture_layer;
  std::vector<Tensor> captured_queries;
  std::vector<Tensor> captured_keys;
  std::vector<Tensor> captured_probs;
};

Tensor embed_tokens(std::span<const int> ids, const BackboneWeights& w);

VisualTokens encode_image(const Image& img, const BackboneWeights& w);

// Applies decoder layers [from_layer, to_layer). When from_layer == 0 the
// learned position rows 0..t-1 are added first, so positions always count
// from the start of `seq`. Gradients flow through when `seq` is tracked.
Tensor forward_layers(const Tensor& seq, std::size_t from_layer, std::size_t to_layer,
                      const BackboneWeights& w, ForwardTrace* trace = nullptr, bool causal = true);

// Final layer norm followed by the vocabulary head.
Tensor lm_logits(const Tensor& hidden, const BackboneWeights& w);

// Incremental decoder holding per-layer key/value rows.
class DecodeSession {
 public:
  explicit DecodeSession(const BackboneWeights& w) : w_(&w) {}

  // Runs the full prompt and returns logits for its last position [1 x V].
  Tensor prefill(const Tensor& prompt_embeddings);
  // Appends one token and returns its logits [1 x V].
  Tensor step(int token_id);
  std::size_t length() const { return length_; }

 private:
  Tensor run(const Tensor& x);

  const BackboneWeights* w_;
  std::vector<Tensor> keys_, values_;
  std::size_t length_ = 0;
};

inline constexpr std::uint32_t kWeightsFormatVersion = 1;

void save_weights(const std::filesystem::path& path, const BackboneWeights& w);
// Throws CorruptionError on truncation or digest mismatch.
BackboneWeights load_weights(const std::filesystem::path& path);
// As above, and throws ConfigError when the stored config differs from `expected`.
BackboneWeights load_weights(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace ficl
