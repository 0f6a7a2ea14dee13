#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ficl/backbone.hpp"
#include "ficl/digest.hpp"
#include "ficl/image.hpp"
#include "ficl/tensor.hpp"

namespace ficl {

// One image-text in-context example. The demonstrated text is the
// instruction followed directly by the label.
struct Demonstration {
  Image image;
  std::string instruction;
  std::string label;

  std::string text() const { return instruction + label; }
};

Digest demo_digest(const Demonstration& demo);

struct AggregationConfig {
  std::size_t n_layers = 0;  // N; 0 means "all layers" and is resolved by resolve()

  // Returns a copy with N filled in and checked against the backbone depth.
  AggregationConfig resolve(const ModelConfig& model) const;

  static AggregationConfig all_layers(const ModelConfig& m) { return {m.n_layers}; }
  static AggregationConfig half(const ModelConfig& m) { return {(m.n_layers + 1) / 2}; }
  static AggregationConfig three_quarters(const ModelConfig& m) { return {(3 * m.n_layers + 3) / 4}; }
};

struct ProjectionParams {
  Tensor weight;  // [d x d], applied as rows · weight
  Tensor bias;    // [d]
};

// The single trainable parameter group: maps layer-N hidden states into the
// LM input space.
class ProjectionLayer {
 public:
  ProjectionLayer() = default;
  ProjectionLayer(Tensor weight, Tensor bias);

  // Identity plus N(0, noise_std) entries; zero bias.
  static ProjectionLayer near_identity(std::size_t d_model, std::uint64_t seed, double noise_std = 0.02);

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  std::size_t d_model() const { return weight_.rows(); }

  ProjectionParams params() const { return {weight_, bias_}; }
  // Tracked copies for differentiation on `tape`.
  ProjectionParams track(Tape& tape) const { return {tape.watch(weight_), tape.watch(bias_)}; }

  Digest version() const;

 private:
  Tensor weight_;
  Tensor bias_;
};

// Projected text-position hidden states standing in for a whole demonstration.
struct FusedTokens {
  Tensor tokens;  // [|T| x d]
  std::size_t text_len = 0;
  Digest demo_digest{};
  std::size_t n_layers_used = 0;
  Digest weights_version{};
  Digest projection_version{};
};

// Layer-N hidden states above the text positions of image ⊕ text, with the
// image rows dropped. No gradients are recorded.
Tensor aggregate_hidden(const Demonstration& demo, const AggregationConfig& cfg, const BackboneWeights& w,
                        ForwardTrace* trace = nullptr);

// Row-wise projection; tracked when `p` is tracked.
Tensor project(const Tensor& hidden, const ProjectionParams& p);

// Weights, projection and layer count with their versions computed once.
struct AggregationContext {
  AggregationContext(const BackboneWeights& w, const ProjectionLayer& proj, const AggregationConfig& cfg);

  const BackboneWeights* weights;
  const ProjectionLayer* projection;
  AggregationConfig config;
  Digest weights_version;
  Digest projection_version;
};

FusedTokens aggregate(const Demonstration& demo, const AggregationContext& ctx, ForwardTrace* trace = nullptr);
FusedTokens aggregate(const Demonstration& demo, const AggregationConfig& cfg, const BackboneWeights& w,
                      const ProjectionLayer& proj, ForwardTrace* trace = nullptr);

// Each item is aggregated in isolation, so result i never depends on the
// other items. Failures are rethrown with the offending index.
std::vector<FusedTokens> aggregate_batch(std::span<const Demonstration> demos, const AggregationConfig& cfg,
                                         const BackboneWeights& w, const ProjectionLayer& proj,
                                         ForwardTrace* trace = nullptr);

struct DemonstrationSequence {
  Tensor tokens;
  std::vector<std::size_t> lengths;
  std::size_t rows() const { return tokens.rows(); }
};

DemonstrationSequence concat_fused(std::span<const FusedTokens> parts);

}  // namespace ficl
