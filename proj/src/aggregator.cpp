#include "ficl/aggregator.hpp"

#include <random>
#include <string>

#include "ficl/error.hpp"
#include "ficl/tokenizer.hpp"

namespace ficl {

Digest demo_digest(const Demonstration& demo) {
  Hasher h;
  h.update(std::string_view("demo"));
  h.update(image_digest(demo.image));
  h.update(std::string_view(demo.instruction));
  h.update(std::string_view(demo.label));
  return h.finish();
}

AggregationConfig AggregationConfig::resolve(const ModelConfig& model) const {
  AggregationConfig out = *this;
  if (out.n_layers == 0) out.n_layers = model.n_layers;
  if (out.n_layers > model.n_layers) {
    throw ConfigError("aggregation layer count " + std::to_string(out.n_layers) + " exceeds backbone depth " +
                      std::to_string(model.n_layers));
  }
  return out;
}

ProjectionLayer::ProjectionLayer(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2 || weight_.rows() != weight_.cols()) throw DimensionError("projection weight must be square");
  if (bias_.size() != weight_.cols()) throw DimensionError("projection bias length must equal d_model");
}

ProjectionLayer ProjectionLayer::near_identity(std::size_t d_model, std::uint64_t seed, double noise_std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_std);
  std::vector<double> w(d_model * d_model);
  for (std::size_t i = 0; i < d_model; ++i)
    for (std::size_t j = 0; j < d_model; ++j) w[i * d_model + j] = (i == j ? 1.0 : 0.0) + noise(rng);
  return ProjectionLayer(Tensor({d_model, d_model}, std::move(w)), Tensor::zeros({d_model}));
}

Digest ProjectionLayer::version() const {
  Hasher h;
  h.update(std::string_view("projection"));
  h.update(weight_.data());
  h.update(bias_.data());
  return h.finish();
}

Tensor aggregate_hidden(const Demonstration& demo, const AggregationConfig& cfg, const BackboneWeights& w,
                        ForwardTrace* trace) {
  const auto resolved = cfg.resolve(w.config);
  const auto ids = tokenize(demo.text());
  if (ids.empty()) throw InputError("demonstration text is empty");
  const std::size_t m = w.config.visual_tokens;
  if (m + ids.size() > w.config.max_seq) {
    throw CapacityError("demonstration of " + std::to_string(ids.size()) + " text tokens plus " +
                        std::to_string(m) + " visual tokens exceeds max_seq " + std::to_string(w.config.max_seq));
  }
  const Tensor parts[] = {encode_image(demo.image, w).tokens, embed_tokens(ids, w)};
  const Tensor hidden = forward_layers(concat_rows(parts), 0, resolved.n_layers, w, trace);
  return slice_rows(hidden, m, ids.size());
}

Tensor project(const Tensor& hidden, const ProjectionParams& p) { return add_row(matmul(hidden, p.weight), p.bias); }

AggregationContext::AggregationContext(const BackboneWeights& w, const ProjectionLayer& proj,
                                       const AggregationConfig& cfg)
    : weights(&w),
      projection(&proj),
      config(cfg.resolve(w.config)),
      weights_version(w.digest()),
      projection_version(proj.version()) {
  if (proj.d_model() != w.config.d_model) throw DimensionError("projection width differs from backbone d_model");
}

FusedTokens aggregate(const Demonstration& demo, const AggregationContext& ctx, ForwardTrace* trace) {
  Tensor tokens = project(aggregate_hidden(demo, ctx.config, *ctx.weights, trace), ctx.projection->params());
  FusedTokens out;
  out.text_len = tokens.rows();
  out.tokens = std::move(tokens);
  out.demo_digest = demo_digest(demo);
  out.n_layers_used = ctx.config.n_layers;
  out.weights_version = ctx.weights_version;
  out.projection_version = ctx.projection_version;
  return out;
}

FusedTokens aggregate(const Demonstration& demo, const AggregationConfig& cfg, const BackboneWeights& w,
                      const ProjectionLayer& proj, ForwardTrace* trace) {
  return aggregate(demo, AggregationContext(w, proj, cfg), trace);
}

std::vector<FusedTokens> aggregate_batch(std::span<const Demonstration> demos, const AggregationConfig& cfg,
                                         const BackboneWeights& w, const ProjectionLayer& proj,
                                         ForwardTrace* trace) {
  if (demos.empty()) throw UsageError("aggregate_batch: empty batch");
  const AggregationContext ctx(w, proj, cfg);
  std::vector<FusedTokens> out;
  out.reserve(demos.size());
  for (std::size_t i = 0; i < demos.size(); ++i) {
    try {
      out.push_back(aggregate(demos[i], ctx, trace));
    } catch (const Error& e) {
      throw Error(e.kind(), "batch item " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

DemonstrationSequence concat_fused(std::span<const FusedTokens> parts) {
  if (parts.empty()) throw UsageError("concat_fused: no parts");
  std::vector<Tensor> tensors;
  DemonstrationSequence seq;
  for (const auto& p : parts) {
    if (p.weights_version != parts[0].weights_version || p.projection_version != parts[0].projection_version ||
        p.n_layers_used != parts[0].n_layers_used) {
      throw ConsistencyError("concat_fused: parts were aggregated under different weights or layer counts");
    }
    tensors.push_back(p.tokens);
    seq.lengths.push_back(p.tokens.rows());
  }
  seq.tokens = concat_rows(tensors);
  return seq;
}

}  // namespace ficl
