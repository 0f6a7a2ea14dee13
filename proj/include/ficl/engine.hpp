#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ficl/aggregator.hpp"
#include "ficl/backbone.hpp"

namespace ficl {

struct Query {
  Image image;
  std::string instruction;
};

enum class SegmentKind { kFusedDemo, kVisualDemo, kTextDemo, kVisualQuery, kTextQuery, kGenerated };

const char* to_string(SegmentKind kind);

inline constexpr std::size_t kNoDemo = std::numeric_limits<std::size_t>::max();

struct Segment {
  SegmentKind kind;
  std::size_t demo_index = kNoDemo;
  std::size_t start = 0;
  std::size_t length = 0;
};

// Embedding rows fed to the LM plus a span table that tiles them exactly.
// Positions are implied by row order.
class PromptSequence {
 public:
  struct Part {
    SegmentKind kind;
    std::size_t demo_index;
    Tensor rows;
  };

  PromptSequence(std::vector<Part> parts, std::size_t max_seq);

  const Tensor& embeddings() const { return embeddings_; }
  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t length() const { return embeddings_.rows(); }
  Tensor extract(std::size_t segment) const;

 private:
  Tensor embeddings_;
  std::vector<Segment> segments_;
};

// Layout: [fused demo 1 .. n][query visual tokens][query instruction].
// Overflow raises CapacityError naming the first demo that does not fit.
PromptSequence build_prompt_fused(std::span<const FusedTokens> demos, const Query& q, const BackboneWeights& w);
// Layout: [visual_1, text_1, ..., visual_n, text_n][query visual][query instruction].
PromptSequence build_prompt_baseline(std::span<const Demonstration> demos, const Query& q,
                                     const BackboneWeights& w);
// Demo images dropped, demo texts (instruction + label) kept.
PromptSequence build_prompt_text_only(std::span<const Demonstration> demos, const Query& q,
                                      const BackboneWeights& w);

struct GenerationResult {
  std::vector<int> ids;  // includes the terminating EOS when produced
  std::string text;
  std::vector<double> logprobs;
};

enum class DecodeMode { kIncremental, kRecompute };

// Greedy decoding; ties resolve to the lowest token id.
GenerationResult generate(const PromptSequence& prompt, std::size_t max_new_tokens, const BackboneWeights& w,
                          DecodeMode mode = DecodeMode::kIncremental);

struct PerplexityResult {
  double value = 0.0;     // +inf when overflowed
  bool overflow = false;  // sentinel flag
  double mean_nll = 0.0;
  std::size_t tokens = 0;
};

// Teacher-forced exp(mean NLL) of `gold` after `prompt`.
PerplexityResult perplexity(const PromptSequence& prompt, const std::string& gold, const BackboneWeights& w);

struct AttentionMass {
  std::size_t layer = 0;
  std::vector<double> fractions;              // one per prompt segment, sums to 1
  std::vector<std::vector<double>> per_head;  // filled when requested
};

// Attention of the last prompt position (the one producing the first
// generated token) at `layer`, averaged over heads and summed per segment.
AttentionMass attention_mass(const PromptSequence& prompt, const BackboneWeights& w, std::size_t layer,
                             bool keep_per_head = false);

struct ModalityMass {
  double demo_visual = 0.0;
  double demo_text = 0.0;
  double demo_fused = 0.0;
  double query_visual = 0.0;
  double query_text = 0.0;
};

ModalityMass summarize_mass(const PromptSequence& prompt, const AttentionMass& mass);

// Mean of the visual token rows.
std::vector<double> image_embedding(const Image& img, const BackboneWeights& w);

struct RicesHit {
  std::size_t index;
  double similarity;
};

struct RicesSelection {
  std::vector<RicesHit> hits;
  std::vector<std::string> warnings;
};

// Pool embeddings computed once; select() can then be called per query.
class RicesIndex {
 public:
  RicesIndex(std::span<const Demonstration> pool, const BackboneWeights& w);

  // Top-k by cosine similarity, descending; ties keep pool order. Pool items
  // with zero-norm embeddings are skipped with a warning.
  RicesSelection select(const Image& query, std::size_t k) const;
  std::size_t size() const { return embeddings_.size(); }

 private:
  const BackboneWeights* w_;
  std::vector<std::vector<double>> embeddings_;
};

RicesSelection rices_select(const Image& query, std::span<const Demonstration> pool, std::size_t k,
                            const BackboneWeights& w);

}  // namespace ficl
