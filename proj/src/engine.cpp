#include "ficl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ficl/error.hpp"
#include "ficl/tokenizer.hpp"

namespace ficl {

const char* to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::kFusedDemo: return "FUSED_DEMO";
    case SegmentKind::kVisualDemo: return "VISUAL_DEMO";
    case SegmentKind::kTextDemo: return "TEXT_DEMO";
    case SegmentKind::kVisualQuery: return "VISUAL_QUERY";
    case SegmentKind::kTextQuery: return "TEXT_QUERY";
    case SegmentKind::kGenerated: return "GENERATED";
  }
  return "UNKNOWN";
}

PromptSequence::PromptSequence(std::vector<Part> parts, std::size_t max_seq) {
  if (parts.empty()) throw UsageError("prompt has no segments");
  std::vector<Tensor> rows;
  std::size_t start = 0;
  for (auto& p : parts) {
    segments_.push_back({p.kind, p.demo_index, start, p.rows.rows()});
    start += p.rows.rows();
    rows.push_back(std::move(p.rows));
  }
  if (start > max_seq) {
    throw CapacityError("prompt of " + std::to_string(start) + " tokens exceeds max_seq " + std::to_string(max_seq));
  }
  embeddings_ = concat_rows(rows).detached();
}

Tensor PromptSequence::extract(std::size_t segment) const {
  const auto& s = segments_.at(segment);
  return slice_rows(embeddings_, s.start, s.length);
}

namespace {

struct QueryParts {
  Tensor visual;
  Tensor text;
  std::size_t length() const { return visual.rows() + text.rows(); }
};

QueryParts query_parts(const Query& q, const BackboneWeights& w) {
  if (q.instruction.empty()) throw InputError("query instruction is empty");
  const auto ids = tokenize(q.instruction);
  return {encode_image(q.image, w).tokens, embed_tokens(ids, w)};
}

// Throws CapacityError naming the first demo whose rows push the prompt past
// max_seq once the query is appended.
void check_capacity(std::span<const std::size_t> demo_lengths, std::size_t query_len, std::size_t max_seq) {
  std::size_t used = query_len;
  if (used > max_seq) {
    throw CapacityError("query alone needs " + std::to_string(query_len) + " tokens, max_seq is " +
                        std::to_string(max_seq));
  }
  for (std::size_t i = 0; i < demo_lengths.size(); ++i) {
    used += demo_lengths[i];
    if (used > max_seq) {
      throw CapacityError("demo " + std::to_string(i) + " does not fit: prompt would need " + std::to_string(used) +
                          " of " + std::to_string(max_seq) + " positions");
    }
  }
}

void append_query(std::vector<PromptSequence::Part>& parts, QueryParts q) {
  parts.push_back({SegmentKind::kVisualQuery, kNoDemo, std::move(q.visual)});
  parts.push_back({SegmentKind::kTextQuery, kNoDemo, std::move(q.text)});
}

std::size_t argmax_lowest(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

double log_softmax_at(std::span<const double> row, std::size_t idx) {
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += std::exp(v - mx);
  return row[idx] - mx - std::log(total);
}

Tensor full_logits(const Tensor& seq, const BackboneWeights& w, ForwardTrace* trace = nullptr) {
  return lm_logits(forward_layers(seq, 0, w.config.n_layers, w, trace), w);
}

}  // namespace

PromptSequence build_prompt_fused(std::span<const FusedTokens> demos, const Query& q, const BackboneWeights& w) {
  QueryParts query = query_parts(q, w);
  std::vector<std::size_t> lengths;
  for (const auto& d : demos) lengths.push_back(d.tokens.rows());
  check_capacity(lengths, query.length(), w.config.max_seq);
  std::vector<PromptSequence::Part> parts;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    if (demos[i].tokens.cols() != w.config.d_model) throw DimensionError("fused tokens width differs from d_model");
    if (i > 0 && (demos[i].weights_version != demos[0].weights_version ||
                  demos[i].projection_version != demos[0].projection_version ||
                  demos[i].n_layers_used != demos[0].n_layers_used)) {
      throw ConsistencyError("fused demos were aggregated under different weights or layer counts");
    }
    parts.push_back({SegmentKind::kFusedDemo, i, demos[i].tokens});
  }
  append_query(parts, std::move(query));
  return PromptSequence(std::move(parts), w.config.max_seq);
}

PromptSequence build_prompt_baseline(std::span<const Demonstration> demos, const Query& q,
                                     const BackboneWeights& w) {
  QueryParts query = query_parts(q, w);
  std::vector<std::vector<int>> ids;
  std::vector<std::size_t> lengths;
  for (const auto& d : demos) {
    ids.push_back(tokenize(d.text()));
    if (ids.back().empty()) throw InputError("demonstration text is empty");
    lengths.push_back(w.config.visual_tokens + ids.back().size());
  }
  check_capacity(lengths, query.length(), w.config.max_seq);
  std::vector<PromptSequence::Part> parts;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    parts.push_back({SegmentKind::kVisualDemo, i, encode_image(demos[i].image, w).tokens});
    parts.push_back({SegmentKind::kTextDemo, i, embed_tokens(ids[i], w)});
  }
  append_query(parts, std::move(query));
  return PromptSequence(std::move(parts), w.config.max_seq);
}

PromptSequence build_prompt_text_only(std::span<const Demonstration> demos, const Query& q,
                                      const BackboneWeights& w) {
  QueryParts query = query_parts(q, w);
  std::vector<std::vector<int>> ids;
  std::vector<std::size_t> lengths;
  for (const auto& d : demos) {
    ids.push_back(tokenize(d.text()));
    if (ids.back().empty()) throw InputError("demonstration text is empty");
    lengths.push_back(ids.back().size());
  }
  check_capacity(lengths, query.length(), w.config.max_seq);
  std::vector<PromptSequence::Part> parts;
  for (std::size_t i = 0; i < demos.size(); ++i) parts.push_back({SegmentKind::kTextDemo, i, embed_tokens(ids[i], w)});
  append_query(parts, std::move(query));
  return PromptSequence(std::move(parts), w.config.max_seq);
}

GenerationResult generate(const PromptSequence& prompt, std::size_t max_new_tokens, const BackboneWeights& w,
                          DecodeMode mode) {
  if (max_new_tokens == 0) throw UsageError("generate: max_new_tokens must be at least 1");
  GenerationResult out;
  const std::size_t budget = std::min(max_new_tokens, w.config.max_seq - prompt.length() + 1);
  DecodeSession session(w);
  Tensor logits = mode == DecodeMode::kIncremental
                      ? session.prefill(prompt.embeddings())
                      : slice_rows(full_logits(prompt.embeddings(), w), prompt.length() - 1, 1);
  while (true) {
    const auto row = logits.row(0);
    const std::size_t next = argmax_lowest(row);
    out.ids.push_back(static_cast<int>(next));
    out.logprobs.push_back(log_softmax_at(row, next));
    if (static_cast<int>(next) == kEosId || out.ids.size() >= budget) break;
    if (mode == DecodeMode::kIncremental) {
      logits = session.step(static_cast<int>(next));
    } else {
      const Tensor parts[] = {prompt.embeddings(), embed_tokens(out.ids, w)};
      const Tensor seq = concat_rows(parts);
      logits = slice_rows(full_logits(seq, w), seq.rows() - 1, 1);
    }
  }
  out.text = detokenize(out.ids);
  return out;
}

PerplexityResult perplexity(const PromptSequence& prompt, const std::string& gold, const BackboneWeights& w) {
  if (gold.empty()) throw InputError("perplexity: gold text is empty");
  const auto ids = tokenize(gold);
  const std::size_t p = prompt.length(), n = ids.size();
  if (p + n - 1 > w.config.max_seq) {
    throw CapacityError("prompt plus gold needs " + std::to_string(p + n - 1) + " positions, max_seq is " +
                        std::to_string(w.config.max_seq));
  }
  PerplexityResult out;
  out.tokens = n;
  Tensor seq = prompt.embeddings();
  if (n > 1) {
    const Tensor parts[] = {seq, embed_tokens(std::span<const int>(ids).first(n - 1), w)};
    seq = concat_rows(parts);
  }
  Tensor logits;
  try {
    logits = full_logits(seq, w);
  } catch (const NumericError&) {
    out.value = std::numeric_limits<double>::infinity();
    out.mean_nll = std::numeric_limits<double>::infinity();
    out.overflow = true;
    return out;
  }
  double nll = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    nll -= log_softmax_at(logits.row(p - 1 + i), static_cast<std::size_t>(ids[i]));
  out.mean_nll = nll / static_cast<double>(n);
  out.value = std::exp(out.mean_nll);
  if (!std::isfinite(out.value)) {
    out.value = std::numeric_limits<double>::infinity();
    out.overflow = true;
  }
  return out;
}

AttentionMass attention_mass(const PromptSequence& prompt, const BackboneWeights& w, std::size_t layer,
                             bool keep_per_head) {
  if (layer >= w.config.n_layers) {
    throw UsageError("attention_mass: layer " + std::to_string(layer) + " outside " +
                     std::to_string(w.config.n_layers) + " layers");
  }
  ForwardTrace trace;
  trace.capture_layer = layer;
  forward_layers(prompt.embeddings(), 0, layer + 1, w, &trace);
  const std::size_t last = prompt.length() - 1;
  const auto& segs = prompt.segments();
  AttentionMass out;
  out.layer = layer;
  out.fractions.assign(segs.size(), 0.0);
  const double inv_heads = 1.0 / static_cast<double>(trace.captured_probs.size());
  for (const Tensor& probs : trace.captured_probs) {
    const auto row = probs.row(last);
    std::vector<double> head(segs.size(), 0.0);
    for (std::size_t s = 0; s < segs.size(); ++s)
      for (std::size_t j = segs[s].start; j < segs[s].start + segs[s].length; ++j) head[s] += row[j];
    for (std::size_t s = 0; s < segs.size(); ++s) out.fractions[s] += head[s] * inv_heads;
    if (keep_per_head) out.per_head.push_back(std::move(head));
  }
  const double total = std::accumulate(out.fractions.begin(), out.fractions.end(), 0.0);
  for (auto& f : out.fractions) f /= total;
  return out;
}

ModalityMass summarize_mass(const PromptSequence& prompt, const AttentionMass& mass) {
  ModalityMass m;
  const auto& segs = prompt.segments();
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const double f = mass.fractions.at(s);
    switch (segs[s].kind) {
      case SegmentKind::kVisualDemo: m.demo_visual += f; break;
      case SegmentKind::kTextDemo: m.demo_text += f; break;
      case SegmentKind::kFusedDemo: m.demo_fused += f; break;
      case SegmentKind::kVisualQuery: m.query_visual += f; break;
      case SegmentKind::kTextQuery:
      case SegmentKind::kGenerated: m.query_text += f; break;
    }
  }
  return m;
}

std::vector<double> image_embedding(const Image& img, const BackboneWeights& w) {
  const Tensor tokens = encode_image(img, w).tokens;
  std::vector<double> mean(tokens.cols(), 0.0);
  for (std::size_t r = 0; r < tokens.rows(); ++r)
    for (std::size_t c = 0; c < tokens.cols(); ++c) mean[c] += tokens.at(r, c);
  for (auto& v : mean) v /= static_cast<double>(tokens.rows());
  return mean;
}

namespace {

double norm(const std::vector<double>& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

}  // namespace

RicesIndex::RicesIndex(std::span<const Demonstration> pool, const BackboneWeights& w) : w_(&w) {
  embeddings_.reserve(pool.size());
  for (const auto& d : pool) embeddings_.push_back(image_embedding(d.image, w));
}

RicesSelection RicesIndex::select(const Image& query, std::size_t k) const {
  if (k > embeddings_.size()) {
    throw UsageError("rices: k = " + std::to_string(k) + " exceeds pool of " + std::to_string(embeddings_.size()));
  }
  RicesSelection out;
  const auto q = image_embedding(query, *w_);
  const double qn = norm(q);
  if (qn == 0.0) throw InputError("rices: query image embedding has zero norm");
  std::vector<RicesHit> scored;
  for (std::size_t i = 0; i < embeddings_.size(); ++i) {
    const double n = norm(embeddings_[i]);
    if (n == 0.0) {
      out.warnings.push_back("pool item " + std::to_string(i) + " has a zero-norm embedding; excluded");
      continue;
    }
    const double dot = std::inner_product(q.begin(), q.end(), embeddings_[i].begin(), 0.0);
    scored.push_back({i, dot / (qn * n)});
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const RicesHit& a, const RicesHit& b) { return a.similarity > b.similarity; });
  if (scored.size() > k) scored.resize(k);
  out.hits = std::move(scored);
  return out;
}

RicesSelection rices_select(const Image& query, std::span<const Demonstration> pool, std::size_t k,
                            const BackboneWeights& w) {
  return RicesIndex(pool, w).select(query, k);
}

}  // namespace ficl
