#include "ficl/backbone.hpp"

#include <cmath>
#include <random>
#include <string>

#include "ficl/binary_io.hpp"
#include "ficl/error.hpp"
#include "ficl/tokenizer.hpp"

namespace ficl {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || visual_tokens == 0 || patch_size == 0 || max_seq == 0)
    fail("all extents must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (d_model % 4 != 0) fail("d_model must be a multiple of 4 for 2D patch positions");
  if (vocab_size < static_cast<std::size_t>(kByteVocabSize)) fail("vocab_size below byte vocabulary");
  if (visual_tokens >= max_seq) fail("visual_tokens must be smaller than max_seq");
}

Digest config_digest(const ModelConfig& c) {
  Hasher h;
  h.update(std::string_view("model-config"));
  for (std::uint64_t v : {c.d_model, c.n_layers, c.n_heads, c.vocab_size, c.visual_tokens, c.patch_size,
                          c.max_seq, static_cast<std::size_t>(c.seed)})
    h.update(v);
  return h.finish();
}

namespace {

template <typename W, typename Fn>
void visit_groups(W& w, Fn&& fn) {
  fn("embed", std::vector<std::pair<const char*, decltype(&w.token_embedding)>>{
                  {"token_embedding", &w.token_embedding}, {"position_embedding", &w.position_embedding}});
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& l = w.layers[i];
    fn("layer." + std::to_string(i),
       std::vector<std::pair<const char*, decltype(&l.wq)>>{
           {"ln1_gain", &l.ln1_gain}, {"ln1_bias", &l.ln1_bias}, {"wq", &l.wq}, {"bq", &l.bq},
           {"wk", &l.wk}, {"bk", &l.bk}, {"wv", &l.wv}, {"bv", &l.bv}, {"wo", &l.wo}, {"bo", &l.bo},
           {"ln2_gain", &l.ln2_gain}, {"ln2_bias", &l.ln2_bias}, {"w1", &l.w1}, {"b1", &l.b1},
           {"w2", &l.w2}, {"b2", &l.b2}});
  }
  fn("final", std::vector<std::pair<const char*, decltype(&w.head)>>{{"final_ln_gain", &w.final_ln_gain},
                                                                     {"final_ln_bias", &w.final_ln_bias},
                                                                     {"head", &w.head},
                                                                     {"head_bias", &w.head_bias}});
  auto& v = w.vision;
  fn("vision", std::vector<std::pair<const char*, decltype(&v.wq)>>{
                   {"patch_proj", &v.patch_proj}, {"patch_bias", &v.patch_bias},
                   {"patch_ln_gain", &v.patch_ln_gain}, {"patch_ln_bias", &v.patch_ln_bias},
                   {"queries", &v.queries}, {"wq", &v.wq}, {"bq", &v.bq}, {"wk", &v.wk}, {"bk", &v.bk},
                   {"wv", &v.wv}, {"bv", &v.bv}, {"wo", &v.wo}, {"bo", &v.bo},
                   {"out_ln_gain", &v.out_ln_gain}, {"out_ln_bias", &v.out_ln_bias},
                   {"connector", &v.connector}, {"connector_bias", &v.connector_bias}});
}

class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double stddev) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    std::vector<double> d(n);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : d) v = dist(rng_);
    return Tensor(std::move(shape), std::move(d));
  }

 private:
  std::mt19937_64 rng_;
};

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul(x, w), b); }

// Multi-head attention over already projected q [tq x d], k/v [tk x d].
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads, bool causal,
              ForwardTrace* trace, bool capture) {
  const std::size_t dh = q.cols() / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  if (capture) {
    trace->captured_queries.clear();
    trace->captured_keys.clear();
    trace->captured_probs.clear();
  }
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    Tensor probs = causal ? causal_softmax_rows(scores) : softmax_rows(scores);
    if (trace != nullptr) trace->attention_scores += scores.size();
    if (capture) {
      trace->captured_queries.push_back(qh.detached());
      trace->captured_keys.push_back(kh.detached());
      trace->captured_probs.push_back(probs.detached());
    }
    heads.push_back(matmul(probs, vh));
  }
  return n_heads == 1 ? heads[0] : concat_cols(heads);
}

Tensor mlp(const Tensor& x, const LayerWeights& l) { return linear(gelu(linear(x, l.w1, l.b1)), l.w2, l.b2); }

Tensor decoder_layer(const Tensor& x, const LayerWeights& l, std::size_t n_heads, bool causal,
                     ForwardTrace* trace, bool capture) {
  Tensor h = layer_norm(x, l.ln1_gain, l.ln1_bias);
  Tensor a = attend(linear(h, l.wq, l.bq), linear(h, l.wk, l.bk), linear(h, l.wv, l.bv), n_heads, causal,
                    trace, capture);
  Tensor x1 = add(x, linear(a, l.wo, l.bo));
  return add(x1, mlp(layer_norm(x1, l.ln2_gain, l.ln2_bias), l));
}

// Fixed 2D sinusoidal code: first half of the channels encodes the patch
// row, second half the patch column.
Tensor patch_positions(std::size_t grid_h, std::size_t grid_w, std::size_t d) {
  const std::size_t half = d / 2;
  std::vector<double> out(grid_h * grid_w * d);
  for (std::size_t r = 0; r < grid_h; ++r) {
    for (std::size_t c = 0; c < grid_w; ++c) {
      double* row = out.data() + (r * grid_w + c) * d;
      for (std::size_t i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        row[2 * i] = std::sin(static_cast<double>(r) * freq);
        row[2 * i + 1] = std::cos(static_cast<double>(r) * freq);
        row[half + 2 * i] = std::sin(static_cast<double>(c) * freq);
        row[half + 2 * i + 1] = std::cos(static_cast<double>(c) * freq);
      }
    }
  }
  return Tensor({grid_h * grid_w, d}, std::move(out));
}

}  // namespace

std::vector<ParamGroup> BackboneWeights::groups() const {
  std::vector<ParamGroup> out;
  visit_groups(*this, [&](const std::string& name, const auto& params) {
    ParamGroup g{name, {}};
    for (const auto& [pname, t] : params) g.params.push_back({pname, t});
    out.push_back(std::move(g));
  });
  return out;
}

Digest BackboneWeights::group_digest(const ParamGroup& g) const {
  Hasher h;
  h.update(std::string_view(g.name));
  for (const auto& p : g.params) {
    h.update(std::string_view(p.name));
    h.update(static_cast<std::uint64_t>(p.tensor->rank()));
    for (auto e : p.tensor->shape()) h.update(static_cast<std::uint64_t>(e));
    h.update(p.tensor->data());
  }
  return h.finish();
}

Digest BackboneWeights::digest() const {
  Hasher h;
  h.update(std::string_view("backbone"));
  h.update(config_digest(config));
  for (const auto& g : groups()) h.update(group_digest(g));
  return h.finish();
}

BackboneWeights init_backbone(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, V = cfg.vocab_size, L = cfg.n_layers, f = cfg.mlp_dim();
  const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_res = s_d / std::sqrt(2.0 * static_cast<double>(L));
  Init init(cfg.seed);
  auto ones = [](std::size_t n) { return Tensor::full({n}, 1.0); };
  auto zeros = [](std::size_t n) { return Tensor::zeros({n}); };

  BackboneWeights w;
  w.config = cfg;
  w.token_embedding = init.normal({V, d}, 1.0);
  w.position_embedding = init.normal({cfg.max_seq, d}, 0.3);
  for (std::size_t i = 0; i < L; ++i) {
    LayerWeights l;
    l.ln1_gain = ones(d);
    l.ln1_bias = zeros(d);
    l.wq = init.normal({d, d}, s_d);
    l.bq = zeros(d);
    l.wk = init.normal({d, d}, s_d);
    l.bk = zeros(d);
    l.wv = init.normal({d, d}, s_d);
    l.bv = zeros(d);
    l.wo = init.normal({d, d}, s_res);
    l.bo = zeros(d);
    l.ln2_gain = ones(d);
    l.ln2_bias = zeros(d);
    l.w1 = init.normal({d, f}, s_d);
    l.b1 = zeros(f);
    l.w2 = init.normal({f, d}, 1.0 / std::sqrt(static_cast<double>(f)) / std::sqrt(2.0 * static_cast<double>(L)));
    l.b2 = zeros(d);
    w.layers.push_back(std::move(l));
  }
  w.final_ln_gain = ones(d);
  w.final_ln_bias = zeros(d);
  w.head = init.normal({d, V}, s_d);
  w.head_bias = zeros(V);

  const std::size_t pp = cfg.patch_size * cfg.patch_size;
  auto& v = w.vision;
  v.patch_proj = init.normal({pp, d}, 1.0 / static_cast<double>(cfg.patch_size));
  v.patch_bias = zeros(d);
  v.patch_ln_gain = ones(d);
  v.patch_ln_bias = zeros(d);
  v.queries = init.normal({cfg.visual_tokens, d}, 1.0);
  v.wq = init.normal({d, d}, s_d);
  v.bq = zeros(d);
  v.wk = init.normal({d, d}, s_d);
  v.bk = zeros(d);
  v.wv = init.normal({d, d}, s_d);
  v.bv = zeros(d);
  v.wo = init.normal({d, d}, s_d);
  v.bo = zeros(d);
  v.out_ln_gain = ones(d);
  v.out_ln_bias = zeros(d);
  v.connector = init.normal({d, d}, s_d);
  v.connector_bias = zeros(d);
  return w;
}

Tensor embed_tokens(std::span<const int> ids, const BackboneWeights& w) {
  return gather_rows(w.token_embedding, ids);
}

VisualTokens encode_image(const Image& img, const BackboneWeights& w) {
  const auto& cfg = w.config;
  if (img.height == 0 || img.width == 0) throw InputError("encode_image: zero-area image");
  if (img.pixels.size() != img.height * img.width) throw InputError("encode_image: pixel count mismatch");
  const std::size_t p = cfg.patch_size;
  const Image sq = pad_to_square(img, p);
  const std::size_t grid = sq.height / p;
  std::vector<double> patches(grid * grid * p * p);
  for (std::size_t gr = 0; gr < grid; ++gr)
    for (std::size_t gc = 0; gc < grid; ++gc)
      for (std::size_t r = 0; r < p; ++r)
        for (std::size_t c = 0; c < p; ++c)
          patches[((gr * grid + gc) * p + r) * p + c] = sq.at(gr * p + r, gc * p + c);
  const auto& v = w.vision;
  Tensor emb = add(linear(Tensor({grid * grid, p * p}, std::move(patches)), v.patch_proj, v.patch_bias),
                   patch_positions(grid, grid, cfg.d_model));
  Tensor kv = layer_norm(emb, v.patch_ln_gain, v.patch_ln_bias);
  Tensor attn = attend(linear(v.queries, v.wq, v.bq), linear(kv, v.wk, v.bk), linear(kv, v.wv, v.bv),
                       cfg.n_heads, false, nullptr, false);
  Tensor pooled = layer_norm(add(v.queries, linear(attn, v.wo, v.bo)), v.out_ln_gain, v.out_ln_bias);
  return VisualTokens{linear(pooled, v.connector, v.connector_bias).detached(), image_digest(sq)};
}

Tensor forward_layers(const Tensor& seq, std::size_t from_layer, std::size_t to_layer, const BackboneWeights& w,
                      ForwardTrace* trace, bool causal) {
  const auto& cfg = w.config;
  if (from_layer >= to_layer || to_layer > cfg.n_layers) {
    throw UsageError("forward_layers: invalid layer range [" + std::to_string(from_layer) + ", " +
                     std::to_string(to_layer) + ") for " + std::to_string(cfg.n_layers) + " layers");
  }
  if (seq.rank() != 2 || seq.cols() != cfg.d_model) throw DimensionError("forward_layers: expected [t x d_model]");
  const std::size_t t = seq.rows();
  if (t > cfg.max_seq) {
    throw CapacityError("sequence of " + std::to_string(t) + " tokens exceeds max_seq " +
                        std::to_string(cfg.max_seq));
  }
  if (trace != nullptr) ++trace->forward_calls;
  Tensor x = from_layer == 0 ? add(seq, slice_rows(w.position_embedding, 0, t)) : seq;
  for (std::size_t l = from_layer; l < to_layer; ++l) {
    const bool capture = trace != nullptr && trace->capture_layer == l;
    x = decoder_layer(x, w.layers[l], cfg.n_heads, causal, trace, capture);
  }
  return x;
}

Tensor lm_logits(const Tensor& hidden, const BackboneWeights& w) {
  return linear(layer_norm(hidden, w.final_ln_gain, w.final_ln_bias), w.head, w.head_bias);
}

Tensor DecodeSession::prefill(const Tensor& prompt_embeddings) {
  keys_.assign(w_->config.n_layers, Tensor());
  values_.assign(w_->config.n_layers, Tensor());
  length_ = 0;
  const std::size_t t = prompt_embeddings.rows();
  if (t > w_->config.max_seq) {
    throw CapacityError("prompt of " + std::to_string(t) + " tokens exceeds max_seq " +
                        std::to_string(w_->config.max_seq));
  }
  return run(add(prompt_embeddings.detached(), slice_rows(w_->position_embedding, 0, t)));
}

Tensor DecodeSession::step(int token_id) {
  if (keys_.empty()) throw UsageError("DecodeSession::step before prefill");
  if (length_ + 1 > w_->config.max_seq) throw CapacityError("decode step exceeds max_seq");
  const int ids[] = {token_id};
  return run(add(embed_tokens(ids, *w_), slice_rows(w_->position_embedding, length_, 1)));
}

Tensor DecodeSession::run(const Tensor& x_in) {
  const auto& cfg = w_->config;
  Tensor x = x_in;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = w_->layers[l];
    Tensor h = layer_norm(x, lw.ln1_gain, lw.ln1_bias);
    Tensor k = linear(h, lw.wk, lw.bk);
    Tensor v = linear(h, lw.wv, lw.bv);
    if (!keys_[l].empty()) {
      const Tensor kp[] = {keys_[l], k};
      const Tensor vp[] = {values_[l], v};
      k = concat_rows(kp);
      v = concat_rows(vp);
    }
    keys_[l] = k;
    values_[l] = v;
    Tensor a = attend(linear(h, lw.wq, lw.bq), k, v, cfg.n_heads, true, nullptr, false);
    Tensor x1 = add(x, linear(a, lw.wo, lw.bo));
    x = add(x1, mlp(layer_norm(x1, lw.ln2_gain, lw.ln2_bias), lw));
  }
  length_ += x_in.rows();
  return lm_logits(slice_rows(x, x.rows() - 1, 1), *w_);
}

}  // namespace ficl

namespace ficl {

namespace {

void write_config(BinaryWriter& out, const ModelConfig& c) {
  for (std::size_t v : {c.d_model, c.n_layers, c.n_heads, c.vocab_size, c.visual_tokens, c.patch_size, c.max_seq})
    out.u32(static_cast<std::uint32_t>(v));
  out.u64(c.seed);
}

ModelConfig read_config(BinaryReader& in) {
  ModelConfig c;
  c.d_model = in.u32();
  c.n_layers = in.u32();
  c.n_heads = in.u32();
  c.vocab_size = in.u32();
  c.visual_tokens = in.u32();
  c.patch_size = in.u32();
  c.max_seq = in.u32();
  c.seed = in.u64();
  return c;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const BackboneWeights& w) {
  BinaryWriter out(path);
  out.bytes("FICL", 4);
  out.u32(kWeightsFormatVersion);
  write_config(out, w.config);
  const auto groups = w.groups();
  out.u32(static_cast<std::uint32_t>(groups.size()));
  for (const auto& g : groups) {
    out.str(g.name);
    out.u32(static_cast<std::uint32_t>(g.params.size()));
    out.digest(w.group_digest(g));
  }
  for (const auto& g : groups)
    for (const auto& p : g.params) out.doubles(p.tensor->data());
  out.close();
}

BackboneWeights load_weights(const std::filesystem::path& path) {
  BinaryReader in(path);
  in.expect_magic("FICL");
  const std::uint32_t version = in.u32();
  if (version != kWeightsFormatVersion) {
    throw CorruptionError(path.string() + ": unsupported weights format version " + std::to_string(version));
  }
  const ModelConfig cfg = read_config(in);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CorruptionError(path.string() + ": stored " + e.what());
  }
  // Skeleton with the right shapes; values are overwritten below.
  BackboneWeights w = init_backbone(cfg);
  const auto shape_groups = w.groups();
  const std::uint32_t n_groups = in.u32();
  if (n_groups != shape_groups.size()) throw CorruptionError(path.string() + ": group count mismatch");
  std::vector<Digest> stored;
  for (const auto& g : shape_groups) {
    if (in.str() != g.name || in.u32() != g.params.size()) {
      throw CorruptionError(path.string() + ": unexpected group layout at " + g.name);
    }
    stored.push_back(in.digest());
  }
  visit_groups(w, [&](const std::string&, const auto& params) {
    for (const auto& [pname, t] : params) *t = Tensor(t->shape(), in.doubles(t->size()));
  });
  if (!in.at_end()) throw CorruptionError(path.string() + ": trailing bytes after weights");
  const auto groups = w.groups();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (w.group_digest(groups[i]) != stored[i]) {
      throw CorruptionError(path.string() + ": digest mismatch in group " + groups[i].name);
    }
  }
  return w;
}

BackboneWeights load_weights(const std::filesystem::path& path, const ModelConfig& expected) {
  BackboneWeights w = load_weights(path);
  if (!(w.config == expected)) {
    throw ConfigError(path.string() + ": stored model config (d_model " + std::to_string(w.config.d_model) +
                      ", layers " + std::to_string(w.config.n_layers) + ") differs from the requested config");
  }
  return w;
}

}  // namespace ficl
