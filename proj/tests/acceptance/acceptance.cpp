// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ficl/bank.hpp"
#include "ficl/bench.hpp"
#include "ficl/corpus.hpp"
#include "ficl/cost.hpp"
#include "ficl/engine.hpp"
#include "ficl/error.hpp"
#include "ficl/tokenizer.hpp"
#include "ficl/trainer.hpp"
#include "oracle.hpp"
#include "testutil.hpp"

using namespace ficl;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void fail(const std::string& why) {
    if (ok) detail = why;
    ok = false;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

BackboneWeights rig_head(BackboneWeights w, int id, double margin) {
  w.head = Tensor::zeros(w.head.shape());
  std::vector<double> b(w.config.vocab_size, 0.0);
  if (id >= 0) b[static_cast<std::size_t>(id)] = margin;
  w.head_bias = Tensor({w.config.vocab_size}, b);
  return w;
}

Digest tensor_digest(const Tensor& t) {
  Hasher h;
  h.update(t.data());
  return h.finish();
}

std::vector<Demonstration> demos_of(std::vector<EvalItem> items) {
  std::vector<Demonstration> out;
  for (auto& it : items) out.push_back(std::move(it.demo));
  return out;
}

double norm_rel_error(std::span<const double> got, std::span<const double> ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num += (got[i] - ref[i]) * (got[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

// ---------------------------------------------------------------------------

Outcome remaining_ratio_table() {
  Outcome o;
  auto run = [&](std::int64_t visual, std::vector<const char*> lengths, std::int64_t expect) {
    std::vector<Ratio> t;
    for (const char* s : lengths) t.push_back(Ratio::from_decimal(s));
    const Ratio r = average_remaining_ratio(Ratio::of(visual), t);
    const auto pct = round_percent(r);
    if (pct != expect) o.fail(fmt("|V|=%lld rounds to %lld%%, expected %lld%%", (long long)visual, (long long)pct,
                                  (long long)expect));
    return fmt("|V|=%lld: %lld/%lld -> %lld%%", (long long)visual, (long long)r.num, (long long)r.den, (long long)pct);
  };
  const auto a = run(256, {"30.1", "16.0", "15.7", "29.3"}, 8);
  const auto b = run(576, {"34.4", "18.3", "17.9", "33.6"}, 4);
  if (o.ok) o.detail = a + "; " + b;
  return o;
}

Outcome length_law() {
  Outcome o;
  const auto w = init_backbone(ModelConfig{});
  const auto proj = ProjectionLayer::near_identity(w.config.d_model, 1);
  const AggregationContext ctx(w, proj, {});
  std::size_t total = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto demo = testutil::random_demo(10'000 + s, 40);
    const auto f = aggregate(demo, ctx);
    const auto expect = tokenize(demo.text()).size();
    if (f.tokens.rows() != expect || f.text_len != expect) o.fail(fmt("demo %llu: %zu rows for %zu text tokens",
                                                                     (unsigned long long)s, f.tokens.rows(), expect));
    total += f.tokens.rows();
  }
  if (o.ok) o.detail = fmt("1000 demos, %zu fused rows, all equal to their text lengths", total);
  return o;
}

Outcome independence_law() {
  Outcome o;
  const auto w = init_backbone(ModelConfig{});
  const auto proj = ProjectionLayer::near_identity(w.config.d_model, 2);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> size(2, 8);
  std::size_t items = 0;
  for (int b = 0; b < 100; ++b) {
    std::vector<Demonstration> batch;
    const std::size_t n = size(rng);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(testutil::random_demo(rng() % 5000, 24));
    const auto fused = aggregate_batch(batch, {}, w, proj);
    for (std::size_t i = 0; i < n; ++i) {
      if (!bitwise_equal(fused[i].tokens, aggregate(batch[i], {}, w, proj).tokens))
        o.fail(fmt("batch %d item %zu differs from its solo aggregation", b, i));
    }
    items += n;
  }
  if (o.ok) o.detail = fmt("100 batches, %zu items bitwise equal to solo runs", items);
  return o;
}

Outcome memory_law() {
  Outcome o;
  const ModelConfig cfg;
  const auto w = init_backbone(cfg);
  std::string detail;
  for (std::size_t k : {1, 2, 4, 8}) {
    for (std::size_t l : {8, 16, 32}) {
      std::vector<Tensor> segs;
      for (std::size_t i = 0; i < k; ++i) segs.push_back(testutil::random_tensor({l, cfg.d_model}, 100 * k + 10 * l + i));
      ForwardTrace indep, joint;
      for (const auto& s : segs) forward_layers(s, 0, cfg.n_layers, w, &indep);
      forward_layers(concat_rows(segs), 0, cfg.n_layers, w, &joint);
      const auto ci = attention_cost(k, l, cfg.n_heads, cfg.n_layers, AttentionMode::kIndependent);
      const auto cj = attention_cost(k, l, cfg.n_heads, cfg.n_layers, AttentionMode::kJoint);
      if (indep.attention_scores != ci) o.fail(fmt("k=%zu l=%zu independent %llu != %llu", k, l,
                                                   (unsigned long long)indep.attention_scores, (unsigned long long)ci));
      if (joint.attention_scores != cj) o.fail(fmt("k=%zu l=%zu joint %llu != %llu", k, l,
                                                   (unsigned long long)joint.attention_scores, (unsigned long long)cj));
      if (joint.attention_scores != k * indep.attention_scores) o.fail(fmt("k=%zu l=%zu ratio is not k", k, l));
    }
    detail += fmt("%sk=%zu x%zu", detail.empty() ? "" : ", ", k, k);
  }
  if (o.ok) o.detail = "counters match the closed form on 12 (k,l) cells; joint/independent: " + detail;
  return o;
}

Outcome gradient_check() {
  Outcome o;
  const auto cfg = testutil::small_config(11);
  const auto w = init_backbone(cfg);
  const auto proj = ProjectionLayer::near_identity(cfg.d_model, 12);
  const auto corpus = synth_corpus(40, 13, cfg);
  const std::size_t d = cfg.d_model;
  std::size_t checked = 0;
  double worst = 0.0;
  for (const auto& inst : corpus) {
    if (checked == 20) break;
    Tape tape;
    const auto p = proj.track(tape);
    const auto r = lm_loss(inst, w, p, {});
    if (!r.loss) continue;
    const auto grads = tape.backward(*r.loss);
    const auto loss_at = [&](const Tensor& wt, const Tensor& bs) { return lm_loss(inst, w, {wt, bs}, {}).loss->item(); };
    const auto fd_w = oracle::finite_difference(
        [&](const std::vector<double>& v) { return loss_at(Tensor({d, d}, v), proj.bias()); },
        {proj.weight().data().begin(), proj.weight().data().end()}, 1e-5);
    const auto fd_b = oracle::finite_difference(
        [&](const std::vector<double>& v) { return loss_at(proj.weight(), Tensor({d}, v)); },
        {proj.bias().data().begin(), proj.bias().data().end()}, 1e-5);
    const double ew = norm_rel_error(grads.find(p.weight)->data(), fd_w);
    const double eb = norm_rel_error(grads.find(p.bias)->data(), fd_b);
    worst = std::max({worst, ew, eb});
    if (ew >= 1e-4 || eb >= 1e-4) o.fail(fmt("instance %llu: relative error %.3g (W) %.3g (b)",
                                             (unsigned long long)inst.id, ew, eb));
    ++checked;
  }
  if (checked < 20) o.fail(fmt("only %zu usable instances", checked));
  if (o.ok) o.detail = fmt("%zu instances, worst relative error %.3g (h=1e-5)", checked, worst);
  return o;
}

Outcome freeze_contract() {
  Outcome o;
  const ModelConfig cfg;
  const auto w = init_backbone(cfg);
  std::vector<Digest> before;
  for (const auto& g : w.groups()) before.push_back(w.group_digest(g));
  TrainConfig tc;
  tc.seed = 6;
  auto state = init_trainer(cfg, tc);
  const auto w0 = tensor_digest(state.projection.weight());
  const auto b0 = tensor_digest(state.projection.bias());
  train(state, synth_corpus(50 * tc.effective_batch, 6, cfg), w, tc, 50);
  const auto groups = w.groups();
  for (std::size_t i = 0; i < groups.size(); ++i)
    if (w.group_digest(groups[i]) != before[i]) o.fail("backbone group " + groups[i].name + " changed");
  if (tensor_digest(state.projection.weight()) == w0) o.fail("projection weight did not change");
  if (tensor_digest(state.projection.bias()) == b0) o.fail("projection bias did not change");
  if (o.ok) o.detail = fmt("50 steps: %zu backbone groups unchanged, W_p and bias changed", groups.size());
  return o;
}

Outcome training_sanity() {
  Outcome o;
  const ModelConfig cfg;
  const auto w = init_backbone(cfg);
  TrainConfig tc;
  tc.seed = 7;
  const std::uint64_t steps = 200;
  const auto corpus = synth_corpus(steps * tc.effective_batch, 7, cfg);
  auto state = init_trainer(cfg, tc);
  const ProjectionLayer initial = state.projection;
  train(state, corpus, w, tc, steps);
  const double first = smoothed_first(state.loss_history, 20);
  const double last = smoothed_last(state.loss_history, 20);
  if (!(last < first)) o.fail(fmt("smoothed loss %.5f -> %.5f did not fall", first, last));

  const auto pool = demos_of(synth_eval_items(64, 1007, cfg));
  const auto queries = demos_of(synth_eval_items(50, 2007, cfg));
  const AggregationContext trained(w, state.projection, {}), noisy(w, initial, {});
  DemonstrationBank bank_t, bank_n;
  std::size_t wins = 0;
  double sum_t = 0.0, sum_n = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<Demonstration> demos;
    for (auto i : random_demo_indices(pool.size(), 4, 7, q)) demos.push_back(pool[i]);
    const Query query = as_query(queries[q]);
    const auto pt = perplexity(build_prompt(PromptMode::kFused, demos, query, trained, bank_t), queries[q].label, w);
    const auto pn = perplexity(build_prompt(PromptMode::kFused, demos, query, noisy, bank_n), queries[q].label, w);
    if (pt.value < pn.value) ++wins;
    sum_t += pt.value;
    sum_n += pn.value;
  }
  const double share = static_cast<double>(wins) / static_cast<double>(queries.size());
  if (share < 0.6) o.fail(fmt("trained projection wins on %zu/50 queries", wins));
  const std::string data = fmt("smoothed loss %.5f -> %.5f; trained PPL lower on %zu/50 (mean %.3f vs %.3f)", first,
                               last, wins, sum_t / 50.0, sum_n / 50.0);
  o.detail = o.ok ? data : o.detail + "; " + data;
  return o;
}

Outcome zero_shot_equivalence() {
  Outcome o;
  const auto w = init_backbone(ModelConfig{});
  const auto proj = ProjectionLayer::near_identity(w.config.d_model, 8);
  const AggregationContext ctx(w, proj, {});
  DemonstrationBank bank;
  const auto queries = demos_of(synth_eval_items(50, 88, w.config));
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const Query query = as_query(queries[q]);
    const auto a = build_prompt(PromptMode::kFused, {}, query, ctx, bank);
    const auto b = build_prompt(PromptMode::kBaseline, {}, query, ctx, bank);
    if (generate(a, 8, w).ids != generate(b, 8, w).ids) o.fail(fmt("query %zu: generations differ", q));
    if (perplexity(a, queries[q].label, w).value != perplexity(b, queries[q].label, w).value)
      o.fail(fmt("query %zu: perplexities differ", q));
  }
  if (o.ok) o.detail = "50 queries: identical generations and PPL at n=0";
  return o;
}

Outcome ppl_machinery() {
  Outcome o;
  const auto w = init_backbone(ModelConfig{});
  const Query q{testutil::random_image(16, 16, 1), "photo of"};
  const auto certain = rig_head(w, tokenize("a")[0], 200.0);
  const double c = perplexity(build_prompt_fused({}, q, certain), "aaaaaa", certain).value;
  if (std::abs(c - 1.0) > 1e-9) o.fail(fmt("rigged-certain PPL %.17g", c));
  const auto uniform = rig_head(w, -1, 0.0);
  const double u = perplexity(build_prompt_fused({}, q, uniform), " ox cat owl.", uniform).value;
  if (std::abs(u - static_cast<double>(w.config.vocab_size)) > 1e-6) o.fail(fmt("uniform PPL %.17g", u));
  auto blown = w;
  blown.head = Tensor::full(blown.head.shape(), 1e308);
  const auto ov = perplexity(build_prompt_fused({}, q, w), "xyz", blown);
  if (!ov.overflow || !std::isinf(ov.value) || std::isnan(ov.value)) o.fail("overflow did not surface as +inf");
  if (o.ok) o.detail = fmt("certain %.12f, uniform %.9f, overflow -> +inf sentinel", c, u);
  return o;
}

Outcome cache_contract() {
  Outcome o;
  const auto w = init_backbone(ModelConfig{});
  const auto proj = ProjectionLayer::near_identity(w.config.d_model, 10);
  const AggregationContext ctx(w, proj, {});
  std::vector<Demonstration> uniq;
  for (std::uint64_t s = 0; s < 50; ++s) uniq.push_back(testutil::random_demo(500 + s, 24));
  std::vector<Demonstration> pool = uniq;
  std::mt19937_64 rng(10);
  for (int i = 0; i < 50; ++i) pool.push_back(uniq[rng() % uniq.size()]);
  std::shuffle(pool.begin(), pool.end(), rng);
  DemonstrationBank bank;
  ForwardTrace trace;
  std::vector<FusedTokens> got;
  for (const auto& d : pool) got.push_back(bank.get_or_aggregate(d, ctx, &trace));
  if (trace.forward_calls != uniq.size()) o.fail(fmt("%llu forwards for %zu unique demos",
                                                     (unsigned long long)trace.forward_calls, uniq.size()));
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!bitwise_equal(got[i].tokens, aggregate(pool[i], ctx).tokens)) o.fail(fmt("item %zu differs from recompute", i));
  if (o.ok) o.detail = fmt("100 lookups: %llu forwards, %llu hits, all bitwise equal to recompute",
                           (unsigned long long)trace.forward_calls, (unsigned long long)bank.hits());
  return o;
}

Outcome decoding_equivalence() {
  Outcome o;
  const auto w = init_backbone(ModelConfig{});
  const auto proj = ProjectionLayer::near_identity(w.config.d_model, 11);
  const AggregationContext ctx(w, proj, {});
  DemonstrationBank bank;
  const auto pool = demos_of(synth_eval_items(32, 111, w.config));
  const auto queries = demos_of(synth_eval_items(20, 112, w.config));
  std::size_t tokens = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<Demonstration> demos;
    for (auto i : random_demo_indices(pool.size(), q % 5, 11, q)) demos.push_back(pool[i]);
    const auto mode = q % 2 ? PromptMode::kBaseline : PromptMode::kFused;
    const auto prompt = build_prompt(mode, demos, as_query(queries[q]), ctx, bank);
    const auto fast = generate(prompt, 16, w).ids;
    const auto slow = generate(prompt, 16, w, DecodeMode::kRecompute).ids;
    const auto naive = oracle::greedy_decode(oracle::from(prompt.embeddings()), 16, w);
    if (fast != slow || fast != naive) o.fail(fmt("prompt %zu: decoders disagree", q));
    tokens += fast.size();
  }
  if (o.ok) o.detail = fmt("20 prompts, %zu tokens identical across incremental, recompute and naive", tokens);
  return o;
}

Outcome rices_oracle() {
  Outcome o;
  const auto w = init_backbone(ModelConfig{});
  std::vector<Demonstration> pool;
  for (std::uint64_t s = 0; s < 200; ++s) pool.push_back(testutil::random_demo(3000 + s));
  const RicesIndex index(pool, w);
  std::vector<std::vector<double>> emb;
  for (const auto& d : pool) emb.push_back(image_embedding(d.image, w));
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Image q = testutil::random_image(8 + s % 9, 8 + s % 5, 9000 + s);
    const auto qe = image_embedding(q, w);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> sim(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) sim[i] = oracle::cosine(qe, emb[i]);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sim[a] > sim[b]; });
    const auto all = index.select(q, pool.size()).hits;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (all[i].index != order[i]) {
        o.fail(fmt("query %llu: rank %zu is %zu, exhaustive sort gives %zu", (unsigned long long)s, i, all[i].index,
                   order[i]));
        break;
      }
    for (std::size_t k = 1; k < 16; ++k) {
      const auto a = index.select(q, k).hits;
      const auto b = index.select(q, k + 1).hits;
      for (std::size_t i = 0; i < k; ++i)
        if (a[i].index != b[i].index) o.fail(fmt("query %llu: top-%zu is not a prefix of top-%zu",
                                                 (unsigned long long)s, k, k + 1));
    }
  }
  if (o.ok) o.detail = "50 queries over 200 items match exhaustive cosine sort; prefixes hold for k=1..15";
  return o;
}

Outcome throughput_direction() {
  Outcome o;
  ModelConfig cfg;
  cfg.max_seq = 1024;  // 16 baseline shots need ~620 rows
  const auto w = init_backbone(cfg);
  const auto proj = ProjectionLayer::near_identity(cfg.d_model, 13);
  EvalSetup setup;
  setup.weights = &w;
  setup.projection = &proj;
  setup.pool = demos_of(synth_eval_items(64, 131, cfg));
  setup.queries = demos_of(synth_eval_items(10, 132, cfg));
  RunSpec spec;
  spec.shots = {1, 2, 4, 8, 16};
  spec.modes = {PromptMode::kFused, PromptMode::kBaseline};
  spec.n_queries = 10;
  spec.max_new_tokens = 8;
  spec.repetitions = 5;
  spec.warmup = 2;

  const AggregationContext ctx(w, proj, {});
  DemonstrationBank bank;
  for (auto n : spec.shots)
    for (std::size_t q = 0; q < spec.n_queries; ++q) {
      std::vector<Demonstration> demos;
      for (auto i : random_demo_indices(setup.pool.size(), n, spec.seed, q)) demos.push_back(setup.pool[i]);
      const Query query = as_query(setup.queries[q]);
      const auto lf = build_prompt(PromptMode::kFused, demos, query, ctx, bank).length();
      const auto lb = build_prompt(PromptMode::kBaseline, demos, query, ctx, bank).length();
      if (lf >= lb) o.fail(fmt("n=%zu query %zu: fused length %zu >= baseline %zu", n, q, lf, lb));
    }

  const auto reports = bench_throughput(setup, spec, bank);
  auto slope = [&](PromptMode m) {
    std::vector<double> x, y;
    for (const auto& r : reports)
      if (r.mode == m) {
        if (!r.error.empty()) o.fail(std::string(to_string(m)) + ": " + r.error);
        x.push_back(static_cast<double>(r.n_shots));
        y.push_back(static_cast<double>(r.median_wall_ns) * 1e-6);
      }
    return fit_slope(x, y);
  };
  const double sf = slope(PromptMode::kFused), sb = slope(PromptMode::kBaseline);
  if (!(sf < sb)) o.fail(fmt("fused slope %.4f ms/shot is not below baseline %.4f ms/shot", sf, sb));
  const auto cross = crossover_shots(reports);
  std::string lens;
  for (const auto& r : reports)
    lens += fmt(" %s@%zu=%.0f", r.mode == PromptMode::kFused ? "F" : "B", r.n_shots, r.mean_prompt_len);
  const std::string data = fmt("slopes fused %.4f vs baseline %.4f ms/shot; crossover at n=%zu%s; mean lengths", sf, sb,
                               cross, cross ? "" : " (none)") + lens;
  o.detail = o.ok ? data : o.detail + "; " + data;
  return o;
}

Outcome attention_validity() {
  Outcome o;
  const auto w = init_backbone(ModelConfig{});
  const auto proj = ProjectionLayer::near_identity(w.config.d_model, 14);
  const AggregationContext ctx(w, proj, {});
  DemonstrationBank bank;
  EvalSetup setup;
  setup.weights = &w;
  setup.projection = &proj;
  setup.pool = demos_of(synth_eval_items(32, 141, w.config));
  setup.queries = demos_of(synth_eval_items(10, 142, w.config));
  const std::size_t layer = w.config.n_layers - 1;
  double worst = 0.0;
  for (std::size_t q = 0; q < 10; ++q) {
    std::vector<Demonstration> demos;
    for (auto i : random_demo_indices(setup.pool.size(), 1 + q % 4, 14, q)) demos.push_back(setup.pool[i]);
    const auto prompt = build_prompt(PromptMode::kBaseline, demos, as_query(setup.queries[q]), ctx, bank);
    const auto mass = attention_mass(prompt, w, layer);
    const double total = std::accumulate(mass.fractions.begin(), mass.fractions.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) o.fail(fmt("prompt %zu: fractions sum to %.17g", q, total));

    ForwardTrace saved;
    saved.capture_layer = layer;
    forward_layers(prompt.embeddings(), 0, layer + 1, w, &saved);
    oracle::LayerCapture ref;
    oracle::forward_layers(oracle::from(prompt.embeddings()), 0, layer + 1, w, &ref, layer);
    const std::size_t heads = saved.captured_queries.size();
    std::vector<double> from_saved(prompt.segments().size(), 0.0), from_ref(prompt.segments().size(), 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto a = oracle::attention_row(oracle::from(saved.captured_queries[h]), oracle::from(saved.captured_keys[h]),
                                           prompt.length() - 1);
      const auto b = oracle::attention_row(ref.queries[h], ref.keys[h], prompt.length() - 1);
      for (std::size_t s = 0; s < from_saved.size(); ++s) {
        const auto& seg = prompt.segments()[s];
        for (std::size_t j = seg.start; j < seg.start + seg.length; ++j) {
          from_saved[s] += a[j] / static_cast<double>(heads);
          from_ref[s] += b[j] / static_cast<double>(heads);
        }
      }
    }
    for (std::size_t s = 0; s < from_saved.size(); ++s)
      worst = std::max({worst, std::abs(mass.fractions[s] - from_saved[s]), std::abs(mass.fractions[s] - from_ref[s])});
  }
  if (worst > 1e-10) o.fail(fmt("largest deviation from the saved Q/K recompute %.3g", worst));

  RunSpec spec;
  spec.shots = {1, 2, 4};
  spec.attention_queries = 10;
  const auto rows = attention_summaries(setup, spec);
  double vis = 0.0, txt = 0.0;
  for (const auto& r : rows) {
    vis += r.mass.demo_visual;
    txt += r.mass.demo_text;
  }
  const auto n = static_cast<double>(rows.size());
  const std::string data = fmt("10 prompts, deviation %.2g; mean demo-text mass %.4f vs demo-visual %.4f over %zu prompts",
                               worst, txt / n, vis / n, rows.size());
  o.detail = o.ok ? data : o.detail + "; " + data;
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "remaining ratio", remaining_ratio_table},
      {2, "length law", length_law},
      {3, "independence law", independence_law},
      {4, "memory law", memory_law},
      {5, "projection gradient", gradient_check},
      {6, "freeze contract", freeze_contract},
      {7, "training sanity", training_sanity},
      {8, "0-shot equivalence", zero_shot_equivalence},
      {9, "perplexity machinery", ppl_machinery},
      {10, "bank cache contract", cache_contract},
      {11, "decoding equivalence", decoding_equivalence},
      {12, "rices oracle", rices_oracle},
      {13, "prompt length and throughput", throughput_direction},
      {14, "attention mass", attention_validity},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out.ok = false;
      out.detail = std::string("threw: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %-28s %s [%.1fs]\n", out.ok ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(), secs);
    std::fflush(stdout);
    if (!out.ok) ++failed;
  }
  return failed ? 1 : 0;
}
