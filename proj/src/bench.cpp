#include "ficl/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "ficl/corpus.hpp"
#include "ficl/cost.hpp"
#include "ficl/error.hpp"
#include "ficl/tokenizer.hpp"

namespace ficl {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t elapsed_ns(Clock::time_point since) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - since).count());
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t median(std::vector<std::uint64_t> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

std::vector<Demonstration> gather(const std::vector<Demonstration>& pool, const std::vector<std::size_t>& idx) {
  std::vector<Demonstration> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pool.at(i));
  return out;
}

void check_setup(const EvalSetup& setup, const RunSpec& spec) {
  if (!setup.weights || !setup.projection) throw ConfigError("evaluation needs weights and a projection");
  if (setup.queries.empty()) throw InputError("evaluation needs at least one query");
  spec.validate();
  if (!spec.shots.empty() && spec.shots.back() > setup.pool.size()) {
    throw ConfigError("largest shot count " + std::to_string(spec.shots.back()) + " exceeds pool size " +
                      std::to_string(setup.pool.size()));
  }
}

std::size_t query_count(const EvalSetup& setup, const RunSpec& spec) {
  return std::min(spec.n_queries, setup.queries.size());
}

// Closed-form bookkeeping shared by throughput and grid cells.
void account_demos(CostReport& r, std::span<const Demonstration> demos, const ModelConfig& cfg,
                   std::size_t n_layers, std::size_t& text_tokens, std::size_t& demo_count) {
  for (const auto& d : demos) {
    const std::size_t t = tokenize(d.text()).size();
    text_tokens += t;
    ++demo_count;
    if (r.mode == PromptMode::kFused) {
      r.aggregation_attention +=
          attention_cost(1, cfg.visual_tokens + t, cfg.n_heads, n_layers, AttentionMode::kIndependent);
    }
  }
}

void finish_demo_stats(CostReport& r, std::size_t text_tokens, std::size_t demo_count) {
  if (demo_count == 0) {
    r.mean_text_tokens = 0.0;
    r.remaining_ratio = 1.0;
    return;
  }
  const Ratio mean_t = Ratio::of(static_cast<std::int64_t>(text_tokens), static_cast<std::int64_t>(demo_count));
  r.mean_text_tokens = mean_t.value();
  r.remaining_ratio = remaining_ratio(Ratio::of(static_cast<std::int64_t>(r.visual_tokens)), mean_t).value();
}

}  // namespace

std::vector<std::size_t> random_demo_indices(std::size_t pool_size, std::size_t n, std::uint64_t seed,
                                             std::uint64_t query_id) {
  if (n > pool_size) {
    throw UsageError("cannot pick " + std::to_string(n) + " demonstrations from a pool of " +
                     std::to_string(pool_size));
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(query_id), static_cast<std::uint32_t>(query_id >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> idx(pool_size);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool_size - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  return idx;
}

std::vector<std::size_t> select_demos(const EvalSetup& setup, const RicesIndex* rices, Selection sel,
                                      std::size_t n, std::uint64_t seed, std::size_t query_id) {
  if (n == 0) return {};
  if (sel == Selection::kRandom) return random_demo_indices(setup.pool.size(), n, seed, query_id);
  if (!rices) throw UsageError("RICES selection requested without an index");
  std::vector<std::size_t> out;
  for (const auto& hit : rices->select(setup.queries.at(query_id).image, n).hits) out.push_back(hit.index);
  return out;
}

PromptSequence build_prompt(PromptMode mode, std::span<const Demonstration> demos, const Query& q,
                            const AggregationContext& ctx, DemonstrationBank& bank, ForwardTrace* trace) {
  const BackboneWeights& w = *ctx.weights;
  switch (mode) {
    case PromptMode::kFused: {
      std::vector<FusedTokens> fused;
      fused.reserve(demos.size());
      for (const auto& d : demos) fused.push_back(bank.get_or_aggregate(d, ctx, trace));
      return build_prompt_fused(fused, q, w);
    }
    case PromptMode::kBaseline: return build_prompt_baseline(demos, q, w);
    case PromptMode::kTextOnly: return build_prompt_text_only(demos, q, w);
  }
  throw UsageError("unknown prompt mode");
}

std::vector<CostReport> bench_throughput(const EvalSetup& setup, const RunSpec& spec, DemonstrationBank& bank) {
  check_setup(setup, spec);
  const auto& cfg = setup.weights->config;
  const AggregationContext ctx(*setup.weights, *setup.projection, setup.aggregation);
  const std::size_t nq = query_count(setup, spec);
  const Selection sel = spec.selections.front();
  std::unique_ptr<RicesIndex> rices;
  if (sel == Selection::kRices) rices = std::make_unique<RicesIndex>(setup.pool, *setup.weights);

  std::vector<CostReport> out;
  for (const std::size_t n : spec.shots) {
    std::vector<std::vector<Demonstration>> picks(nq);
    for (std::size_t q = 0; q < nq; ++q) picks[q] = gather(setup.pool, select_demos(setup, rices.get(), sel, n, spec.seed, q));
    for (const PromptMode mode : spec.modes) {
      CostReport r;
      r.mode = mode;
      r.selection = sel;
      r.n_shots = n;
      r.visual_tokens = cfg.visual_tokens;
      try {
        std::size_t text_tokens = 0, demo_count = 0, prompt_total = 0;
        for (std::size_t q = 0; q < nq; ++q) {
          account_demos(r, picks[q], cfg, ctx.config.n_layers, text_tokens, demo_count);
          const auto prompt = build_prompt(mode, picks[q], as_query(setup.queries[q]), ctx, bank);
          prompt_total += prompt.length();
          r.generation_attention += prompt_attention_cost(prompt.length(), cfg);
          r.peak_bytes = std::max(r.peak_bytes, peak_bytes_estimate(prompt.length(), cfg));
        }
        finish_demo_stats(r, text_tokens, demo_count);
        r.mean_prompt_len = static_cast<double>(prompt_total) / static_cast<double>(nq);

        std::vector<std::uint64_t> times;
        std::size_t generated = 0;
        ForwardTrace trace;
        for (std::size_t rep = 0; rep < spec.warmup + spec.repetitions; ++rep) {
          const bool timed = rep >= spec.warmup;
          std::size_t gen_this_rep = 0;
          const auto start = Clock::now();
          for (std::size_t q = 0; q < nq; ++q) {
            const auto prompt =
                build_prompt(mode, picks[q], as_query(setup.queries[q]), ctx, bank, timed ? &trace : nullptr);
            gen_this_rep += generate(prompt, spec.max_new_tokens, *setup.weights).ids.size();
          }
          if (timed) {
            times.push_back(elapsed_ns(start));
            generated = gen_this_rep;
          }
        }
        r.aggregation_forwards = trace.forward_calls;
        r.median_wall_ns = median(times);
        const double secs = std::max(1e-12, static_cast<double>(r.median_wall_ns) * 1e-9);
        r.tokens_per_second = static_cast<double>(generated) / secs;
        r.queries_per_second = static_cast<double>(nq) / secs;
      } catch (const Error& e) {
        r.error = std::string(to_string(e.kind())) + ": " + e.what();
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

GridResult run_grid(const EvalSetup& setup, const RunSpec& spec, DemonstrationBank& bank) {
  check_setup(setup, spec);
  const auto& cfg = setup.weights->config;
  const AggregationContext ctx(*setup.weights, *setup.projection, setup.aggregation);
  const std::size_t nq = query_count(setup, spec);
  std::unique_ptr<RicesIndex> rices;
  if (std::find(spec.selections.begin(), spec.selections.end(), Selection::kRices) != spec.selections.end()) {
    rices = std::make_unique<RicesIndex>(setup.pool, *setup.weights);
  }

  GridResult result;
  for (const Selection sel : spec.selections) {
    for (const std::size_t n : spec.shots) {
      for (const PromptMode mode : spec.modes) {
        CostReport r;
        r.mode = mode;
        r.selection = sel;
        r.n_shots = n;
        r.visual_tokens = cfg.visual_tokens;
        std::vector<QueryRecord> records;
        try {
          std::size_t text_tokens = 0, demo_count = 0, prompt_total = 0;
          std::uint64_t wall_total = 0;
          double ppl_sum = 0.0;
          std::size_t ppl_finite = 0;
          for (std::size_t q = 0; q < nq; ++q) {
            const auto demos = gather(setup.pool, select_demos(setup, rices.get(), sel, n, spec.seed, q));
            account_demos(r, demos, cfg, ctx.config.n_layers, text_tokens, demo_count);
            const Query query = as_query(setup.queries[q]);
            const auto start = Clock::now();
            const auto prompt = build_prompt(mode, demos, query, ctx, bank);
            const auto gen = generate(prompt, spec.max_new_tokens, *setup.weights);
            const std::uint64_t wall = elapsed_ns(start);
            const auto ppl = perplexity(prompt, setup.queries[q].label, *setup.weights);

            QueryRecord rec;
            rec.query_id = q;
            rec.n_shots = n;
            rec.mode = mode;
            rec.selection = sel;
            rec.output = gen.text;
            rec.ppl = ppl.value;
            rec.ppl_overflow = ppl.overflow;
            rec.prompt_len = prompt.length();
            rec.wall_time_ns = wall;
            records.push_back(rec);

            prompt_total += prompt.length();
            wall_total += wall;
            r.generation_attention += prompt_attention_cost(prompt.length(), cfg);
            r.peak_bytes = std::max(r.peak_bytes, peak_bytes_estimate(prompt.length(), cfg));
            if (ppl.overflow) {
              ++r.ppl_overflow;
            } else {
              ppl_sum += ppl.value;
              ++ppl_finite;
            }
          }
          finish_demo_stats(r, text_tokens, demo_count);
          r.mean_prompt_len = static_cast<double>(prompt_total) / static_cast<double>(nq);
          r.median_wall_ns = wall_total;
          const double secs = std::max(1e-12, static_cast<double>(wall_total) * 1e-9);
          r.queries_per_second = static_cast<double>(nq) / secs;
          r.ppl_mean = ppl_finite ? ppl_sum / static_cast<double>(ppl_finite) : 0.0;
          result.queries.insert(result.queries.end(), records.begin(), records.end());
        } catch (const Error& e) {
          r.error = std::string(to_string(e.kind())) + ": " + e.what();
        }
        result.cells.push_back(std::move(r));
      }
    }
  }
  result.attention = attention_summaries(setup, spec);
  return result;
}

std::vector<AttentionSummary> attention_summaries(const EvalSetup& setup, const RunSpec& spec) {
  check_setup(setup, spec);
  const auto& w = *setup.weights;
  const std::size_t layer = spec.attention_layer.value_or(w.config.n_layers - 1);
  if (layer >= w.config.n_layers) throw ConfigError("attention layer out of range");
  const std::size_t nq = std::min(spec.attention_queries, setup.queries.size());
  std::vector<AttentionSummary> out;
  for (const std::size_t n : spec.shots) {
    if (n == 0) continue;
    for (std::size_t q = 0; q < nq; ++q) {
      const auto demos = gather(setup.pool, random_demo_indices(setup.pool.size(), n, spec.seed, q));
      try {
        const auto prompt = build_prompt_baseline(demos, as_query(setup.queries[q]), w);
        const auto mass = attention_mass(prompt, w, layer);
        AttentionSummary s;
        s.query_id = q;
        s.n_shots = n;
        s.layer = layer;
        s.mass = summarize_mass(prompt, mass);
        s.total = std::accumulate(mass.fractions.begin(), mass.fractions.end(), 0.0);
        out.push_back(s);
      } catch (const CapacityError&) {
        // larger shot counts simply do not fit this backbone
      }
    }
  }
  return out;
}

double fit_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("fit_slope needs at least two paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw UsageError("fit_slope: x values are all equal");
  return sxy / sxx;
}

std::size_t crossover_shots(const std::vector<CostReport>& reports) {
  for (const auto& f : reports) {
    if (f.mode != PromptMode::kFused || f.n_shots == 0 || !f.error.empty()) continue;
    for (const auto& b : reports) {
      if (b.mode == PromptMode::kBaseline && b.n_shots == f.n_shots && b.error.empty() &&
          f.median_wall_ns <= b.median_wall_ns) {
        return f.n_shots;
      }
    }
  }
  return 0;
}

void write_cells_csv(const std::filesystem::path& path, const std::vector<CostReport>& cells) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# " << kReportSchema << " cells\n";
  out << "mode,selection,n_shots,visual_tokens,mean_text_tokens,remaining_ratio,aggregation_attention,"
         "generation_attention,peak_bytes,mean_prompt_len,tokens_per_second,queries_per_second,median_wall_ns,"
         "aggregation_forwards,ppl_mean,ppl_overflow,error\n";
  for (const auto& c : cells) {
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << to_string(c.mode) << ',' << to_string(c.selection) << ',' << c.n_shots << ',' << c.visual_tokens << ','
        << fmt(c.mean_text_tokens) << ',' << fmt(c.remaining_ratio) << ',' << c.aggregation_attention << ','
        << c.generation_attention << ',' << c.peak_bytes << ',' << fmt(c.mean_prompt_len) << ','
        << fmt(c.tokens_per_second) << ',' << fmt(c.queries_per_second) << ',' << c.median_wall_ns << ','
        << c.aggregation_forwards << ',' << fmt(c.ppl_mean) << ',' << c.ppl_overflow << ',' << err << '\n';
  }
}

void write_queries_jsonl(const std::filesystem::path& path, const std::vector<QueryRecord>& records) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["query_id"] = r.query_id;
    j["n_shots"] = r.n_shots;
    j["mode"] = to_string(r.mode);
    j["selection"] = to_string(r.selection);
    j["output"] = r.output;
    // JSON has no infinity; the overflow flag carries the sentinel.
    if (r.ppl_overflow) j["ppl"] = nullptr;
    else j["ppl"] = r.ppl;
    j["ppl_overflow"] = r.ppl_overflow;
    j["prompt_len"] = r.prompt_len;
    j["wall_time_ns"] = r.wall_time_ns;
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
}

void write_attention_csv(const std::filesystem::path& path, const std::vector<AttentionSummary>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# " << kReportSchema << " attention\n";
  out << "query_id,n_shots,layer,demo_visual,demo_text,query_visual,query_text,total\n";
  for (const auto& r : rows) {
    out << r.query_id << ',' << r.n_shots << ',' << r.layer << ',' << fmt(r.mass.demo_visual) << ','
        << fmt(r.mass.demo_text) << ',' << fmt(r.mass.query_visual) << ',' << fmt(r.mass.query_text) << ','
        << fmt(r.total) << '\n';
  }
}

void write_ppl_csv(const std::filesystem::path& path, const std::vector<CostReport>& cells) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# " << kReportSchema << " ppl\n";
  out << "mode,selection,n_shots,ppl_mean,ppl_overflow\n";
  for (const auto& c : cells) {
    if (!c.error.empty()) continue;
    out << to_string(c.mode) << ',' << to_string(c.selection) << ',' << c.n_shots << ',' << fmt(c.ppl_mean) << ','
        << c.ppl_overflow << '\n';
  }
}

void write_plot_script(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << R"PY(#!/usr/bin/env python3
# Plots PPL and wall time against shot count from the CSVs next to this script.
import csv, os, sys
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))

def rows(name):
    path = os.path.join(here, name)
    if not os.path.exists(path):
        return []
    with open(path) as f:
        return list(csv.DictReader(line for line in f if not line.startswith("#")))

def series(data, key):
    out = {}
    for r in data:
        if r.get("error"):
            continue
        out.setdefault((r["mode"], r["selection"]), []).append((int(r["n_shots"]), float(r[key])))
    return out

for name, key, ylabel in (("ppl.csv", "ppl_mean", "perplexity"),
                          ("cells.csv", "median_wall_ns", "wall time (ns)"),
                          ("throughput.csv", "median_wall_ns", "wall time (ns)")):
    data = rows(name)
    if not data:
        continue
    fig, ax = plt.subplots()
    for (mode, sel), pts in sorted(series(data, key).items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{mode}/{sel}")
    ax.set_xlabel("shots")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.savefig(os.path.join(here, name.replace(".csv", ".png")), dpi=120)
)PY";
}

void write_grid_reports(const std::filesystem::path& dir, const GridResult& result) {
  std::filesystem::create_directories(dir);
  write_cells_csv(dir / "cells.csv", result.cells);
  write_queries_jsonl(dir / "queries.jsonl", result.queries);
  write_attention_csv(dir / "attention.csv", result.attention);
  write_ppl_csv(dir / "ppl.csv", result.cells);
  write_plot_script(dir / "plot.py");
}

}  // namespace ficl
