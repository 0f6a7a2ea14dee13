// Command-line front end: data synthesis, projection training, offline
// aggregation into a bank, generation and the measurement drivers.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "ficl/bank.hpp"
#include "ficl/bench.hpp"
#include "ficl/config.hpp"
#include "ficl/corpus.hpp"
#include "ficl/cost.hpp"
#include "ficl/error.hpp"
#include "ficl/trainer.hpp"

namespace fs = std::filesystem;
using namespace ficl;

namespace {

struct Globals {
  std::string config;
  std::string weights = "weights.bin";
  std::string bank;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

struct EvalArgs {
  std::string demos, queries, checkpoint;
  std::size_t pool_size = 64, query_count = 20;
};

AppConfig load_config(const Globals& g) {
  AppConfig cfg = g.config.empty() ? parse_app_config("{}") : load_app_config(g.config);
  if (g.seed) {
    cfg.run.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  return cfg;
}

BackboneWeights require_weights(const Globals& g, const AppConfig& cfg) {
  if (!fs::exists(g.weights)) {
    throw ConfigError("weights file " + g.weights + " not found; create one with `ficl synth-corpus --weights " +
                      g.weights + "`");
  }
  return load_weights(g.weights, cfg.model);
}

ProjectionLayer projection_for(const EvalArgs& a, const AppConfig& cfg) {
  if (!a.checkpoint.empty()) return load_projection(a.checkpoint, cfg.model);
  return ProjectionLayer::near_identity(cfg.model.d_model, cfg.train.seed);
}

std::vector<Demonstration> demos_from(const std::string& path, std::size_t n, std::uint64_t seed,
                                      const ModelConfig& mc) {
  if (!path.empty()) return read_demo_records(path);
  std::vector<Demonstration> out;
  for (auto& it : synth_eval_items(n, seed, mc)) out.push_back(std::move(it.demo));
  return out;
}

void load_bank(DemonstrationBank& bank, const Globals& g) {
  if (!g.bank.empty() && fs::exists(g.bank)) {
    const auto n = bank.load(g.bank);
    std::fprintf(stderr, "bank: loaded %zu entries from %s\n", n, g.bank.c_str());
  }
}

void save_bank(const DemonstrationBank& bank, const Globals& g, const AggregationContext& ctx) {
  if (g.bank.empty()) return;
  bank.save(g.bank, ctx);
  std::fprintf(stderr, "bank: %zu entries, %" PRIu64 " hits, %" PRIu64 " misses -> %s\n", bank.size(), bank.hits(),
               bank.misses(), g.bank.c_str());
}

void add_eval_options(CLI::App* cmd, EvalArgs& a) {
  cmd->add_option("--demos", a.demos, "demonstration pool (JSON lines); synthesised when omitted");
  cmd->add_option("--queries", a.queries, "queries with gold labels (JSON lines); synthesised when omitted");
  cmd->add_option("--checkpoint", a.checkpoint, "trained projection; noise-initialised when omitted");
  cmd->add_option("--pool-size", a.pool_size, "synthetic pool size")->capture_default_str();
  cmd->add_option("--query-count", a.query_count, "synthetic query count")->capture_default_str();
}

struct Eval {
  AppConfig cfg;
  BackboneWeights w;
  ProjectionLayer proj;
  EvalSetup setup;
};

std::unique_ptr<Eval> make_eval(const Globals& g, const EvalArgs& a) {
  auto e = std::make_unique<Eval>();
  e->cfg = load_config(g);
  e->w = require_weights(g, e->cfg);
  e->proj = projection_for(a, e->cfg);
  e->setup.weights = &e->w;
  e->setup.projection = &e->proj;
  e->setup.aggregation = e->cfg.aggregation;
  e->setup.pool = demos_from(a.demos, a.pool_size, e->cfg.run.seed + 1, e->cfg.model);
  e->setup.queries = demos_from(a.queries, a.query_count, e->cfg.run.seed + 2, e->cfg.model);
  return e;
}

std::vector<std::size_t> parse_shots(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw ConfigError("bad shot count '" + item + "'");
    }
  }
  return out;
}

void apply_run_overrides(RunSpec& run, const std::string& shots, const std::vector<std::string>& modes,
                         const std::vector<std::string>& selections) {
  if (!shots.empty()) run.shots = parse_shots(shots);
  if (!modes.empty()) {
    run.modes.clear();
    for (const auto& m : modes) run.modes.push_back(parse_prompt_mode(m));
  }
  if (!selections.empty()) {
    run.selections.clear();
    for (const auto& s : selections) run.selections.push_back(parse_selection(s));
  }
  run.validate();
}

int cmd_synth(const Globals& g, std::size_t n, const std::string& out, std::size_t pool, std::size_t queries) {
  const AppConfig cfg = load_config(g);
  const fs::path dir = g.out_dir;
  fs::create_directories(dir);
  if (!g.weights.empty() && !fs::exists(g.weights)) {
    save_weights(g.weights, init_backbone(cfg.model));
    std::fprintf(stderr, "wrote fresh backbone weights to %s\n", g.weights.c_str());
  }
  const auto corpus = synth_corpus(n, cfg.train.seed, cfg.model);
  write_corpus(dir / out, corpus);
  std::printf("corpus %s: %zu instances, digest %s\n", (dir / out).c_str(), corpus.size(),
              to_hex(corpus_digest(corpus)).c_str());
  if (pool > 0) write_demo_records(dir / "demos.jsonl", synth_eval_items(pool, cfg.run.seed + 1, cfg.model));
  if (queries > 0) write_demo_records(dir / "queries.jsonl", synth_eval_items(queries, cfg.run.seed + 2, cfg.model));
  return 0;
}

int cmd_train(const Globals& g, const std::string& corpus_path, std::uint64_t steps, const std::string& ckpt,
              bool resume) {
  const AppConfig cfg = load_config(g);
  const auto w = require_weights(g, cfg);
  const auto corpus = read_corpus(corpus_path);
  if (corpus.empty()) throw InputError("corpus " + corpus_path + " is empty");
  const fs::path dir = g.out_dir;
  fs::create_directories(dir);
  const fs::path ckpt_path = ckpt.empty() ? dir / "checkpoint.bin" : fs::path(ckpt);
  TrainerState state = resume && fs::exists(ckpt_path) ? load_checkpoint(ckpt_path, cfg.train, cfg.model)
                                                        : init_trainer(cfg.model, cfg.train);
  const std::uint64_t target =
      steps > 0 ? steps : cfg.train.epochs * ((corpus.size() + cfg.train.effective_batch - 1) / cfg.train.effective_batch);
  std::ofstream log(dir / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
  train(state, corpus, w, cfg.train, target, [&](const StepLog& s, const TrainerState& st) {
    nlohmann::ordered_json j;
    j["step"] = s.step;
    j["loss"] = s.loss;
    j["wall_seconds"] = s.wall_seconds;
    j["grad_norm"] = s.grad_norm;
    log << j.dump() << '\n' << std::flush;
    if (cfg.train.checkpoint_every_steps > 0 && s.step % cfg.train.checkpoint_every_steps == 0) {
      save_checkpoint(dir / ("checkpoint_" + std::to_string(s.step) + ".bin"), st, cfg.train, cfg.model);
    }
  });
  save_checkpoint(ckpt_path, state, cfg.train, cfg.model);
  if (!state.loss_history.empty()) {
    std::printf("trained to step %" PRIu64 ": smoothed loss %.6f -> %.6f; checkpoint %s\n", state.step,
                smoothed_first(state.loss_history, 10), smoothed_last(state.loss_history, 10), ckpt_path.c_str());
  }
  return 0;
}

int cmd_aggregate(const Globals& g, const EvalArgs& a) {
  if (g.bank.empty()) throw ConfigError("aggregate needs --bank");
  const auto e = make_eval(g, a);
  DemonstrationBank bank;
  load_bank(bank, g);
  const AggregationContext ctx(e->w, e->proj, e->cfg.aggregation);
  for (const auto& d : e->setup.pool) bank.get_or_aggregate(d, ctx);
  save_bank(bank, g, ctx);
  return 0;
}

int cmd_generate(const Globals& g, const EvalArgs& a, std::size_t shots, const std::string& mode_name) {
  const auto e = make_eval(g, a);
  const PromptMode mode = parse_prompt_mode(mode_name);
  DemonstrationBank bank;
  load_bank(bank, g);
  const AggregationContext ctx(e->w, e->proj, e->cfg.aggregation);
  const std::size_t nq = std::min(e->cfg.run.n_queries, e->setup.queries.size());
  for (std::size_t q = 0; q < nq; ++q) {
    std::vector<Demonstration> demos;
    for (auto i : random_demo_indices(e->setup.pool.size(), shots, e->cfg.run.seed, q)) demos.push_back(e->setup.pool[i]);
    const auto& query = e->setup.queries[q];
    const auto prompt = build_prompt(mode, demos, as_query(query), ctx, bank);
    const auto gen = generate(prompt, e->cfg.run.max_new_tokens, e->w);
    nlohmann::ordered_json j;
    j["query_id"] = q;
    j["n_shots"] = shots;
    j["mode"] = to_string(mode);
    j["output"] = gen.text;
    if (!query.label.empty()) {
      const auto ppl = perplexity(prompt, query.label, e->w);
      if (ppl.overflow) j["ppl"] = nullptr;
      else j["ppl"] = ppl.value;
    }
    j["prompt_len"] = prompt.length();
    std::cout << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  }
  save_bank(bank, g, ctx);
  return 0;
}

int cmd_grid(const Globals& g, const EvalArgs& a, const std::string& shots, const std::vector<std::string>& modes,
             const std::vector<std::string>& selections, bool ppl_only) {
  const auto e = make_eval(g, a);
  apply_run_overrides(e->cfg.run, shots, modes, selections);
  DemonstrationBank bank;
  load_bank(bank, g);
  const auto result = run_grid(e->setup, e->cfg.run, bank);
  const fs::path dir = g.out_dir;
  if (ppl_only) {
    fs::create_directories(dir);
    write_ppl_csv(dir / "ppl.csv", result.cells);
    write_plot_script(dir / "plot.py");
  } else {
    write_grid_reports(dir, result);
  }
  std::size_t failed = 0;
  for (const auto& c : result.cells) {
    if (!c.error.empty()) ++failed;
    std::printf("%-9s %-6s shots=%-3zu ppl=%-10.4f overflow=%zu prompt=%.1f %s\n", to_string(c.mode),
                to_string(c.selection), c.n_shots, c.ppl_mean, c.ppl_overflow, c.mean_prompt_len, c.error.c_str());
  }
  save_bank(bank, g, AggregationContext(e->w, e->proj, e->cfg.aggregation));
  std::printf("%zu cells, %zu failed; reports in %s\n", result.cells.size(), failed, dir.c_str());
  return 0;
}

int cmd_bench(const Globals& g, const EvalArgs& a, const std::string& shots, const std::vector<std::string>& modes) {
  const auto e = make_eval(g, a);
  apply_run_overrides(e->cfg.run, shots, modes, {});
  DemonstrationBank bank;
  load_bank(bank, g);
  const auto reports = bench_throughput(e->setup, e->cfg.run, bank);
  const fs::path dir = g.out_dir;
  fs::create_directories(dir);
  write_cells_csv(dir / "throughput.csv", reports);
  write_plot_script(dir / "plot.py");
  for (const auto& r : reports) {
    std::printf("%-9s shots=%-3zu prompt=%-7.1f median=%.3f ms  %.2f queries/s  %.1f tokens/s  peak~%" PRIu64
                " B %s\n",
                to_string(r.mode), r.n_shots, r.mean_prompt_len, static_cast<double>(r.median_wall_ns) * 1e-6,
                r.queries_per_second, r.tokens_per_second, r.peak_bytes, r.error.c_str());
  }
  for (PromptMode m : e->cfg.run.modes) {
    std::vector<double> x, y;
    for (const auto& r : reports)
      if (r.mode == m && r.n_shots > 0 && r.error.empty()) {
        x.push_back(static_cast<double>(r.n_shots));
        y.push_back(static_cast<double>(r.median_wall_ns));
      }
    if (x.size() >= 2) std::printf("slope %-9s %.3f ms per shot\n", to_string(m), fit_slope(x, y) * 1e-6);
  }
  const auto cross = crossover_shots(reports);
  if (cross) std::printf("fused at or below baseline wall time from %zu shots\n", cross);
  else std::printf("no crossover within the measured shot counts\n");
  save_bank(bank, g, AggregationContext(e->w, e->proj, e->cfg.aggregation));
  return 0;
}

int cmd_attn(const Globals& g, const EvalArgs& a, const std::string& shots) {
  const auto e = make_eval(g, a);
  apply_run_overrides(e->cfg.run, shots, {}, {});
  const auto rows = attention_summaries(e->setup, e->cfg.run);
  const fs::path dir = g.out_dir;
  fs::create_directories(dir);
  write_attention_csv(dir / "attention.csv", rows);
  double vis = 0.0, txt = 0.0;
  for (const auto& r : rows) {
    vis += r.mass.demo_visual;
    txt += r.mass.demo_text;
  }
  if (!rows.empty()) {
    std::printf("mean demo-visual mass %.4f, mean demo-text mass %.4f over %zu prompts\n",
                vis / static_cast<double>(rows.size()), txt / static_cast<double>(rows.size()), rows.size());
  }
  return 0;
}

int cmd_rices(const Globals& g, const EvalArgs& a, std::size_t k) {
  const auto e = make_eval(g, a);
  const RicesIndex index(e->setup.pool, e->w);
  const std::size_t nq = std::min(e->cfg.run.n_queries, e->setup.queries.size());
  for (std::size_t q = 0; q < nq; ++q) {
    const auto sel = index.select(e->setup.queries[q].image, k);
    for (const auto& w : sel.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    nlohmann::ordered_json j;
    j["query_id"] = q;
    auto& hits = j["hits"] = nlohmann::ordered_json::array();
    for (const auto& h : sel.hits) hits.push_back({{"index", h.index}, {"similarity", h.similarity}});
    std::cout << j.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fused-token multimodal in-context learning toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--weights", g.weights, "backbone weights file")->capture_default_str();
  app.add_option("--bank", g.bank, "demonstration bank file (loaded if present, saved on exit)");
  app.add_option("--seed", g.seed, "overrides the run and training seeds");
  app.add_option("--out-dir", g.out_dir, "directory for reports and checkpoints")->capture_default_str();

  EvalArgs eval;
  std::string shots;
  std::vector<std::string> modes, selections;

  auto* synth = app.add_subcommand("synth-corpus", "write a synthetic interleaved corpus (and fresh weights)");
  std::size_t n_instances = 2000, pool = 64, queries = 50;
  std::string corpus_name = "corpus.jsonl";
  synth->add_option("-n,--instances", n_instances)->capture_default_str();
  synth->add_option("--name", corpus_name)->capture_default_str();
  synth->add_option("--pool", pool, "also write this many demo records")->capture_default_str();
  synth->add_option("--queries", queries, "also write this many query records")->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "train the projection layer");
  std::string corpus_path, ckpt;
  std::uint64_t steps = 0;
  bool resume = false;
  train_cmd->add_option("--corpus", corpus_path)->required();
  train_cmd->add_option("--steps", steps, "target step (default: epochs over the corpus)");
  train_cmd->add_option("--checkpoint", ckpt, "checkpoint path (default OUT_DIR/checkpoint.bin)");
  train_cmd->add_flag("--resume", resume, "continue from the checkpoint if it exists");

  auto* agg = app.add_subcommand("aggregate", "aggregate a demo pool into the bank");
  add_eval_options(agg, eval);

  auto* gen = app.add_subcommand("generate", "generate answers for queries");
  std::size_t gen_shots = 2;
  std::string gen_mode = "fused";
  add_eval_options(gen, eval);
  gen->add_option("--shots", gen_shots)->capture_default_str();
  gen->add_option("--mode", gen_mode, "fused, baseline or text_only")->capture_default_str();

  auto* ppl = app.add_subcommand("ppl-curve", "perplexity of gold labels against shot count");
  add_eval_options(ppl, eval);
  ppl->add_option("--shots", shots, "comma-separated, ascending");
  ppl->add_option("--modes", modes);

  auto* bench = app.add_subcommand("bench", "throughput against shot count");
  add_eval_options(bench, eval);
  bench->add_option("--shots", shots, "comma-separated, ascending");
  bench->add_option("--modes", modes);

  auto* grid = app.add_subcommand("grid", "shots x modes x selection grid with full reports");
  add_eval_options(grid, eval);
  grid->add_option("--shots", shots, "comma-separated, ascending");
  grid->add_option("--modes", modes);
  grid->add_option("--selection", selections, "random and/or rices");

  auto* attn = app.add_subcommand("attn-map", "attention mass of the first generated token per segment");
  add_eval_options(attn, eval);
  attn->add_option("--shots", shots, "comma-separated, ascending");

  auto* rices = app.add_subcommand("rices", "retrieve demonstrations by image similarity");
  std::size_t k = 4;
  add_eval_options(rices, eval);
  rices->add_option("-k", k)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(g, n_instances, corpus_name, pool, queries);
    if (*train_cmd) return cmd_train(g, corpus_path, steps, ckpt, resume);
    if (*agg) return cmd_aggregate(g, eval);
    if (*gen) return cmd_generate(g, eval, gen_shots, gen_mode);
    if (*ppl) return cmd_grid(g, eval, shots, modes, {}, true);
    if (*bench) return cmd_bench(g, eval, shots, modes);
    if (*grid) return cmd_grid(g, eval, shots, modes, selections, false);
    if (*attn) return cmd_attn(g, eval, shots);
    if (*rices) return cmd_rices(g, eval, k);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
