#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ficl/aggregator.hpp"
#include "ficl/bank.hpp"
#include "ficl/config.hpp"
#include "ficl/engine.hpp"

namespace ficl {

// Everything a grid or throughput run needs: frozen weights, the trained
// projection, a demonstration pool and gold-labelled queries.
struct EvalSetup {
  const BackboneWeights* weights = nullptr;
  const ProjectionLayer* projection = nullptr;
  AggregationConfig aggregation;
  std::vector<Demonstration> pool;
  std::vector<Demonstration> queries;  // label holds the gold continuation
};

// Pool indices for query `query_id`; the same (seed, query_id) yields the same
// picks in every mode so cells stay comparable.
std::vector<std::size_t> random_demo_indices(std::size_t pool_size, std::size_t n, std::uint64_t seed,
                                             std::uint64_t query_id);

std::vector<std::size_t> select_demos(const EvalSetup& setup, const RicesIndex* rices, Selection sel,
                                      std::size_t n, std::uint64_t seed, std::size_t query_id);

PromptSequence build_prompt(PromptMode mode, std::span<const Demonstration> demos, const Query& q,
                            const AggregationContext& ctx, DemonstrationBank& bank, ForwardTrace* trace = nullptr);

struct CostReport {
  PromptMode mode = PromptMode::kFused;
  Selection selection = Selection::kRandom;
  std::size_t n_shots = 0;
  std::size_t visual_tokens = 0;  // |V| per demonstration
  double mean_text_tokens = 0.0;  // mean |T| over the demonstrations used
  double remaining_ratio = 1.0;   // R at the mean text length; 1 for 0-shot
  std::uint64_t aggregation_attention = 0;  // score elements, closed form
  std::uint64_t generation_attention = 0;   // score elements of the prompt forwards, closed form
  std::uint64_t peak_bytes = 0;             // analytical, largest prompt in the cell
  double mean_prompt_len = 0.0;
  double tokens_per_second = 0.0;
  double queries_per_second = 0.0;
  std::uint64_t median_wall_ns = 0;  // one pass over all queries
  std::uint64_t aggregation_forwards = 0;  // counted during the timed runs
  double ppl_mean = 0.0;             // over finite values
  std::size_t ppl_overflow = 0;      // +inf sentinels
  std::string error;                 // non-empty when the cell failed
};

struct QueryRecord {
  std::size_t query_id = 0;
  std::size_t n_shots = 0;
  PromptMode mode = PromptMode::kFused;
  Selection selection = Selection::kRandom;
  std::string output;
  double ppl = 0.0;
  bool ppl_overflow = false;
  std::size_t prompt_len = 0;
  std::uint64_t wall_time_ns = 0;
};

struct AttentionSummary {
  std::size_t query_id = 0;
  std::size_t n_shots = 0;
  std::size_t layer = 0;
  ModalityMass mass;
  double total = 0.0;  // sum of every segment fraction
};

struct GridResult {
  std::vector<CostReport> cells;
  std::vector<QueryRecord> queries;
  std::vector<AttentionSummary> attention;
};

// Times end-to-end query processing per (shots, mode). Fused cells warm the
// bank first so the timed runs do no aggregation.
std::vector<CostReport> bench_throughput(const EvalSetup& setup, const RunSpec& spec, DemonstrationBank& bank);

// Executes shots × modes × selections; a failing cell records its error and
// the remaining cells still run.
GridResult run_grid(const EvalSetup& setup, const RunSpec& spec, DemonstrationBank& bank);

// Baseline-layout attention summaries contrasting demo-visual and demo-text mass.
std::vector<AttentionSummary> attention_summaries(const EvalSetup& setup, const RunSpec& spec);

// Least-squares slope of y over x.
double fit_slope(std::span<const double> x, std::span<const double> y);
// Smallest shot count at which fused wall time is at most baseline; 0 when never.
std::size_t crossover_shots(const std::vector<CostReport>& reports);

inline constexpr const char* kReportSchema = "ficl-report v1";

void write_cells_csv(const std::filesystem::path& path, const std::vector<CostReport>& cells);
void write_queries_jsonl(const std::filesystem::path& path, const std::vector<QueryRecord>& records);
void write_attention_csv(const std::filesystem::path& path, const std::vector<AttentionSummary>& rows);
void write_ppl_csv(const std::filesystem::path& path, const std::vector<CostReport>& cells);
void write_plot_script(const std::filesystem::path& path);
void write_grid_reports(const std::filesystem::path& dir, const GridResult& result);

}  // namespace ficl
