#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ficl/aggregator.hpp"
#include "ficl/backbone.hpp"
#include "ficl/corpus.hpp"

namespace ficl {

struct TrainConfig {
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t effective_batch = 16;
  std::size_t micro_batch = 4;  // effective_batch is reached by accumulation
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  std::size_t n_layers = 0;  // aggregation depth N; 0 = all layers
  std::size_t checkpoint_every_steps = 3400;

  void validate() const;
};

// Covers everything that changes the optimisation trajectory.
Digest train_config_digest(const TrainConfig& tc, const ModelConfig& mc);

struct AdamMoments {
  std::vector<double> m_weight, v_weight, m_bias, v_bias;
};

struct TrainerState {
  ProjectionLayer projection;
  AdamMoments moments;
  std::uint64_t step = 0;
  std::vector<double> loss_history;
};

TrainerState init_trainer(const ModelConfig& mc, const TrainConfig& tc);

struct LossResult {
  std::optional<Tensor> loss;   // absent when the instance was skipped
  std::string skip_reason;
  bool truncated = false;       // remaining text cut to fit max_seq
  std::size_t target_tokens = 0;
};

// Aggregates every (image, text) pair on its own, concatenates the fused
// tokens and teacher-forces the remaining text. Returns mean token NLL over
// the remaining text; differentiable w.r.t. `proj` when it is tracked.
// `aggregation_trace` observes only the per-pair aggregation passes.
LossResult lm_loss(const TrainingInstance& inst, const BackboneWeights& w, const ProjectionParams& proj,
                   const AggregationConfig& agg, ForwardTrace* aggregation_trace = nullptr);

struct StepReport {
  double mean_loss = 0.0;
  double grad_norm = 0.0;
  std::size_t used = 0;
  std::size_t truncated = 0;  // instances whose remaining text was cut
  std::vector<std::uint64_t> skipped;
};

// One optimiser update over `batch`: gradients are accumulated per micro
// batch, averaged over the used instances and applied by Adam to the
// projection only. Throws NumericError (state untouched) on a non-finite loss.
StepReport train_step(std::span<const TrainingInstance> batch, TrainerState& state, const BackboneWeights& w,
                      const TrainConfig& tc);

// Instance indices for a given step: a seeded per-epoch shuffle.
std::vector<std::size_t> batch_indices(std::size_t corpus_size, std::uint64_t step, const TrainConfig& tc);

struct StepLog {
  std::uint64_t step;
  double loss;
  double grad_norm;
  double wall_seconds;
};

// Runs until state.step == target_step.
void train(TrainerState& state, std::span<const TrainingInstance> corpus, const BackboneWeights& w,
           const TrainConfig& tc, std::uint64_t target_step,
           const std::function<void(const StepLog&, const TrainerState&)>& on_step = {});

// Checkpoints hold the projection, Adam moments, step and loss history; no
// backbone arrays. Loading under a different config digest is refused.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const TrainerState& state, const TrainConfig& tc,
                     const ModelConfig& mc);
TrainerState load_checkpoint(const std::filesystem::path& path, const TrainConfig& tc, const ModelConfig& mc);
// Reads only the projection layer, ignoring the optimiser config.
ProjectionLayer load_projection(const std::filesystem::path& path, const ModelConfig& mc);

double smoothed_last(std::span<const double> history, std::size_t window);
double smoothed_first(std::span<const double> history, std::size_t window);

}  // namespace ficl
