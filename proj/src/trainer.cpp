#include "ficl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "ficl/binary_io.hpp"
#include "ficl/error.hpp"
#include "ficl/tokenizer.hpp"

namespace ficl {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
  if (effective_batch == 0) throw ConfigError("train config: effective_batch must be at least 1");
  if (micro_batch == 0) throw ConfigError("train config: micro_batch must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train config: betas in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train config: epsilon must be positive");
}

Digest train_config_digest(const TrainConfig& tc, const ModelConfig& mc) {
  Hasher h;
  h.update(std::string_view("train-config"));
  h.update(config_digest(mc));
  for (double v : {tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon}) h.update_raw(&v, sizeof v);
  h.update(static_cast<std::uint64_t>(tc.effective_batch));
  h.update(static_cast<std::uint64_t>(tc.micro_batch));
  h.update(tc.seed);
  h.update(static_cast<std::uint64_t>(tc.n_layers == 0 ? mc.n_layers : tc.n_layers));
  return h.finish();
}

TrainerState init_trainer(const ModelConfig& mc, const TrainConfig& tc) {
  mc.validate();
  tc.validate();
  TrainerState s;
  s.projection = ProjectionLayer::near_identity(mc.d_model, tc.seed);
  const std::size_t d = mc.d_model;
  s.moments = {std::vector<double>(d * d, 0.0), std::vector<double>(d * d, 0.0), std::vector<double>(d, 0.0),
               std::vector<double>(d, 0.0)};
  return s;
}

LossResult lm_loss(const TrainingInstance& inst, const BackboneWeights& w, const ProjectionParams& proj,
                   const AggregationConfig& agg, ForwardTrace* aggregation_trace) {
  const auto& cfg = w.config;
  const auto resolved = agg.resolve(cfg);
  LossResult out;
  if (inst.k() == 0 || inst.images.size() != inst.texts.size()) {
    out.skip_reason = "instance has no image-text pairs";
    return out;
  }
  std::vector<Tensor> parts;
  std::size_t fused_rows = 0;
  for (std::size_t j = 0; j < inst.k(); ++j) {
    const Demonstration pair{inst.images[j], "", inst.texts[j]};
    const std::size_t len = tokenize(pair.text()).size();
    if (len == 0) {
      out.skip_reason = "pair " + std::to_string(j) + " has empty text";
      return out;
    }
    if (cfg.visual_tokens + len > cfg.max_seq) {
      out.skip_reason = "pair " + std::to_string(j) + " exceeds max_seq during aggregation";
      return out;
    }
    parts.push_back(project(aggregate_hidden(pair, resolved, w, aggregation_trace), proj));
    fused_rows += len;
  }
  std::vector<int> target = tokenize(inst.remaining_text);
  if (target.empty()) {
    out.skip_reason = "remaining text is empty";
    return out;
  }
  if (fused_rows > cfg.max_seq) {
    out.skip_reason = "fused tokens alone exceed max_seq";
    return out;
  }
  const std::size_t limit = cfg.max_seq - fused_rows + 1;
  if (target.size() > limit) {
    target.resize(limit);
    out.truncated = true;
  }
  const std::size_t n = target.size();
  if (n > 1) parts.push_back(embed_tokens(std::span<const int>(target).first(n - 1), w));
  const Tensor hidden = forward_layers(concat_rows(parts), 0, cfg.n_layers, w);
  const Tensor logits = lm_logits(slice_rows(hidden, fused_rows - 1, n), w);
  out.loss = cross_entropy(logits, target);
  out.target_tokens = n;
  return out;
}

StepReport train_step(std::span<const TrainingInstance> batch, TrainerState& state, const BackboneWeights& w,
                      const TrainConfig& tc) {
  tc.validate();
  if (batch.empty()) throw UsageError("train_step: empty batch");
  const AggregationConfig agg{tc.n_layers};
  const std::size_t d = state.projection.d_model();
  std::vector<double> grad_w(d * d, 0.0), grad_b(d, 0.0);
  StepReport report;
  std::vector<std::uint64_t> bad;
  double loss_total = 0.0;

  for (std::size_t start = 0; start < batch.size(); start += tc.micro_batch) {
    const std::size_t end = std::min(batch.size(), start + tc.micro_batch);
    std::vector<double> micro_w(d * d, 0.0), micro_b(d, 0.0);
    for (std::size_t i = start; i < end; ++i) {
      const auto& inst = batch[i];
      Tape tape;
      const ProjectionParams p = state.projection.track(tape);
      LossResult r;
      try {
        r = lm_loss(inst, w, p, agg);
      } catch (const NumericError&) {
        bad.push_back(inst.id);
        continue;
      }
      if (!r.loss) {
        report.skipped.push_back(inst.id);
        continue;
      }
      const double value = r.loss->item();
      if (!std::isfinite(value)) {
        bad.push_back(inst.id);
        continue;
      }
      const GradientMap grads = tape.backward(*r.loss);
      if (const Tensor* g = grads.find(p.weight))
        for (std::size_t k = 0; k < micro_w.size(); ++k) micro_w[k] += (*g)[k];
      if (const Tensor* g = grads.find(p.bias))
        for (std::size_t k = 0; k < micro_b.size(); ++k) micro_b[k] += (*g)[k];
      loss_total += value;
      ++report.used;
      if (r.truncated) ++report.truncated;
    }
    for (std::size_t k = 0; k < grad_w.size(); ++k) grad_w[k] += micro_w[k];
    for (std::size_t k = 0; k < grad_b.size(); ++k) grad_b[k] += micro_b[k];
  }

  if (!bad.empty()) {
    std::string ids;
    for (auto id : bad) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
    throw NumericError("train_step: non-finite loss for instances [" + ids + "]; step aborted");
  }
  if (report.used == 0) throw InputError("train_step: every instance in the batch was skipped");

  const double inv = 1.0 / static_cast<double>(report.used);
  double sq = 0.0;
  for (auto& g : grad_w) {
    g *= inv;
    sq += g * g;
  }
  for (auto& g : grad_b) {
    g *= inv;
    sq += g * g;
  }
  report.grad_norm = std::sqrt(sq);
  report.mean_loss = loss_total * inv;

  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(tc.beta1, t);
  const double c2 = 1.0 - std::pow(tc.beta2, t);
  auto adam = [&](std::span<const double> param, std::span<const double> grad, std::vector<double>& m,
                  std::vector<double>& v) {
    std::vector<double> next(param.begin(), param.end());
    for (std::size_t k = 0; k < next.size(); ++k) {
      m[k] = tc.beta1 * m[k] + (1.0 - tc.beta1) * grad[k];
      v[k] = tc.beta2 * v[k] + (1.0 - tc.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      next[k] -= tc.learning_rate * m_hat / (std::sqrt(v_hat) + tc.epsilon);
    }
    return next;
  };
  auto& mo = state.moments;
  auto new_w = adam(state.projection.weight().data(), grad_w, mo.m_weight, mo.v_weight);
  auto new_b = adam(state.projection.bias().data(), grad_b, mo.m_bias, mo.v_bias);
  state.projection = ProjectionLayer(Tensor({d, d}, std::move(new_w)), Tensor({d}, std::move(new_b)));
  ++state.step;
  state.loss_history.push_back(report.mean_loss);
  return report;
}

std::vector<std::size_t> batch_indices(std::size_t corpus_size, std::uint64_t step, const TrainConfig& tc) {
  if (corpus_size == 0) throw UsageError("batch_indices: empty corpus");
  std::vector<std::size_t> out;
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> perm(corpus_size);
  for (std::size_t i = 0; i < tc.effective_batch; ++i) {
    const std::uint64_t global = step * tc.effective_batch + i;
    const std::uint64_t epoch = global / corpus_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(tc.seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[global % corpus_size]);
  }
  return out;
}

void train(TrainerState& state, std::span<const TrainingInstance> corpus, const BackboneWeights& w,
           const TrainConfig& tc, std::uint64_t target_step,
           const std::function<void(const StepLog&, const TrainerState&)>& on_step) {
  while (state.step < target_step) {
    const auto idx = batch_indices(corpus.size(), state.step, tc);
    std::vector<TrainingInstance> batch;
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(corpus[i]);
    const auto t0 = std::chrono::steady_clock::now();
    const StepReport r = train_step(batch, state, w, tc);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_step) on_step({state.step, r.mean_loss, r.grad_norm, secs}, state);
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainerState& state, const TrainConfig& tc,
                     const ModelConfig& mc) {
  BinaryWriter out(path);
  out.bytes("FCKP", 4);
  out.u32(kCheckpointFormatVersion);
  out.digest(config_digest(mc));
  out.digest(train_config_digest(tc, mc));
  out.u64(state.step);
  out.u64(state.projection.d_model());
  out.doubles(state.projection.weight().data());
  out.doubles(state.projection.bias().data());
  out.doubles(state.moments.m_weight);
  out.doubles(state.moments.v_weight);
  out.doubles(state.moments.m_bias);
  out.doubles(state.moments.v_bias);
  out.u64(state.loss_history.size());
  out.doubles(state.loss_history);
  out.close();
}

namespace {

struct CheckpointHeader {
  Digest model;
  Digest train;
  std::uint64_t step;
  std::size_t d;
};

CheckpointHeader read_header(BinaryReader& in, const std::filesystem::path& path, const ModelConfig& mc) {
  in.expect_magic("FCKP");
  if (const auto v = in.u32(); v != kCheckpointFormatVersion) {
    throw CorruptionError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  }
  CheckpointHeader h{in.digest(), in.digest(), in.u64(), 0};
  h.d = in.u64();
  if (h.model != config_digest(mc) || h.d != mc.d_model) {
    throw ConfigError(path.string() + ": checkpoint was written for a different model config");
  }
  return h;
}

}  // namespace

TrainerState load_checkpoint(const std::filesystem::path& path, const TrainConfig& tc, const ModelConfig& mc) {
  BinaryReader in(path);
  const CheckpointHeader h = read_header(in, path, mc);
  if (h.train != train_config_digest(tc, mc)) {
    throw ConfigError(path.string() + ": checkpoint config digest differs from the requested training config");
  }
  const std::size_t d = h.d;
  TrainerState s;
  s.step = h.step;
  auto weight = in.doubles(d * d);
  auto bias = in.doubles(d);
  s.projection = ProjectionLayer(Tensor({d, d}, std::move(weight)), Tensor({d}, std::move(bias)));
  s.moments.m_weight = in.doubles(d * d);
  s.moments.v_weight = in.doubles(d * d);
  s.moments.m_bias = in.doubles(d);
  s.moments.v_bias = in.doubles(d);
  s.loss_history = in.doubles(in.u64());
  if (!in.at_end()) throw CorruptionError(path.string() + ": trailing bytes in checkpoint");
  return s;
}

ProjectionLayer load_projection(const std::filesystem::path& path, const ModelConfig& mc) {
  BinaryReader in(path);
  const CheckpointHeader h = read_header(in, path, mc);
  auto weight = in.doubles(h.d * h.d);
  auto bias = in.doubles(h.d);
  return ProjectionLayer(Tensor({h.d, h.d}, std::move(weight)), Tensor({h.d}, std::move(bias)));
}

double smoothed_first(std::span<const double> history, std::size_t window) {
  if (history.empty()) throw UsageError("smoothed_first: empty history");
  const std::size_t n = std::min(window, history.size());
  return std::accumulate(history.begin(), history.begin() + static_cast<std::ptrdiff_t>(n), 0.0) /
         static_cast<double>(n);
}

double smoothed_last(std::span<const double> history, std::size_t window) {
  if (history.empty()) throw UsageError("smoothed_last: empty history");
  const std::size_t n = std::min(window, history.size());
  return std::accumulate(history.end() - static_cast<std::ptrdiff_t>(n), history.end(), 0.0) /
         static_cast<double>(n);
}

}  // namespace ficl
