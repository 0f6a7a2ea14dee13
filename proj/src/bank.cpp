#include "ficl/bank.hpp"

#include <mutex>
#include <string>

#include "ficl/binary_io.hpp"
#include "ficl/error.hpp"

namespace ficl {

namespace {

bool current(const FusedTokens& t, const AggregationContext& ctx) {
  return t.weights_version == ctx.weights_version && t.projection_version == ctx.projection_version &&
         t.n_layers_used == ctx.config.n_layers;
}

}  // namespace

std::optional<FusedTokens> DemonstrationBank::find(const Digest& demo, const AggregationContext& ctx) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find({demo, ctx.config.n_layers});
  if (it == entries_.end() || !current(it->second, ctx)) return std::nullopt;
  return it->second;
}

void DemonstrationBank::insert(const FusedTokens& tokens) {
  std::unique_lock lock(mutex_);
  entries_.insert_or_assign(Slot{tokens.demo_digest, tokens.n_layers_used}, tokens);
}

FusedTokens DemonstrationBank::get_or_aggregate(const Demonstration& demo, const AggregationContext& ctx,
                                                ForwardTrace* trace) {
  const Digest key = demo_digest(demo);
  if (auto hit = find(key, ctx)) {
    ++hits_;
    return *std::move(hit);
  }
  ++misses_;
  FusedTokens fresh = aggregate(demo, ctx, trace);
  insert(fresh);
  return fresh;
}

std::size_t DemonstrationBank::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

void DemonstrationBank::reset_counters() {
  hits_ = 0;
  misses_ = 0;
}

void DemonstrationBank::save(const std::filesystem::path& path, const AggregationContext& ctx) const {
  std::shared_lock lock(mutex_);
  std::vector<const FusedTokens*> selected;
  for (const auto& [slot, t] : entries_)
    if (current(t, ctx)) selected.push_back(&t);
  BinaryWriter out(path);
  out.bytes("FDB1", 4);
  out.u32(kBankFormatVersion);
  out.digest(ctx.weights_version);
  out.digest(ctx.projection_version);
  out.u32(static_cast<std::uint32_t>(ctx.config.n_layers));
  out.u64(selected.size());
  for (const FusedTokens* t : selected) {
    out.digest(t->demo_digest);
    out.u64(t->tokens.rows());
    out.u64(t->tokens.cols());
    out.doubles(t->tokens.data());
  }
  out.close();
}

std::size_t DemonstrationBank::load(const std::filesystem::path& path) {
  BinaryReader in(path);
  in.expect_magic("FDB1");
  if (const auto v = in.u32(); v != kBankFormatVersion) {
    throw CorruptionError(path.string() + ": unsupported bank version " + std::to_string(v));
  }
  const Digest weights = in.digest();
  const Digest projection = in.digest();
  const std::size_t n_layers = in.u32();
  const std::uint64_t count = in.u64();
  std::vector<FusedTokens> loaded;
  for (std::uint64_t i = 0; i < count; ++i) {
    FusedTokens t;
    t.demo_digest = in.digest();
    const std::uint64_t rows = in.u64();
    const std::uint64_t cols = in.u64();
    if (rows == 0 || cols == 0) throw CorruptionError(path.string() + ": empty bank entry");
    if (rows > in.remaining() || cols > in.remaining()) throw CorruptionError(path.string() + ": truncated file");
    t.tokens = Tensor({rows, cols}, in.doubles(rows * cols));
    t.text_len = rows;
    t.n_layers_used = n_layers;
    t.weights_version = weights;
    t.projection_version = projection;
    loaded.push_back(std::move(t));
  }
  if (!in.at_end()) throw CorruptionError(path.string() + ": trailing bytes in bank");
  for (const auto& t : loaded) insert(t);
  return loaded.size();
}

}  // namespace ficl
