#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <utility>

#include "ficl/aggregator.hpp"

namespace ficl {

// Cache of fused tokens. Slots are addressed by (demo digest, N); an entry
// only counts as a hit when its backbone and projection versions also match,
// otherwise it is treated as a miss and overwritten.
class DemonstrationBank {
 public:
  DemonstrationBank() = default;
  DemonstrationBank(const DemonstrationBank&) = delete;
  DemonstrationBank& operator=(const DemonstrationBank&) = delete;

  FusedTokens get_or_aggregate(const Demonstration& demo, const AggregationContext& ctx,
                               ForwardTrace* trace = nullptr);

  // Lookup without aggregation; nullopt on miss or stale entry. Counters untouched.
  std::optional<FusedTokens> find(const Digest& demo, const AggregationContext& ctx) const;
  void insert(const FusedTokens& tokens);

  std::uint64_t hits() const { return hits_.load(); }
  std::uint64_t misses() const { return misses_.load(); }
  std::size_t size() const;
  void reset_counters();

  // File layout: magic "FDB1", u32 version, backbone digest, projection
  // digest, u32 N, u64 entry count, then per entry {demo digest, u64 |T|,
  // u64 d, |T|*d float64}. Only entries matching ctx are written.
  void save(const std::filesystem::path& path, const AggregationContext& ctx) const;
  // Merges a saved bank; returns the number of entries read.
  std::size_t load(const std::filesystem::path& path);

 private:
  using Slot = std::pair<Digest, std::size_t>;

  mutable std::shared_mutex mutex_;
  std::map<Slot, FusedTokens> entries_;
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
};

inline constexpr std::uint32_t kBankFormatVersion = 1;

}  // namespace ficl
