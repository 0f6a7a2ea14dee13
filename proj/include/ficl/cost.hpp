#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "ficl/backbone.hpp"

namespace ficl {

// Exact non-negative rational used for ratio accounting.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Ratio of(std::int64_t n, std::int64_t d = 1);
  // Parses "30.1", "16", "0.25" exactly.
  static Ratio from_decimal(std::string_view text);

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Ratio&) const = default;
};

Ratio operator+(Ratio a, Ratio b);
Ratio operator/(Ratio a, Ratio b);

Ratio mean(std::span<const Ratio> values);

// Share of demonstration tokens that survive compression: t / (v + t).
// Throws DomainError when t is zero.
Ratio remaining_ratio(Ratio visual, Ratio text);
double remaining_ratio(std::size_t visual, std::size_t text);

// Ratio at the mean text length across datasets.
Ratio average_remaining_ratio(Ratio visual, std::span<const Ratio> text_lengths);

// Nearest whole percent, halves rounded up, computed without floating point.
std::int64_t round_percent(Ratio r);

enum class AttentionMode { kIndependent, kJoint };

// Attention score elements for k segments of length l: independent
// processing costs k·layers·heads·l², joint processing layers·heads·(k·l)².
std::uint64_t attention_cost(std::uint64_t k, std::uint64_t l, std::uint64_t heads, std::uint64_t layers,
                             AttentionMode mode);

// Self-attention elements of one forward over a prompt of `len` rows.
std::uint64_t prompt_attention_cost(std::size_t len, const ModelConfig& cfg);

// Analytical inference footprint for a prompt of `len` rows: one layer's
// score matrices, per-layer activations (residual, qkv, mlp hidden) and the
// key/value cache, all as float64.
std::uint64_t peak_bytes_estimate(std::size_t len, const ModelConfig& cfg);

}  // namespace ficl
