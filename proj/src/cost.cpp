#include "ficl/cost.hpp"

#include <cctype>
#include <numeric>
#include <string>

#include "ficl/error.hpp"

namespace ficl {

Ratio Ratio::of(std::int64_t n, std::int64_t d) {
  if (d == 0) throw DomainError("ratio with zero denominator");
  if (d < 0) {
    n = -n;
    d = -d;
  }
  const std::int64_t g = std::gcd(n, d);
  return g == 0 ? Ratio{0, 1} : Ratio{n / g, d / g};
}

Ratio Ratio::from_decimal(std::string_view text) {
  std::int64_t num = 0, den = 1;
  bool seen_point = false, any = false;
  for (char c : text) {
    if (c == '.' && !seen_point) {
      seen_point = true;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      num = num * 10 + (c - '0');
      if (seen_point) den *= 10;
      any = true;
    } else {
      throw DomainError("not a decimal number: " + std::string(text));
    }
  }
  if (!any) throw DomainError("not a decimal number: " + std::string(text));
  return of(num, den);
}

Ratio operator+(Ratio a, Ratio b) { return Ratio::of(a.num * b.den + b.num * a.den, a.den * b.den); }

Ratio operator/(Ratio a, Ratio b) {
  if (b.num == 0) throw DomainError("division by zero ratio");
  return Ratio::of(a.num * b.den, a.den * b.num);
}

Ratio mean(std::span<const Ratio> values) {
  if (values.empty()) throw DomainError("mean of no values");
  Ratio total{0, 1};
  for (const auto& v : values) total = total + v;
  return total / Ratio::of(static_cast<std::int64_t>(values.size()));
}

Ratio remaining_ratio(Ratio visual, Ratio text) {
  if (text.num == 0) throw DomainError("remaining_ratio: text token count must be at least 1");
  if (visual.num < 0 || text.num < 0) throw DomainError("remaining_ratio: negative token count");
  return text / (visual + text);
}

double remaining_ratio(std::size_t visual, std::size_t text) {
  return remaining_ratio(Ratio::of(static_cast<std::int64_t>(visual)), Ratio::of(static_cast<std::int64_t>(text)))
      .value();
}

Ratio average_remaining_ratio(Ratio visual, std::span<const Ratio> text_lengths) {
  return remaining_ratio(visual, mean(text_lengths));
}

std::int64_t round_percent(Ratio r) {
  // floor((200·num + den) / (2·den)) == round-half-up of 100·num/den
  return (200 * r.num + r.den) / (2 * r.den);
}

std::uint64_t attention_cost(std::uint64_t k, std::uint64_t l, std::uint64_t heads, std::uint64_t layers,
                             AttentionMode mode) {
  if (k == 0 || l == 0 || heads == 0 || layers == 0) throw DomainError("attention_cost: arguments must be positive");
  if (mode == AttentionMode::kIndependent) return k * layers * heads * l * l;
  return layers * heads * (k * l) * (k * l);
}

std::uint64_t prompt_attention_cost(std::size_t len, const ModelConfig& cfg) {
  return attention_cost(1, len, cfg.n_heads, cfg.n_layers, AttentionMode::kIndependent);
}

std::uint64_t peak_bytes_estimate(std::size_t len, const ModelConfig& cfg) {
  const std::uint64_t t = len, d = cfg.d_model;
  const std::uint64_t scores = cfg.n_heads * t * t;
  const std::uint64_t activations = t * (4 * d + cfg.mlp_dim());
  const std::uint64_t kv_cache = 2 * cfg.n_layers * t * d;
  return 8 * (scores + activations + kv_cache);
}

}  // namespace ficl
