#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace ficl {

using Digest = std::array<std::uint8_t, 32>;

std::string to_hex(const Digest& d);

// Incremental SHA-256. Every `update` overload length-prefixes variable-size
// input so that distinct field sequences never collide by concatenation.
class Hasher {
 public:
  Hasher();
  ~Hasher();
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  Hasher& update_raw(const void* data, std::size_t len);
  Hasher& update(std::string_view s);
  Hasher& update(std::span<const double> values);
  Hasher& update(std::uint64_t v);
  Hasher& update(const Digest& d);

  Digest finish();

 private:
  void* ctx_;
};

}  // namespace ficl
