#include "ficl/digest.hpp"

#include <openssl/evp.h>

#include <bit>
#include <stdexcept>

namespace ficl {

namespace {

EVP_MD_CTX* ctx_of(void* p) { return static_cast<EVP_MD_CTX*>(p); }

}  // namespace

std::string to_hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(d.size() * 2);
  for (auto b : d) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

Hasher::Hasher() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_of(ctx_), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 init failed");
  }
}

Hasher::~Hasher() { EVP_MD_CTX_free(ctx_of(ctx_)); }

Hasher& Hasher::update_raw(const void* data, std::size_t len) {
  EVP_DigestUpdate(ctx_of(ctx_), data, len);
  return *this;
}

Hasher& Hasher::update(std::uint64_t v) {
  static_assert(std::endian::native == std::endian::little);
  return update_raw(&v, sizeof v);
}

Hasher& Hasher::update(std::string_view s) {
  update(static_cast<std::uint64_t>(s.size()));
  return update_raw(s.data(), s.size());
}

Hasher& Hasher::update(std::span<const double> values) {
  update(static_cast<std::uint64_t>(values.size()));
  return update_raw(values.data(), values.size_bytes());
}

Hasher& Hasher::update(const Digest& d) { return update_raw(d.data(), d.size()); }

Digest Hasher::finish() {
  Digest out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx_of(ctx_), out.data(), &len);
  return out;
}

}  // namespace ficl
