#include "ficl/binary_io.hpp"

#include <bit>
#include <cstring>
#include <iterator>

#include "ficl/error.hpp"

namespace ficl {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

BinaryWriter::BinaryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw InputError("cannot open " + path.string() + " for writing");
}

void BinaryWriter::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void BinaryWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void BinaryWriter::close() {
  out_.close();
  if (!out_) throw InputError("failed writing " + path_.string());
}

BinaryReader::BinaryReader(const std::filesystem::path& path) : name_(path.string()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + name_);
  buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void BinaryReader::bytes(void* out, std::size_t n) {
  if (n > buf_.size() - pos_) throw CorruptionError(name_ + ": truncated file");
  std::memcpy(out, buf_.data() + pos_, n);
  pos_ += n;
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  bytes(&v, sizeof v);
  return v;
}

std::string BinaryReader::str() {
  const std::uint32_t n = u32();
  if (n > remaining()) throw CorruptionError(name_ + ": truncated file");
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

Digest BinaryReader::digest() {
  Digest d;
  bytes(d.data(), d.size());
  return d;
}

std::vector<double> BinaryReader::doubles(std::size_t n) {
  if (n > remaining() / sizeof(double)) throw CorruptionError(name_ + ": truncated file");
  std::vector<double> v(n);
  bytes(v.data(), n * sizeof(double));
  return v;
}

void BinaryReader::expect_magic(const char (&magic)[5]) {
  char got[4];
  bytes(got, 4);
  if (std::memcmp(got, magic, 4) != 0) throw CorruptionError(name_ + ": bad magic, expected " + magic);
}

}  // namespace ficl
