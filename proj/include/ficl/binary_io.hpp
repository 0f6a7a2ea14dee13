#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ficl/digest.hpp"

namespace ficl {

// Little-endian writer for the weight, bank and checkpoint formats.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void bytes(const void* data, std::size_t n);
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(const std::string& s);
  void digest(const Digest& d) { bytes(d.data(), d.size()); }
  void doubles(std::span<const double> v) { bytes(v.data(), v.size_bytes()); }
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// Reader over a fully loaded file. Any short read throws CorruptionError.
class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);

  void bytes(void* out, std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Digest digest();
  std::vector<double> doubles(std::size_t n);
  void expect_magic(const char (&magic)[5]);
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::string name_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace ficl
