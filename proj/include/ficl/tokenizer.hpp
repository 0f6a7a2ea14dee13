#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ficl {

// Byte-level vocabulary: three specials followed by the 256 byte values.
inline constexpr int kBosId = 0;
inline constexpr int kEosId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kByteOffset = 3;
inline constexpr int kByteVocabSize = 256 + kByteOffset;

std::vector<int> tokenize(std::string_view text);

// Inverse of tokenize; special ids are skipped.
std::string detokenize(std::span<const int> ids);

}  // namespace ficl
