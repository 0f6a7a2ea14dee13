#include "ficl/tokenizer.hpp"

namespace ficl {

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char ch : text) ids.push_back(static_cast<unsigned char>(ch) + kByteOffset);
  return ids;
}

std::string detokenize(std::span<const int> ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id >= kByteOffset && id < kByteVocabSize) out.push_back(static_cast<char>(id - kByteOffset));
  }
  return out;
}

}  // namespace ficl
