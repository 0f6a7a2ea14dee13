#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ficl/aggregator.hpp"
#include "ficl/backbone.hpp"
#include "ficl/digest.hpp"
#include "ficl/engine.hpp"

namespace ficl {

// Interleaved image-text instance: k images, each paired with one text, and
// the concatenated remaining (unpaired) text that the LM must predict.
struct TrainingInstance {
  std::uint64_t id = 0;
  std::vector<Image> images;
  std::vector<std::string> texts;
  std::string remaining_text;

  std::size_t k() const { return images.size(); }
};

inline constexpr std::size_t kMaxImagesPerInstance = 5;

// ---- synthetic motif world ---------------------------------------------
// A motif is three words from a fixed eight-word lexicon. Images draw the
// motif as a patch-block barcode: patch column c carries word c as three lit
// or dark patches plus a lit marker patch underneath.

inline constexpr std::size_t kMotifLength = 3;
using Motif = std::array<int, kMotifLength>;

const std::vector<std::string>& motif_lexicon();
std::string motif_words(const Motif& m);
Image render_motif(const Motif& m, std::size_t patch_size);
// Reads the motif back from a rendered image; throws InputError if the image
// is not a well-formed barcode.
Motif decode_motif(const Image& img, std::size_t patch_size);

// Text templates used by the synthetic world.
std::string paired_text(const Motif& m);     // "photo of ox cat owl."
std::string remaining_phrase(const Motif& m);  // "then ox cat owl."
inline constexpr const char* kSynthInstruction = "photo of";
std::string synth_label(const Motif& m);  // " ox cat owl."

std::vector<TrainingInstance> synth_corpus(std::size_t n_instances, std::uint64_t seed, const ModelConfig& cfg);

// Hook standing in for image-text similarity filtering of web corpora. The
// synthetic world pairs by construction, so it keeps every pair.
TrainingInstance filter_pairs(TrainingInstance inst);

Digest corpus_digest(const std::vector<TrainingInstance>& corpus);

struct EvalItem {
  Demonstration demo;  // query image + instruction + gold label
  Motif motif;
};

// Image-caption style demonstrations/queries in the synthetic world.
std::vector<EvalItem> synth_eval_items(std::size_t n, std::uint64_t seed, const ModelConfig& cfg);

inline Query as_query(const Demonstration& d) { return Query{d.image, d.instruction}; }

// ---- files --------------------------------------------------------------
// Corpus: JSON lines {"k", "images": [paths], "texts": [...], "remaining_text"}.
// Images are written as PGM next to the corpus.
void write_corpus(const std::filesystem::path& path, const std::vector<TrainingInstance>& corpus);
std::vector<TrainingInstance> read_corpus(const std::filesystem::path& path);

// Demo/query records: JSON lines {"image_path", "instruction", "label"?, "question"?}.
// A "{question}" placeholder in the instruction is replaced by the question.

void write_demo_records(const std::filesystem::path& path, const std::vector<EvalItem>& items);
std::vector<Demonstration> read_demo_records(const std::filesystem::path& path);

std::string format_instruction(const std::string& tmpl, const std::string& question);

}  // namespace ficl
