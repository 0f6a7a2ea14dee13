#include "ficl/corpus.hpp"

#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "ficl/error.hpp"

namespace ficl {

using nlohmann::json;
using nlohmann::ordered_json;

const std::vector<std::string>& motif_lexicon() {
  static const std::vector<std::string> kWords = {"ox", "cat", "owl", "bee", "elk", "yak", "emu", "ant"};
  return kWords;
}

std::string motif_words(const Motif& m) {
  std::string out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i) out += ' ';
    out += motif_lexicon().at(static_cast<std::size_t>(m[i]));
  }
  return out;
}

std::string paired_text(const Motif& m) { return std::string(kSynthInstruction) + synth_label(m); }
std::string remaining_phrase(const Motif& m) { return "then " + motif_words(m) + "."; }
std::string synth_label(const Motif& m) { return " " + motif_words(m) + "."; }

Image render_motif(const Motif& m, std::size_t patch_size) {
  const std::size_t grid = kMotifLength + 1;
  const std::size_t side = grid * patch_size;
  std::vector<double> px(side * side, 0.0);
  auto light = [&](std::size_t gr, std::size_t gc) {
    for (std::size_t r = 0; r < patch_size; ++r)
      for (std::size_t c = 0; c < patch_size; ++c) px[(gr * patch_size + r) * side + gc * patch_size + c] = 1.0;
  };
  for (std::size_t col = 0; col < kMotifLength; ++col) {
    for (std::size_t bit = 0; bit < 3; ++bit)
      if ((m[col] >> bit) & 1) light(bit, col);
    light(3, col);
  }
  return make_image(side, side, std::move(px));
}

Motif decode_motif(const Image& img, std::size_t patch_size) {
  const std::size_t grid = kMotifLength + 1;
  if (img.height != grid * patch_size || img.width != grid * patch_size) throw InputError("not a motif image");
  auto lit = [&](std::size_t gr, std::size_t gc) {
    return img.at(gr * patch_size + patch_size / 2, gc * patch_size + patch_size / 2) > 0.5;
  };
  Motif m{};
  for (std::size_t col = 0; col < kMotifLength; ++col) {
    if (!lit(3, col)) throw InputError("motif image lacks a column marker");
    int v = 0;
    for (std::size_t bit = 0; bit < 3; ++bit)
      if (lit(bit, col)) v |= 1 << bit;
    m[col] = v;
  }
  return m;
}

namespace {

Motif random_motif(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> word(0, static_cast<int>(motif_lexicon().size()) - 1);
  Motif m{};
  for (auto& w : m) w = word(rng);
  return m;
}

}  // namespace

std::vector<TrainingInstance> synth_corpus(std::size_t n_instances, std::uint64_t seed, const ModelConfig& cfg) {
  if (n_instances == 0) throw UsageError("synth_corpus: need at least one instance");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_k(1, kMaxImagesPerInstance);
  std::vector<TrainingInstance> out;
  out.reserve(n_instances);
  for (std::size_t i = 0; i < n_instances; ++i) {
    TrainingInstance inst;
    inst.id = i;
    const std::size_t k = pick_k(rng);
    for (std::size_t j = 0; j < k; ++j) {
      const Motif m = random_motif(rng);
      inst.images.push_back(render_motif(m, cfg.patch_size));
      inst.texts.push_back(paired_text(m));
      if (j) inst.remaining_text += ' ';
      inst.remaining_text += remaining_phrase(m);
    }
    out.push_back(filter_pairs(std::move(inst)));
  }
  return out;
}

TrainingInstance filter_pairs(TrainingInstance inst) { return inst; }

Digest corpus_digest(const std::vector<TrainingInstance>& corpus) {
  Hasher h;
  h.update(std::string_view("corpus"));
  for (const auto& inst : corpus) {
    h.update(inst.id);
    h.update(static_cast<std::uint64_t>(inst.k()));
    for (std::size_t j = 0; j < inst.k(); ++j) {
      h.update(image_digest(inst.images[j]));
      h.update(std::string_view(inst.texts[j]));
    }
    h.update(std::string_view(inst.remaining_text));
  }
  return h.finish();
}

std::vector<EvalItem> synth_eval_items(std::size_t n, std::uint64_t seed, const ModelConfig& cfg) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<EvalItem> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Motif m = random_motif(rng);
    out.push_back({Demonstration{render_motif(m, cfg.patch_size), kSynthInstruction, synth_label(m)}, m});
  }
  return out;
}

namespace {

std::filesystem::path image_dir_for(const std::filesystem::path& path) {
  return path.parent_path() / (path.stem().string() + "_images");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& ref) {
  std::filesystem::path p(ref);
  return p.is_absolute() ? p : base.parent_path() / p;
}

json parse_line(const std::string& line, const std::filesystem::path& path, std::size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
  }
}

}  // namespace

void write_corpus(const std::filesystem::path& path, const std::vector<TrainingInstance>& corpus) {
  const auto dir = image_dir_for(path);
  std::filesystem::create_directories(dir);
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& inst : corpus) {
    ordered_json rec;
    rec["id"] = inst.id;
    rec["k"] = inst.k();
    std::vector<std::string> refs;
    for (std::size_t j = 0; j < inst.k(); ++j) {
      const std::string name = "i" + std::to_string(inst.id) + "_" + std::to_string(j) + ".pgm";
      write_pgm(dir / name, inst.images[j]);
      refs.push_back((std::filesystem::path(dir.filename()) / name).string());
    }
    rec["images"] = refs;
    rec["texts"] = inst.texts;
    rec["remaining_text"] = inst.remaining_text;
    out << rec.dump() << "\n";
  }
}

std::vector<TrainingInstance> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus " + path.string());
  std::vector<TrainingInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json rec = parse_line(line, path, lineno);
    TrainingInstance inst;
    inst.id = rec.value("id", static_cast<std::uint64_t>(out.size()));
    for (const auto& ref : rec.at("images")) inst.images.push_back(read_image(resolve(path, ref.get<std::string>())));
    inst.texts = rec.at("texts").get<std::vector<std::string>>();
    inst.remaining_text = rec.at("remaining_text").get<std::string>();
    const std::size_t k = rec.at("k").get<std::size_t>();
    if (k != inst.images.size() || k != inst.texts.size() || k == 0 || k > kMaxImagesPerInstance) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": inconsistent k");
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::string format_instruction(const std::string& tmpl, const std::string& question) {
  static const std::string kSlot = "{question}";
  std::string out = tmpl;
  if (auto pos = out.find(kSlot); pos != std::string::npos) out.replace(pos, kSlot.size(), question);
  return out;
}

void write_demo_records(const std::filesystem::path& path, const std::vector<EvalItem>& items) {
  const auto dir = image_dir_for(path);
  std::filesystem::create_directories(dir);
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string name = "d" + std::to_string(i) + ".pgm";
    write_pgm(dir / name, items[i].demo.image);
    ordered_json rec;
    rec["image_path"] = (std::filesystem::path(dir.filename()) / name).string();
    rec["instruction"] = items[i].demo.instruction;
    rec["label"] = items[i].demo.label;
    out << rec.dump() << "\n";
  }
}

std::vector<Demonstration> read_demo_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open demo records " + path.string());
  std::vector<Demonstration> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json rec = parse_line(line, path, lineno);
    Demonstration d;
    d.image = read_image(resolve(path, rec.at("image_path").get<std::string>()));
    d.instruction = format_instruction(rec.value("instruction", std::string()), rec.value("question", std::string()));
    d.label = rec.value("label", std::string());
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace ficl
