#include "ficl/config.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "ficl/error.hpp"

namespace ficl {

using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(PromptMode m) {
  switch (m) {
    case PromptMode::kFused: return "fused";
    case PromptMode::kBaseline: return "baseline";
    case PromptMode::kTextOnly: return "text_only";
  }
  return "unknown";
}

const char* to_string(Selection s) { return s == Selection::kRandom ? "random" : "rices"; }

PromptMode parse_prompt_mode(const std::string& s) {
  if (s == "fused") return PromptMode::kFused;
  if (s == "baseline") return PromptMode::kBaseline;
  if (s == "text_only") return PromptMode::kTextOnly;
  throw ConfigError("unknown mode '" + s + "' (expected fused, baseline or text_only)");
}

Selection parse_selection(const std::string& s) {
  if (s == "random") return Selection::kRandom;
  if (s == "rices") return Selection::kRices;
  throw ConfigError("unknown demo selection '" + s + "' (expected random or rices)");
}

void RunSpec::validate() const {
  for (std::size_t i = 1; i < shots.size(); ++i)
    if (shots[i] <= shots[i - 1]) throw ConfigError("run: shots must be strictly ascending");
  if (repetitions == 0) throw ConfigError("run: repetitions must be at least 1");
  if (max_new_tokens == 0) throw ConfigError("run: max_new_tokens must be at least 1");
  if (modes.empty()) throw ConfigError("run: no modes");
  if (selections.empty()) throw ConfigError("run: no selections");
}

namespace {

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown config key '" + section + "." + key + "'");
  }
}

}  // namespace

AppConfig parse_app_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config root must be an object");
  AppConfig cfg;
  check_keys(root, "", {"model", "aggregation", "train", "templates", "run"});
  if (root.contains("model")) {
    const auto& m = root["model"];
    check_keys(m, "model", {"d_model", "n_layers", "n_heads", "vocab_size", "visual_tokens", "patch_size", "max_seq", "seed"});
    read(m, "d_model", cfg.model.d_model);
    read(m, "n_layers", cfg.model.n_layers);
    read(m, "n_heads", cfg.model.n_heads);
    read(m, "vocab_size", cfg.model.vocab_size);
    read(m, "visual_tokens", cfg.model.visual_tokens);
    read(m, "patch_size", cfg.model.patch_size);
    read(m, "max_seq", cfg.model.max_seq);
    read(m, "seed", cfg.model.seed);
  }
  if (root.contains("aggregation")) check_keys(root["aggregation"], "aggregation", {"n_layers"});
  if (root.contains("aggregation")) read(root["aggregation"], "n_layers", cfg.aggregation.n_layers);
  if (root.contains("train")) {
    const auto& t = root["train"];
    check_keys(t, "train", {"learning_rate", "beta1", "beta2", "epsilon", "effective_batch", "micro_batch", "epochs",
                            "seed", "checkpoint_every_steps"});
    read(t, "learning_rate", cfg.train.learning_rate);
    read(t, "beta1", cfg.train.beta1);
    read(t, "beta2", cfg.train.beta2);
    read(t, "epsilon", cfg.train.epsilon);
    read(t, "effective_batch", cfg.train.effective_batch);
    read(t, "micro_batch", cfg.train.micro_batch);
    read(t, "epochs", cfg.train.epochs);
    read(t, "seed", cfg.train.seed);
    read(t, "checkpoint_every_steps", cfg.train.checkpoint_every_steps);
  }
  cfg.train.n_layers = cfg.aggregation.n_layers;
  if (root.contains("templates")) {
    const auto& t = root["templates"];
    check_keys(t, "templates", {"caption", "vqa", "classification"});
    read(t, "caption", cfg.templates.caption);
    read(t, "vqa", cfg.templates.vqa);
    read(t, "classification", cfg.templates.classification);
  }
  if (root.contains("run")) {
    const auto& r = root["run"];
    check_keys(r, "run", {"seed", "shots", "queries", "max_new_tokens", "repetitions", "warmup", "attention_queries",
                          "attention_layer", "modes", "selection"});
    read(r, "seed", cfg.run.seed);
    read(r, "shots", cfg.run.shots);
    read(r, "queries", cfg.run.n_queries);
    read(r, "max_new_tokens", cfg.run.max_new_tokens);
    read(r, "repetitions", cfg.run.repetitions);
    read(r, "warmup", cfg.run.warmup);
    read(r, "attention_queries", cfg.run.attention_queries);
    if (r.contains("attention_layer")) {
      std::size_t layer = 0;
      read(r, "attention_layer", layer);
      cfg.run.attention_layer = layer;
    }
    if (r.contains("modes")) {
      std::vector<std::string> names;
      read(r, "modes", names);
      cfg.run.modes.clear();
      for (const auto& n : names) cfg.run.modes.push_back(parse_prompt_mode(n));
    }
    if (r.contains("selection")) {
      std::vector<std::string> names;
      read(r, "selection", names);
      cfg.run.selections.clear();
      for (const auto& n : names) cfg.run.selections.push_back(parse_selection(n));
    }
  }
  cfg.model.validate();
  cfg.aggregation.resolve(cfg.model);
  cfg.train.validate();
  cfg.run.validate();
  return cfg;
}

AppConfig load_app_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_app_config({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
}

std::string dump_app_config(const AppConfig& cfg) {
  ordered_json j;
  const auto& m = cfg.model;
  j["model"] = {{"d_model", m.d_model},       {"n_layers", m.n_layers},     {"n_heads", m.n_heads},
                {"vocab_size", m.vocab_size}, {"visual_tokens", m.visual_tokens}, {"patch_size", m.patch_size},
                {"max_seq", m.max_seq},       {"seed", m.seed}};
  j["aggregation"] = {{"n_layers", cfg.aggregation.n_layers}};
  const auto& t = cfg.train;
  j["train"] = {{"learning_rate", t.learning_rate}, {"beta1", t.beta1}, {"beta2", t.beta2},
                {"epsilon", t.epsilon}, {"effective_batch", t.effective_batch}, {"micro_batch", t.micro_batch},
                {"epochs", t.epochs}, {"seed", t.seed}, {"checkpoint_every_steps", t.checkpoint_every_steps}};
  j["templates"] = {{"caption", cfg.templates.caption}, {"vqa", cfg.templates.vqa},
                    {"classification", cfg.templates.classification}};
  std::vector<std::string> modes, sels;
  for (auto md : cfg.run.modes) modes.push_back(to_string(md));
  for (auto s : cfg.run.selections) sels.push_back(to_string(s));
  j["run"] = {{"seed", cfg.run.seed}, {"shots", cfg.run.shots}, {"modes", modes}, {"selection", sels},
              {"queries", cfg.run.n_queries}, {"max_new_tokens", cfg.run.max_new_tokens},
              {"repetitions", cfg.run.repetitions}, {"warmup", cfg.run.warmup},
              {"attention_queries", cfg.run.attention_queries}};
  if (cfg.run.attention_layer) j["run"]["attention_layer"] = *cfg.run.attention_layer;
  return j.dump(2);
}

}  // namespace ficl
