#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ficl/aggregator.hpp"
#include "ficl/backbone.hpp"
#include "ficl/trainer.hpp"

namespace ficl {

// Instruction templates; "{question}" is substituted for VQA-style records.
struct TaskTemplates {
  std::string caption = "Describe the image in English in one sentence: ";
  std::string vqa = "\n{question} Answer in a word: ";
  std::string classification = "is an image with {question} written on it. Is it hateful? Answer: ";
};

enum class PromptMode { kFused, kBaseline, kTextOnly };
enum class Selection { kRandom, kRices };

const char* to_string(PromptMode m);
const char* to_string(Selection s);
PromptMode parse_prompt_mode(const std::string& s);
Selection parse_selection(const std::string& s);

struct RunSpec {
  std::string subcommand;
  std::uint64_t seed = 0;
  std::vector<std::size_t> shots{0, 1, 2, 4, 8, 16};
  std::vector<PromptMode> modes{PromptMode::kFused, PromptMode::kBaseline, PromptMode::kTextOnly};
  std::vector<Selection> selections{Selection::kRandom};
  std::size_t n_queries = 20;
  std::size_t max_new_tokens = 8;
  std::size_t repetitions = 5;  // timed runs per point; the median is reported
  std::size_t warmup = 3;       // discarded runs before timing
  std::size_t attention_queries = 10;
  std::optional<std::size_t> attention_layer;  // default: last layer

  // Throws ConfigError unless shots are ascending and repetitions >= 1.
  void validate() const;
};

struct AppConfig {
  ModelConfig model;
  AggregationConfig aggregation;
  TrainConfig train;
  TaskTemplates templates;
  RunSpec run;
};

// Missing keys keep their defaults; unknown or ill-typed values raise ConfigError.
AppConfig load_app_config(const std::filesystem::path& path);
AppConfig parse_app_config(const std::string& json_text);
std::string dump_app_config(const AppConfig& cfg);

}  // namespace ficl
