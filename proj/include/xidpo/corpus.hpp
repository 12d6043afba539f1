#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "xidpo/policy.hpp"

namespace xidpo {

// Meta values are JSON numbers or strings. Integers are kept apart from
// reals so a save/load cycle is the identity.
using MetaValue = std::variant<std::int64_t, double, std::string>;
using Meta = std::map<std::string, MetaValue>;

struct PreferencePair {
  TokenSeq prompt;
  TokenSeq chosen;
  TokenSeq rejected;
  Meta meta;

  bool operator==(const PreferencePair&) const = default;
};

struct Dataset {
  std::vector<PreferencePair> pairs;
  int vocab_size = 2;

  bool operator==(const Dataset&) const = default;
};

// Throws ValidationError when ids fall outside [0, vocab_size), a response is
// empty, or chosen == rejected.
void validate_pair(const PreferencePair& pair, int vocab_size);
void validate_dataset(const Dataset& dataset);

Dataset load_jsonl(const std::string& path, int vocab_size);
void save_jsonl(const Dataset& dataset, const std::string& path);

// Single-line codec shared by load/save.
std::string pair_to_json_line(const PreferencePair& pair);
PreferencePair pair_from_json_line(const std::string& line, std::size_t line_no);

struct GeneratorConfig {
  std::size_t n_pairs = 1000;
  std::size_t candidates_per_prompt = 8;
  double score_noise_sd = 0.5;
  std::size_t prompt_length = 2;
  std::size_t max_response_length = 8;
  std::uint64_t seed = 0;
  // Standard deviation of the per-token scorer weights. 0 gives a pure-noise
  // scorer whose ranking is independent of the responses.
  double scorer_scale = 1.0;
  std::size_t max_retries = 8;
};

struct GenerationResult {
  Dataset dataset;
  std::size_t skipped = 0;
};

// Per-token weights of the deterministic scorer for a given config.
std::vector<double> scorer_weights(const GeneratorConfig& config, int vocab_size);

// Best-of-K / worst-of-K preference pairs sampled from base_policy.
GenerationResult generate_synthetic(const PolicyParams& base_policy, const GeneratorConfig& config);

}  // namespace xidpo
