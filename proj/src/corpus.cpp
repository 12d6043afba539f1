#include "xidpo/corpus.hpp"

#include <fstream>
#include <numeric>

#include "json.hpp"
#include "xidpo/random.hpp"

namespace xidpo {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::uint64_t kScorerStream = 0xFFFF'FFFF'0000'0001ULL;

TokenSeq read_tokens(const nlohmann::json& j, const char* key, std::size_t line_no) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError(std::string("missing field \"") + key + "\"", line_no);
  }
  if (!it->is_array()) {
    throw ParseError(std::string("field \"") + key + "\" must be an array of integers", line_no);
  }
  TokenSeq out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number_integer()) {
      throw ParseError(std::string("field \"") + key + "\" must contain only integers", line_no);
    }
    const auto x = v.get<std::int64_t>();
    if (x < 0 || x > INT32_MAX) {
      throw ValidationError("line " + std::to_string(line_no) + ": token id " + std::to_string(x) + " out of range");
    }
    out.push_back(static_cast<TokenId>(x));
  }
  return out;
}

}  // namespace

void validate_pair(const PreferencePair& pair, int vocab_size) {
  auto check = [vocab_size](const TokenSeq& seq, const char* name) {
    for (TokenId id : seq) {
      if (id < 0 || id >= vocab_size) {
        throw ValidationError(std::string(name) + " token id " + std::to_string(id) +
                              " not below vocab size " + std::to_string(vocab_size));
      }
    }
  };
  if (pair.chosen.empty()) {
    throw ValidationError("chosen response is empty");
  }
  if (pair.rejected.empty()) {
    throw ValidationError("rejected response is empty");
  }
  check(pair.prompt, "prompt");
  check(pair.chosen, "chosen");
  check(pair.rejected, "rejected");
  if (pair.chosen == pair.rejected) {
    throw ValidationError("chosen and rejected responses are identical");
  }
}

void validate_dataset(const Dataset& dataset) {
  if (dataset.vocab_size < 2) {
    throw ValidationError("vocab_size must be >= 2");
  }
  for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
    try {
      validate_pair(dataset.pairs[i], dataset.vocab_size);
    } catch (const ValidationError& e) {
      throw ValidationError("pair " + std::to_string(i) + ": " + e.what());
    }
  }
}

std::string pair_to_json_line(const PreferencePair& pair) {
  ojson j;
  j["prompt"] = pair.prompt;
  j["chosen"] = pair.chosen;
  j["rejected"] = pair.rejected;
  if (!pair.meta.empty()) {
    ojson meta = ojson::object();
    for (const auto& [k, v] : pair.meta) {
      std::visit([&meta, &k](const auto& x) { meta[k] = x; }, v);
    }
    j["meta"] = std::move(meta);
  }
  return j.dump();
}

PreferencePair pair_from_json_line(const std::string& line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
  }
  if (!j.is_object()) {
    throw ParseError("expected a JSON object", line_no);
  }
  PreferencePair pair;
  pair.prompt = read_tokens(j, "prompt", line_no);
  pair.chosen = read_tokens(j, "chosen", line_no);
  pair.rejected = read_tokens(j, "rejected", line_no);
  if (auto it = j.find("meta"); it != j.end()) {
    if (!it->is_object()) {
      throw ParseError("\"meta\" must be an object", line_no);
    }
    for (const auto& [k, v] : it->items()) {
      if (v.is_number_integer()) {
        pair.meta[k] = v.get<std::int64_t>();
      } else if (v.is_number()) {
        pair.meta[k] = v.get<double>();
      } else if (v.is_string()) {
        pair.meta[k] = v.get<std::string>();
      } else {
        throw ParseError("meta value \"" + k + "\" must be a number or string", line_no);
      }
    }
  }
  return pair;
}

Dataset load_jsonl(const std::string& path, int vocab_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  Dataset ds;
  ds.vocab_size = vocab_size;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    auto pair = pair_from_json_line(line, line_no);
    try {
      validate_pair(pair, vocab_size);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    ds.pairs.push_back(std::move(pair));
  }
  if (in.bad()) {
    throw IoError("failed reading " + path);
  }
  return ds;
}

void save_jsonl(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path + " for writing");
  }
  for (const auto& pair : dataset.pairs) {
    out << pair_to_json_line(pair) << '\n';
  }
  out.flush();
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

std::vector<double> scorer_weights(const GeneratorConfig& config, int vocab_size) {
  Rng rng(mix_seed(config.seed, kScorerStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(static_cast<std::size_t>(vocab_size));
  for (double& x : w) {
    x = config.scorer_scale * normal(rng);
  }
  return w;
}

GenerationResult generate_synthetic(const PolicyParams& base_policy, const GeneratorConfig& config) {
  if (config.candidates_per_prompt < 2) {
    throw ContractError("candidates_per_prompt must be >= 2");
  }
  if (config.n_pairs < 1) {
    throw ContractError("n_pairs must be >= 1");
  }
  if (config.prompt_length < 1 || config.max_response_length < 1) {
    throw ContractError("prompt_length and max_response_length must be >= 1");
  }
  if (!(config.score_noise_sd >= 0.0)) {
    throw ContractError("score_noise_sd must be non-negative");
  }

  const int vocab = base_policy.vocab_size();
  const auto weights = scorer_weights(config, vocab);
  auto true_score = [&weights](const TokenSeq& seq) {
    double s = 0.0;
    for (TokenId t : seq) {
      s += weights[static_cast<std::size_t>(t)];
    }
    return s;
  };

  GenerationResult result;
  result.dataset.vocab_size = vocab;
  const std::size_t k = config.candidates_per_prompt;

  for (std::size_t p = 0; p < config.n_pairs; ++p) {
    // Each prompt owns a substream so prompts can be produced in any order.
    Rng rng(mix_seed(config.seed, p));
    std::normal_distribution<double> noise(0.0, 1.0);

    TokenSeq prompt(config.prompt_length);
    for (auto& t : prompt) {
      t = static_cast<TokenId>(rng() % static_cast<std::uint64_t>(vocab));
    }

    bool emitted = false;
    for (std::size_t attempt = 0; attempt <= config.max_retries && !emitted; ++attempt) {
      std::vector<TokenSeq> cands(k);
      std::vector<double> truth(k);
      std::vector<double> scored(k);
      for (std::size_t c = 0; c < k; ++c) {
        cands[c] = sample(base_policy, prompt, config.max_response_length, rng());
        truth[c] = true_score(cands[c]);
        scored[c] = truth[c] + config.score_noise_sd * noise(rng);
      }
      std::size_t best = 0;
      std::size_t worst = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (scored[c] > scored[best]) {
          best = c;
        }
        if (scored[c] < scored[worst]) {
          worst = c;
        }
      }
      if (cands[best] == cands[worst]) {
        continue;
      }
      PreferencePair pair;
      pair.prompt = prompt;
      pair.chosen = cands[best];
      pair.rejected = cands[worst];
      pair.meta["chosen_true_score"] = truth[best];
      pair.meta["rejected_true_score"] = truth[worst];
      result.dataset.pairs.push_back(std::move(pair));
      emitted = true;
    }
    if (!emitted) {
      ++result.skipped;
    }
  }
  return result;
}

}  // namespace xidpo
