#include "xidpo/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "json.hpp"

namespace xidpo {

namespace {

using nlohmann::json;

void reject_unknown(const json& section, const std::string& name, const std::set<std::string>& allowed) {
  if (!section.is_object()) {
    throw ConfigError("config section \"" + name + "\" must be an object");
  }
  for (const auto& [key, _] : section.items()) {
    if (!allowed.count(key)) {
      throw ConfigError("unknown key \"" + key + "\" in section \"" + name + "\"");
    }
  }
}

template <typename T>
void read(const json& section, const char* key, T& out) {
  if (auto it = section.find(key); it != section.end()) {
    if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) {
        throw ConfigError(std::string("config key \"") + key + "\" must be a non-negative integer");
      }
    }
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config key \"") + key + "\" has the wrong type");
    }
  }
}

void read_generator(const json& s, GeneratorConfig& g) {
  reject_unknown(s, "generator",
                 {"n_pairs", "candidates_per_prompt", "score_noise_sd", "prompt_length", "max_response_length",
                  "seed", "scorer_scale", "max_retries"});
  read(s, "n_pairs", g.n_pairs);
  read(s, "candidates_per_prompt", g.candidates_per_prompt);
  read(s, "score_noise_sd", g.score_noise_sd);
  read(s, "prompt_length", g.prompt_length);
  read(s, "max_response_length", g.max_response_length);
  read(s, "seed", g.seed);
  read(s, "scorer_scale", g.scorer_scale);
  read(s, "max_retries", g.max_retries);
  if (g.candidates_per_prompt < 2) {
    throw ConfigError("generator.candidates_per_prompt must be >= 2");
  }
  if (g.n_pairs < 1) {
    throw ConfigError("generator.n_pairs must be >= 1");
  }
}

void read_policy(const json& s, PolicyInit& p) {
  reject_unknown(s, "policy", {"vocab_size", "bos_id", "init", "init_scale", "seed"});
  read(s, "vocab_size", p.config.vocab_size);
  read(s, "bos_id", p.config.bos_id);
  read(s, "init_scale", p.scale);
  read(s, "seed", p.seed);
  std::string kind;
  read(s, "init", kind);
  if (kind == "uniform") {
    p.kind = PolicyInitKind::uniform;
  } else if (kind == "random" || kind.empty()) {
    p.kind = PolicyInitKind::random;
  } else {
    throw ConfigError("policy.init must be \"uniform\" or \"random\"");
  }
  if (p.config.vocab_size < 2 || p.config.bos_id < 0 || p.config.bos_id >= p.config.vocab_size) {
    throw ConfigError("policy.vocab_size must be >= 2 and bos_id < vocab_size");
  }
}

void read_loss(const json& s, LossConfig& l, XiSpec& xi) {
  reject_unknown(s, "loss", {"method", "beta", "gamma", "xi", "tau", "lambda", "c", "leaky_slope"});
  std::string method;
  read(s, "method", method);
  if (!method.empty()) {
    l.method = parse_method(method);
  }
  read(s, "beta", l.beta);
  read(s, "gamma", l.gamma);
  read(s, "tau", l.tau);
  read(s, "lambda", l.lambda);
  read(s, "c", l.c);
  read(s, "leaky_slope", l.leaky_slope);
  if (auto it = s.find("xi"); it != s.end()) {
    if (it->is_number()) {
      xi = parse_xi_spec(it->dump());
    } else if (it->is_string()) {
      xi = parse_xi_spec(it->get<std::string>());
    } else {
      throw ConfigError("loss.xi must be a number or \"auto:<t>\"");
    }
    l.xi = xi.value;
  }
}

void read_train(const json& s, TrainConfig& t) {
  reject_unknown(s, "train",
                 {"steps", "batch_size", "lr", "schedule", "warmup_fraction", "optimizer", "adam_beta1", "adam_beta2",
                  "adam_eps", "seed", "log_every", "eval_size"});
  read(s, "steps", t.steps);
  read(s, "batch_size", t.batch_size);
  read(s, "lr", t.lr);
  read(s, "warmup_fraction", t.warmup_fraction);
  read(s, "adam_beta1", t.adam_beta1);
  read(s, "adam_beta2", t.adam_beta2);
  read(s, "adam_eps", t.adam_eps);
  read(s, "seed", t.seed);
  read(s, "log_every", t.log_every);
  read(s, "eval_size", t.eval_size);
  std::string schedule;
  read(s, "schedule", schedule);
  if (schedule == "constant") {
    t.schedule = ScheduleKind::constant;
  } else if (schedule == "cosine" || schedule == "cosine_with_warmup") {
    t.schedule = ScheduleKind::cosine_with_warmup;
  } else if (!schedule.empty()) {
    throw ConfigError("train.schedule must be \"constant\" or \"cosine_with_warmup\"");
  }
  std::string optimizer;
  read(s, "optimizer", optimizer);
  if (optimizer == "sgd") {
    t.optimizer = OptimizerKind::sgd;
  } else if (optimizer == "adam") {
    t.optimizer = OptimizerKind::adam;
  } else if (!optimizer.empty()) {
    throw ConfigError("train.optimizer must be \"sgd\" or \"adam\"");
  }
  validate_train_config(t);
}

void read_paths(const json& s, PathsConfig& p) {
  reject_unknown(s, "paths", {"data", "policy", "ref", "out_dir"});
  read(s, "data", p.data);
  read(s, "policy", p.policy);
  read(s, "ref", p.ref);
  read(s, "out_dir", p.out_dir);
}

}  // namespace

PolicyParams make_initial_policy(const PolicyInit& init) {
  if (init.kind == PolicyInitKind::uniform) {
    return PolicyParams::uniform(init.config);
  }
  return PolicyParams::random(init.config, init.seed, init.scale);
}

XiSpec parse_xi_spec(std::string_view text) {
  XiSpec spec;
  auto to_double = [](std::string_view s) {
    const std::string str(s);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(str, &used);
    } catch (const std::logic_error&) {
      throw ConfigError("cannot parse number \"" + str + "\"");
    }
    if (used != str.size()) {
      throw ConfigError("cannot parse number \"" + str + "\"");
    }
    return v;
  };
  constexpr std::string_view prefix = "auto:";
  if (text.substr(0, prefix.size()) == prefix) {
    const double t = to_double(text.substr(prefix.size()));
    if (!(t >= 0.0 && t <= 1.0)) {
      throw ConfigError("auto xi quantile level must lie in [0, 1]");
    }
    spec.auto_t = t;
  } else {
    const double v = to_double(text);
    if (!(v > 0.0 && v <= 1.0)) {
      throw ConfigError("xi must lie in (0, 1]");
    }
    spec.value = v;
  }
  return spec;
}

RunConfig parse_run_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(doc, "<root>", {"generator", "policy", "loss", "train", "paths"});
  RunConfig rc;
  if (doc.contains("generator")) {
    read_generator(doc["generator"], rc.generator);
  }
  if (doc.contains("policy")) {
    read_policy(doc["policy"], rc.policy);
  }
  if (doc.contains("loss")) {
    read_loss(doc["loss"], rc.loss, rc.xi);
  }
  if (doc.contains("train")) {
    read_train(doc["train"], rc.train);
  }
  if (doc.contains("paths")) {
    read_paths(doc["paths"], rc.paths);
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open config " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace xidpo
