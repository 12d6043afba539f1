#include "xidpo/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xidpo/analysis.hpp"
#include "xidpo/config.hpp"
#include "xidpo/corpus.hpp"
#include "xidpo/gradcheck.hpp"
#include "xidpo/losses.hpp"
#include "xidpo/margin.hpp"
#include "xidpo/parallel.hpp"
#include "xidpo/policy.hpp"
#include "xidpo/trainer.hpp"

namespace xidpo::cli {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

constexpr double kEquivalenceTolerance = 1e-8;
constexpr std::uint64_t kBasePolicyStream = 0xB45E;

// A flag combination CLI11 accepts syntactically but the command cannot use.
class UsageError : public Error {
 public:
  using Error::Error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << text;
  if (!out) {
    throw IoError("failed writing " + path.string());
  }
}

fs::path prepare_out_dir(const std::string& dir) {
  fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) {
    throw IoError("cannot create directory " + p.string() + ": " + ec.message());
  }
  return p;
}

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) {
      continue;
    }
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) {
        throw UsageError("bad quantile level \"" + item + "\"");
      }
    } catch (const std::logic_error&) {
      throw UsageError("bad quantile level \"" + item + "\"");
    }
  }
  if (out.empty()) {
    throw UsageError("--quantiles needs at least one level");
  }
  return out;
}

std::vector<Method> parse_methods(const std::string& text) {
  if (text == "all") {
    return all_methods();
  }
  std::vector<Method> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse_method(item));
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  if (out.empty()) {
    throw UsageError("--methods needs at least one method");
  }
  return out;
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string config;
  std::string out;
  std::size_t n = 0;
  int vocab = 0;
  std::size_t k = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::size_t prompt_len = 0;
  std::size_t resp_len = 0;
  double scorer_scale = 1.0;
  std::string policy_in;
  std::string policy_out;
  double policy_scale = 1.0;
};

int cmd_gen_data(const CLI::App& sub, const GenDataArgs& a, std::ostream& out) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  GeneratorConfig& g = rc.generator;
  auto given = [&sub](const char* flag) { return sub.count(flag) > 0; };
  if (given("--n")) g.n_pairs = a.n;
  if (given("--k")) g.candidates_per_prompt = a.k;
  if (given("--noise")) g.score_noise_sd = a.noise;
  if (given("--seed")) g.seed = a.seed;
  if (given("--prompt-len")) g.prompt_length = a.prompt_len;
  if (given("--resp-len")) g.max_response_length = a.resp_len;
  if (given("--scorer-scale")) g.scorer_scale = a.scorer_scale;
  if (given("--vocab")) rc.policy.config.vocab_size = a.vocab;
  if (given("--policy-scale")) rc.policy.scale = a.policy_scale;

  PolicyParams base;
  if (!a.policy_in.empty()) {
    base = load_policy(a.policy_in);
    if (given("--vocab") && base.vocab_size() != a.vocab) {
      throw UsageError("--vocab does not match the vocabulary of --policy-in");
    }
  } else {
    PolicyInit init = rc.policy;
    if (a.config.empty()) {
      init.seed = mix_seed(g.seed, kBasePolicyStream);
    }
    base = make_initial_policy(init);
  }

  const auto result = generate_synthetic(base, g);
  save_jsonl(result.dataset, a.out);
  if (!a.policy_out.empty()) {
    save_policy(base, a.policy_out);
  }
  ojson summary;
  summary["pairs_written"] = result.dataset.pairs.size();
  summary["skipped"] = result.skipped;
  summary["vocab_size"] = base.vocab_size();
  out << summary.dump() << '\n';
  return kOk;
}

// ------------------------------------------------------------ analyze-gaps

struct AnalyzeGapsArgs {
  std::string data;
  std::string policy;
  std::size_t bins = 40;
  std::string quantiles;
  std::optional<double> t;
  std::string out_dir = ".";
};

int cmd_analyze_gaps(const AnalyzeGapsArgs& a, std::ostream& out) {
  const auto policy = load_policy(a.policy);
  const auto data = load_jsonl(a.data, policy.vocab_size());
  const auto dist = compute_gaps(data, policy);
  const auto levels = a.quantiles.empty() ? default_quantile_levels() : parse_levels(a.quantiles);
  auto table = quantile_report(dist, levels);
  if (a.t) {
    table.selected_t = *a.t;
    table.selected_xi = select_xi(dist, *a.t);
  }
  const auto dir = prepare_out_dir(a.out_dir);
  const std::string qjson = quantile_table_json(table, dist);
  write_text(dir / "quantiles.json", qjson + "\n");
  write_text(dir / "quantiles.csv", quantile_table_csv(table));
  write_text(dir / "hist.csv", histogram_csv(export_histogram(dist, a.bins)));
  write_text(dir / "cdf.csv", cdf_csv(dist));
  out << qjson << '\n';
  return kOk;
}

// --------------------------------------------------------------- select-xi

struct SelectXiArgs {
  std::string data;
  std::string policy;
  double t = 0.95;
};

int cmd_select_xi(const SelectXiArgs& a, std::ostream& out) {
  const auto policy = load_policy(a.policy);
  const auto data = load_jsonl(a.data, policy.vocab_size());
  const auto dist = compute_gaps(data, policy);
  const double xi = select_xi(dist, a.t);
  ojson j;
  j["t"] = a.t;
  j["xi"] = xi;
  out << j.dump() << '\n';
  return kOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string loss;
  std::string xi;
  std::string ref;
  std::string policy;
  std::string out_dir;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::size_t batch_size = 0;
  std::size_t log_every = 0;
};

int cmd_train(const CLI::App& sub, const TrainArgs& a, std::ostream& out) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  auto given = [&sub](const char* flag) { return sub.count(flag) > 0; };
  if (given("--loss")) rc.loss.method = parse_method(a.loss);
  if (given("--xi")) {
    rc.xi = parse_xi_spec(a.xi);
    rc.loss.xi = rc.xi.value;
  }
  if (given("--data")) rc.paths.data = a.data;
  if (given("--ref")) rc.paths.ref = a.ref;
  if (given("--policy")) rc.paths.policy = a.policy;
  if (given("--out-dir")) rc.paths.out_dir = a.out_dir;
  if (given("--steps")) rc.train.steps = a.steps;
  if (given("--seed")) rc.train.seed = a.seed;
  if (given("--lr")) rc.train.lr = a.lr;
  if (given("--batch-size")) rc.train.batch_size = a.batch_size;
  if (given("--log-every")) rc.train.log_every = a.log_every;
  rc.train.workers = default_workers();

  if (rc.paths.data.empty()) {
    throw UsageError("train needs --data (or paths.data in the config)");
  }
  const bool needs_ref = requires_reference(rc.loss.method);
  if (needs_ref && rc.paths.ref.empty()) {
    throw ConfigError(std::string(method_name(rc.loss.method)) + " requires --ref <policy file>");
  }

  const PolicyParams init = rc.paths.policy.empty() ? make_initial_policy(rc.policy) : load_policy(rc.paths.policy);
  const Dataset data = load_jsonl(rc.paths.data, init.vocab_size());
  std::optional<PolicyParams> ref;
  if (!rc.paths.ref.empty()) {
    ref = load_policy(rc.paths.ref);
    if (ref->vocab_size() != init.vocab_size()) {
      throw ValidationError("reference policy vocabulary differs from the trained policy");
    }
  }

  std::vector<std::string> header{"method=" + std::string(method_name(rc.loss.method))};
  if (is_ratio_margin_method(rc.loss.method)) {
    if (rc.xi.auto_t) {
      rc.loss.xi = select_xi(compute_gaps(data, init), *rc.xi.auto_t);
      header.push_back("xi_t=" + nlohmann::json(*rc.xi.auto_t).dump());
    }
    if (rc.loss.xi) {
      header.push_back("xi=" + nlohmann::json(*rc.loss.xi).dump());
    }
  }
  header.push_back("steps=" + std::to_string(rc.train.steps));
  header.push_back("seed=" + std::to_string(rc.train.seed));

  const auto result = train(init, data, rc.loss, rc.train, ref ? &*ref : nullptr);
  const auto dir = prepare_out_dir(rc.paths.out_dir);
  write_text(dir / "trainlog.csv", train_log_csv(result.log, header));
  save_policy(result.params, (dir / "checkpoint.json").string());

  const auto& first = result.log.records.front();
  const auto& last = result.log.records.back();
  ojson j;
  j["method"] = method_name(rc.loss.method);
  j["xi"] = rc.loss.xi ? ojson(*rc.loss.xi) : ojson();
  j["steps"] = rc.train.steps;
  j["skipped_steps"] = result.log.skipped_steps;
  j["initial"] = {{"chosen_reward", first.chosen_reward},
                  {"rejected_reward", first.rejected_reward},
                  {"mean_m", first.mean_m}};
  j["final"] = {{"chosen_reward", last.chosen_reward},
                {"rejected_reward", last.rejected_reward},
                {"mean_m", last.mean_m}};
  out << j.dump() << '\n';
  return kOk;
}

// -------------------------------------------------------------- grad-check

struct GradCheckArgs {
  std::string methods = "all";
  std::size_t trials = 20;
  double tol = 1e-4;
  std::uint64_t seed = 0;
  int vocab = 8;
  double step = 1e-5;
};

int cmd_grad_check(const GradCheckArgs& a, std::ostream& out) {
  const auto methods = parse_methods(a.methods);
  const auto results = run_grad_check(methods, a.trials, a.vocab, a.seed, a.step);
  bool pass = true;
  ojson j;
  j["tol"] = a.tol;
  j["trials"] = a.trials;
  auto arr = ojson::array();
  for (const auto& r : results) {
    const bool ok = r.max_rel_error <= a.tol;
    pass = pass && ok;
    arr.push_back({{"method", method_name(r.method)}, {"max_rel_error", r.max_rel_error}, {"pass", ok}});
  }
  j["methods"] = std::move(arr);
  j["pass"] = pass;
  out << j.dump(2) << '\n';
  return pass ? kOk : kCheckFailed;
}

// ------------------------------------------------------------- equiv-check

struct EquivArgs {
  std::string data;
  std::string policy;
  std::string ref;
  double beta = 2.0;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  int vocab = 8;
};

int cmd_equiv_check(const EquivArgs& a, std::ostream& out) {
  if (!(a.beta > 0.0)) {
    throw UsageError("--beta must be positive");
  }
  EquivalenceReport total;
  if (!a.data.empty() || !a.policy.empty() || !a.ref.empty()) {
    if (a.data.empty() || a.policy.empty() || a.ref.empty()) {
      throw UsageError("equiv-check on files needs --data, --policy and --ref together");
    }
    const auto policy = load_policy(a.policy);
    const auto ref = load_policy(a.ref);
    total = equivalence_check(policy, ref, load_jsonl(a.data, policy.vocab_size()), a.beta);
  } else {
    // Random sweep: an independent (policy, ref, pair) per trial.
    Rng rng(a.seed);
    for (std::size_t i = 0; i < a.trials; ++i) {
      const auto inst = random_instance(Method::dpo_lennorm, a.vocab, rng);
      Dataset ds{{inst.pair}, a.vocab};
      const auto rep = equivalence_check(inst.policy, inst.ref, ds, a.beta);
      total.max_discrepancy = std::max(total.max_discrepancy, rep.max_discrepancy);
      total.checked += rep.checked;
      total.skipped += rep.skipped;
    }
  }
  const bool pass = total.max_discrepancy <= kEquivalenceTolerance;
  ojson j;
  j["beta"] = a.beta;
  j["max_discrepancy"] = total.max_discrepancy;
  j["checked"] = total.checked;
  j["skipped"] = total.skipped;
  j["tol"] = kEquivalenceTolerance;
  j["pass"] = pass;
  out << j.dump() << '\n';
  return pass ? kOk : kCheckFailed;
}

// ---------------------------------------------------------- analyze-filter

struct FilterArgs {
  std::string data;
  std::string policy;
  double beta = 2.0;
  double gamma = 0.0;
  double epsilon = 0.01;
  std::optional<double> lower;
  std::optional<double> upper;
  std::string out;
};

int cmd_analyze_filter(const FilterArgs& a, std::ostream& out) {
  if (a.lower.has_value() != a.upper.has_value()) {
    throw UsageError("--lower and --upper must be given together");
  }
  const auto policy = load_policy(a.policy);
  const auto data = load_jsonl(a.data, policy.vocab_size());
  std::optional<std::pair<double, double>> thresholds;
  if (a.lower) {
    thresholds = std::make_pair(*a.lower, *a.upper);
  }
  const auto report = filter_report(reward_gaps(data, policy), a.beta, a.gamma, a.epsilon, thresholds);
  const std::string text = filter_report_json(report);
  if (!a.out.empty()) {
    write_text(a.out, text + "\n");
  }
  out << text << '\n';
  return kOk;
}

// --------------------------------------------------------------- decompose

struct DecomposeArgs {
  std::string data;
  std::string policy;
  std::size_t index = 0;
  double beta = 2.0;
  double gamma = 0.5;
};

int cmd_decompose(const DecomposeArgs& a, std::ostream& out) {
  const auto policy = load_policy(a.policy);
  const auto data = load_jsonl(a.data, policy.vocab_size());
  if (a.index >= data.pairs.size()) {
    throw UsageError("--index beyond the dataset size");
  }
  const auto& pair = data.pairs[a.index];
  const auto terms = token_decompose(policy, pair, a.beta, a.gamma);
  double sum = 0.0;
  for (double t : terms) {
    sum += t;
  }
  const auto rb_a = length_norm_reward(policy, pair.prompt, pair.chosen);
  const auto rb_b = length_norm_reward(policy, pair.prompt, pair.rejected);
  ojson j;
  j["index"] = a.index;
  j["beta"] = a.beta;
  j["gamma"] = a.gamma;
  j["terms"] = terms;
  j["sum"] = sum;
  j["sequence_argument"] = a.beta * rb_a - a.beta * rb_b - a.gamma;
  out << j.dump() << '\n';
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kUsage;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const Error*>(&e)) return kValidation;
  return kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ratio-margin preference optimisation toolkit", "xidpo"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic preference dataset (JSONL)");
  gen_cmd->add_option("--config", gen.config, "JSON config with generator/policy sections");
  gen_cmd->add_option("--out", gen.out, "Output JSONL path")->required();
  gen_cmd->add_option("--n", gen.n, "Number of prompts")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--vocab", gen.vocab, "Vocabulary size")->check(CLI::Range(2, 1 << 16));
  gen_cmd->add_option("--k", gen.k, "Candidates per prompt (>= 2)")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  gen_cmd->add_option("--noise", gen.noise, "Scorer noise standard deviation")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--prompt-len", gen.prompt_len, "Prompt length")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--resp-len", gen.resp_len, "Response length")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--scorer-scale", gen.scorer_scale, "Scorer weight sd (0 = pure-noise ranking)")
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--policy-in", gen.policy_in, "Sample from this policy instead of a random one");
  gen_cmd->add_option("--policy-out", gen.policy_out, "Write the base policy here");
  gen_cmd->add_option("--policy-scale", gen.policy_scale, "Logit sd of the random base policy")
      ->check(CLI::NonNegativeNumber);

  AnalyzeGapsArgs gaps;
  auto* gaps_cmd = app.add_subcommand("analyze-gaps", "Ratio-margin quantiles, histogram and CDF");
  gaps_cmd->add_option("--data", gaps.data)->required();
  gaps_cmd->add_option("--policy", gaps.policy)->required();
  gaps_cmd->add_option("--bins", gaps.bins)->check(CLI::PositiveNumber);
  gaps_cmd->add_option("--quantiles", gaps.quantiles, "Comma separated levels");
  gaps_cmd->add_option("--t", gaps.t, "Also select xi at this level")->check(CLI::Range(0.0, 1.0));
  gaps_cmd->add_option("--out-dir", gaps.out_dir);

  SelectXiArgs sel;
  auto* sel_cmd = app.add_subcommand("select-xi", "xi as a quantile of the initial margin distribution");
  sel_cmd->add_option("--data", sel.data)->required();
  sel_cmd->add_option("--policy", sel.policy)->required();
  sel_cmd->add_option("--t", sel.t)->required()->check(CLI::Range(0.0, 1.0));

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a policy on a preference dataset");
  train_cmd->add_option("--config", tr.config);
  train_cmd->add_option("--data", tr.data);
  train_cmd->add_option("--loss", tr.loss, "Loss method");
  train_cmd->add_option("--xi", tr.xi, "xi value or auto:<t>");
  train_cmd->add_option("--ref", tr.ref, "Reference policy file");
  train_cmd->add_option("--policy", tr.policy, "Initial policy file");
  train_cmd->add_option("--out-dir", tr.out_dir);
  train_cmd->add_option("--steps", tr.steps);
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--lr", tr.lr)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", tr.batch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--log-every", tr.log_every)->check(CLI::PositiveNumber);

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "Analytic vs finite-difference gradients");
  gc_cmd->add_option("--methods", gc.methods, "all or a comma separated list");
  gc_cmd->add_option("--trials", gc.trials)->check(CLI::PositiveNumber);
  gc_cmd->add_option("--tol", gc.tol)->check(CLI::NonNegativeNumber);
  gc_cmd->add_option("--seed", gc.seed);
  gc_cmd->add_option("--vocab", gc.vocab)->check(CLI::Range(2, 64));
  gc_cmd->add_option("--step", gc.step)->check(CLI::PositiveNumber);

  EquivArgs eq;
  auto* eq_cmd = app.add_subcommand("equiv-check", "Length-normalised DPO vs SimPO with implied gamma");
  eq_cmd->add_option("--data", eq.data);
  eq_cmd->add_option("--policy", eq.policy);
  eq_cmd->add_option("--ref", eq.ref);
  eq_cmd->add_option("--beta", eq.beta);
  eq_cmd->add_option("--trials", eq.trials)->check(CLI::PositiveNumber);
  eq_cmd->add_option("--seed", eq.seed);
  eq_cmd->add_option("--vocab", eq.vocab)->check(CLI::Range(2, 64));

  FilterArgs fl;
  auto* fl_cmd = app.add_subcommand("analyze-filter", "Sigmoid-gradient filtering by beta");
  fl_cmd->add_option("--data", fl.data)->required();
  fl_cmd->add_option("--policy", fl.policy)->required();
  fl_cmd->add_option("--beta", fl.beta)->check(CLI::PositiveNumber);
  fl_cmd->add_option("--gamma", fl.gamma);
  fl_cmd->add_option("--epsilon", fl.epsilon)->check(CLI::PositiveNumber);
  fl_cmd->add_option("--lower", fl.lower);
  fl_cmd->add_option("--upper", fl.upper);
  fl_cmd->add_option("--out", fl.out, "Also write the report here");

  DecomposeArgs dc;
  auto* dc_cmd = app.add_subcommand("decompose", "Per-token split of the SimPO argument");
  dc_cmd->add_option("--data", dc.data)->required();
  dc_cmd->add_option("--policy", dc.policy)->required();
  dc_cmd->add_option("--index", dc.index);
  dc_cmd->add_option("--beta", dc.beta)->check(CLI::PositiveNumber);
  dc_cmd->add_option("--gamma", dc.gamma);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(*gen_cmd, gen, out);
    if (gaps_cmd->parsed()) return cmd_analyze_gaps(gaps, out);
    if (sel_cmd->parsed()) return cmd_select_xi(sel, out);
    if (train_cmd->parsed()) return cmd_train(*train_cmd, tr, out);
    if (gc_cmd->parsed()) return cmd_grad_check(gc, out);
    if (eq_cmd->parsed()) return cmd_equiv_check(eq, out);
    if (fl_cmd->parsed()) return cmd_analyze_filter(fl, out);
    if (dc_cmd->parsed()) return cmd_decompose(dc, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kUsage;
}

}  // namespace xidpo::cli
