#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdpo/rollout.hpp"

namespace pdpo {

/// A schema violation; `path()` is the dotted location of the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error("config field '" + path + "': " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Instance family for one benchmark. Chain length is drawn per instance from
/// [chain_min, chain_max]; max_steps is chain length + slack.
struct BenchmarkConfig {
  int n_train = 500;
  int n_dev = 200;
  int n_test = 200;
  int n_atoms = 24;
  int chain_min = 3;
  int chain_max = 5;
  int n_distractors = 5;
  int n_dead_ends = 3;
  int n_options = 4;
  int n_base_facts = 3;
  int max_arity = 2;
  int slack = 2;
  std::uint64_t seed = 20240501;
};

struct SftConfig {
  int n_demos = 50;
  double lr = 0.5;
  int epochs = 5;
  int batch = 16;
};

struct SampleConfig {
  int n_samples = 10;
  double temperature = 0.7;
};

struct EstimateConfig {
  int k = 10;
  int stride = 1;
  Anchor anchor = Anchor::action;
  double temperature = 0.7;
};

struct PrmConfig {
  double lr = 0.5;
  int epochs = 20;
  int batch = 64;
};

struct PrefsConfig {
  double sigma = 0.5;
  int confidence_floor = 2;  // C
};

struct DpoConfig {
  double beta = 0.1;
  double lr = 0.2;
  int epochs = 10;
  int batch = 32;
};

struct EvalConfig {
  int sc_n = 5;
  double sc_temperature = 1.0;
  int mcts_budget = 100;
  double c_uct = std::sqrt(2.0);
  double mcts_rollout_temperature = 1.0;
  int mcts_instances = 200;  // first N test instances
};

struct AblationConfig {
  std::vector<double> sigmas{0.3, 0.5, 0.7};
  std::vector<double> data_ratios{0.4, 0.6, 0.8, 1.0};
};

struct Config {
  BenchmarkConfig benchmark;
  int n_rule_slots = 16;
  SftConfig sft;
  SampleConfig sample;
  EstimateConfig estimate;
  PrmConfig prm;
  PrefsConfig prefs;
  DpoConfig dpo;
  EvalConfig eval;
  AblationConfig ablation;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

namespace detail {

using nlohmann::json;

/// Reads members of one JSON object, rejecting unknown keys.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void integer(const std::string& key, int& out, int min) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < min || x > 1'000'000'000) throw ConfigError(field(key), "must be >= " + std::to_string(min));
      out = static_cast<int>(x);
    }
  }

  void seed(const std::string& key, std::uint64_t& out) {
    if (const json* v = get(key)) out = read_seed(*v, field(key));
  }

  void real(const std::string& key, double& out, double lo, double hi, bool lo_open) {
    if (const json* v = get(key)) {
      if (!v->is_number()) throw ConfigError(field(key), "expected a number");
      const double x = v->get<double>();
      if (!std::isfinite(x) || x > hi || (lo_open ? x <= lo : x < lo))
        throw ConfigError(field(key), "out of range (" + std::string(lo_open ? "(" : "[") + std::to_string(lo) +
                                          ", " + std::to_string(hi) + "])");
      out = x;
    }
  }

  void positive(const std::string& key, double& out) { real(key, out, 0.0, 1e9, true); }

  ObjectReader child(const std::string& key, const json& fallback) {
    const json* v = get(key);
    return ObjectReader(v ? *v : fallback, field(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
  }

  static std::uint64_t read_seed(const json& v, const std::string& where) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(where, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<double> read_fraction_list(const json* v, const std::string& where, bool open_zero) {
  if (!v->is_array() || v->empty()) throw ConfigError(where, "expected a non-empty array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    const json& x = (*v)[i];
    const std::string at = where + "[" + std::to_string(i) + "]";
    if (!x.is_number()) throw ConfigError(at, "expected a number");
    const double d = x.get<double>();
    if (d > 1.0 || (open_zero ? d <= 0.0 : d < 0.0)) throw ConfigError(at, "must lie in " + std::string(open_zero ? "(0, 1]" : "[0, 1]"));
    out.push_back(d);
  }
  return out;
}

}  // namespace detail

/// Builds a Config from a JSON tree. Absent fields keep their defaults; unknown
/// fields and out-of-range values raise ConfigError naming the field.
inline Config config_from_json(const nlohmann::json& j) {
  static const nlohmann::json empty = nlohmann::json::object();
  Config c;
  detail::ObjectReader root(j, "");

  {
    auto r = root.child("benchmark", empty);
    auto& b = c.benchmark;
    r.integer("n_train", b.n_train, 1);
    r.integer("n_dev", b.n_dev, 1);
    r.integer("n_test", b.n_test, 1);
    r.integer("n_atoms", b.n_atoms, 2);
    r.integer("chain_min", b.chain_min, 1);
    r.integer("chain_max", b.chain_max, 1);
    r.integer("n_distractors", b.n_distractors, 0);
    r.integer("n_dead_ends", b.n_dead_ends, 0);
    r.integer("n_options", b.n_options, 2);
    r.integer("n_base_facts", b.n_base_facts, 1);
    r.integer("max_arity", b.max_arity, 1);
    r.integer("slack", b.slack, 1);
    r.seed("seed", b.seed);
    r.finish();
    if (b.chain_max < b.chain_min) throw ConfigError(r.field("chain_max"), "must be >= chain_min");
  }
  root.integer("n_rule_slots", c.n_rule_slots, 0);
  {
    auto r = root.child("sft", empty);
    r.integer("n_demos", c.sft.n_demos, 1);
    r.positive("lr", c.sft.lr);
    r.integer("epochs", c.sft.epochs, 0);
    r.integer("batch", c.sft.batch, 1);
    r.finish();
    if (c.sft.n_demos > c.benchmark.n_train) throw ConfigError(r.field("n_demos"), "exceeds benchmark.n_train");
  }
  {
    auto r = root.child("sample", empty);
    r.integer("n_samples", c.sample.n_samples, 1);
    r.positive("temperature", c.sample.temperature);
    r.finish();
  }
  {
    auto r = root.child("estimate", empty);
    r.integer("k", c.estimate.k, 1);
    r.integer("stride", c.estimate.stride, 1);
    r.positive("temperature", c.estimate.temperature);
    if (const auto* v = r.get("anchor")) {
      try {
        c.estimate.anchor = parse_anchor(v->is_string() ? v->get<std::string>() : std::string{});
      } catch (const std::exception&) {
        throw ConfigError(r.field("anchor"), "expected one of \"action\", \"state\", \"both\"");
      }
    }
    r.finish();
  }
  {
    auto r = root.child("prm", empty);
    r.positive("lr", c.prm.lr);
    r.integer("epochs", c.prm.epochs, 0);
    r.integer("batch", c.prm.batch, 1);
    r.finish();
  }
  {
    auto r = root.child("prefs", empty);
    r.real("sigma", c.prefs.sigma, 0.0, 1.0, false);
    r.integer("C", c.prefs.confidence_floor, 0);
    r.finish();
    if (c.prefs.confidence_floor > c.estimate.k) throw ConfigError(r.field("C"), "exceeds estimate.k");
  }
  {
    auto r = root.child("dpo", empty);
    r.positive("beta", c.dpo.beta);
    r.positive("lr", c.dpo.lr);
    r.integer("epochs", c.dpo.epochs, 1);
    r.integer("batch", c.dpo.batch, 1);
    r.finish();
  }
  {
    auto r = root.child("eval", empty);
    r.integer("sc_n", c.eval.sc_n, 1);
    r.positive("sc_temperature", c.eval.sc_temperature);
    r.integer("mcts_budget", c.eval.mcts_budget, 1);
    r.real("c_uct", c.eval.c_uct, 0.0, 1e6, false);
    r.positive("mcts_rollout_temperature", c.eval.mcts_rollout_temperature);
    r.integer("mcts_instances", c.eval.mcts_instances, 0);
    r.finish();
  }
  {
    auto r = root.child("ablation", empty);
    if (const auto* v = r.get("sigmas")) c.ablation.sigmas = detail::read_fraction_list(v, r.field("sigmas"), false);
    if (const auto* v = r.get("data_ratios"))
      c.ablation.data_ratios = detail::read_fraction_list(v, r.field("data_ratios"), true);
    r.finish();
  }
  if (const auto* v = root.get("seeds")) {
    if (!v->is_array() || v->empty()) throw ConfigError("seeds", "expected a non-empty array of integers");
    c.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i)
      c.seeds.push_back(detail::ObjectReader::read_seed((*v)[i], "seeds[" + std::to_string(i) + "]"));
  }
  root.finish();
  return c;
}

inline nlohmann::json config_to_json(const Config& c) {
  const auto& b = c.benchmark;
  return {
      {"benchmark",
       {{"n_train", b.n_train}, {"n_dev", b.n_dev}, {"n_test", b.n_test}, {"n_atoms", b.n_atoms},
        {"chain_min", b.chain_min}, {"chain_max", b.chain_max}, {"n_distractors", b.n_distractors},
        {"n_dead_ends", b.n_dead_ends}, {"n_options", b.n_options}, {"n_base_facts", b.n_base_facts},
        {"max_arity", b.max_arity}, {"slack", b.slack}, {"seed", b.seed}}},
      {"n_rule_slots", c.n_rule_slots},
      {"sft", {{"n_demos", c.sft.n_demos}, {"lr", c.sft.lr}, {"epochs", c.sft.epochs}, {"batch", c.sft.batch}}},
      {"sample", {{"n_samples", c.sample.n_samples}, {"temperature", c.sample.temperature}}},
      {"estimate",
       {{"k", c.estimate.k},
        {"stride", c.estimate.stride},
        {"anchor", to_string(c.estimate.anchor)},
        {"temperature", c.estimate.temperature}}},
      {"prm", {{"lr", c.prm.lr}, {"epochs", c.prm.epochs}, {"batch", c.prm.batch}}},
      {"prefs", {{"sigma", c.prefs.sigma}, {"C", c.prefs.confidence_floor}}},
      {"dpo", {{"beta", c.dpo.beta}, {"lr", c.dpo.lr}, {"epochs", c.dpo.epochs}, {"batch", c.dpo.batch}}},
      {"eval",
       {{"sc_n", c.eval.sc_n},
        {"sc_temperature", c.eval.sc_temperature},
        {"mcts_budget", c.eval.mcts_budget},
        {"c_uct", c.eval.c_uct},
        {"mcts_rollout_temperature", c.eval.mcts_rollout_temperature},
        {"mcts_instances", c.eval.mcts_instances}}},
      {"ablation", {{"sigmas", c.ablation.sigmas}, {"data_ratios", c.ablation.data_ratios}}},
      {"seeds", c.seeds},
  };
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<file>", std::string("parse error: ") + e.what());
  }
  return config_from_json(j);
}

}  // namespace pdpo
