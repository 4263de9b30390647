#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdpo/config.hpp"
#include "pdpo/env.hpp"
#include "pdpo/eval.hpp"
#include "pdpo/io.hpp"
#include "pdpo/mcts.hpp"
#include "pdpo/policy.hpp"
#include "pdpo/prefs.hpp"
#include "pdpo/prm.hpp"
#include "pdpo/rollout.hpp"
#include "pdpo/trainer.hpp"

namespace pdpo::pipeline {

namespace fs = std::filesystem;

/// Raised for any stage failure; carries the stage name for diagnostics.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"gen-data",    "sft",       "sample", "estimate",     "train-prm",
                                              "build-prefs", "train-dpo", "eval",   "ablate-sigma", "ablate-data-ratio"};
  return names;
}

enum class DpoVariant { dpo, pdpo, both };

inline DpoVariant parse_variant(const std::string& s) {
  if (s == "dpo") return DpoVariant::dpo;
  if (s == "pdpo") return DpoVariant::pdpo;
  if (s == "both") return DpoVariant::both;
  throw std::invalid_argument("unknown train-dpo variant '" + s + "' (expected dpo, pdpo or both)");
}

// ---------------------------------------------------------------------------
// Layout

struct Layout {
  fs::path root;

  fs::path data(const std::string& split) const { return root / "data" / (split + ".jsonl"); }
  fs::path seed_dir(std::uint64_t seed) const { return root / ("seed-" + std::to_string(seed)); }
  fs::path sft(std::uint64_t s) const { return seed_dir(s) / "sft.policy"; }
  fs::path sft_metrics(std::uint64_t s) const { return seed_dir(s) / "sft_metrics.csv"; }
  fs::path seeds(std::uint64_t s) const { return seed_dir(s) / "seed_trajectories.jsonl"; }
  fs::path records(std::uint64_t s) const { return seed_dir(s) / "prm_records.jsonl"; }
  fs::path prm(std::uint64_t s) const { return seed_dir(s) / "prm.params"; }
  fs::path prm_metrics(std::uint64_t s) const { return seed_dir(s) / "prm_metrics.csv"; }
  fs::path pairs(std::uint64_t s, const std::string& which) const {
    return seed_dir(s) / ("pairs_" + which + ".jsonl");
  }
  fs::path policy(std::uint64_t s, const std::string& method) const { return seed_dir(s) / (method + ".policy"); }
  fs::path train_metrics(std::uint64_t s, const std::string& method) const {
    return seed_dir(s) / (method + "_metrics.csv");
  }
  fs::path checkpoint(std::uint64_t s, const std::string& method, int epoch) const {
    char name[64];
    std::snprintf(name, sizeof name, "%s-epoch-%03d.policy", method.c_str(), epoch);
    return seed_dir(s) / "checkpoints" / name;
  }
  fs::path eval_metrics() const { return root / "eval_metrics.csv"; }
  fs::path eval_summary() const { return root / "eval_summary.csv"; }
  fs::path ablate_sigma() const { return root / "ablate_sigma.csv"; }
  fs::path ablate_data_ratio() const { return root / "ablate_data_ratio.csv"; }
  fs::path manifest() const { return root / "manifest.json"; }
};

// ---------------------------------------------------------------------------
// Manifest: artifact -> stage, seed, config hash, input hashes, own hash.

inline std::string config_hash(const Config& c) { return hex64(fnv1a(config_to_json(c).dump())); }

class Manifest {
 public:
  explicit Manifest(const Layout& layout) : layout_(layout) {
    if (fs::exists(layout.manifest())) doc_ = json::parse(read_file(layout.manifest()));
    if (!doc_.is_object()) doc_ = json::object();
    if (!doc_.contains("artifacts")) doc_["artifacts"] = json::object();
  }

  void record(const fs::path& artifact, const std::string& stage, const Config& cfg, std::optional<std::uint64_t> seed,
              const std::vector<fs::path>& inputs) {
    json in = json::object();
    for (const auto& p : inputs) in[rel(p)] = file_hash(p);
    doc_["config_hash"] = config_hash(cfg);
    doc_["config"] = config_to_json(cfg);
    doc_["artifacts"][rel(artifact)] = {{"stage", stage},
                                        {"seed", seed ? json(*seed) : json(nullptr)},
                                        {"config_hash", config_hash(cfg)},
                                        {"inputs", in},
                                        {"hash", file_hash(artifact)}};
  }

  void save() const {
    std::ofstream out(layout_.manifest(), std::ios::binary);
    if (!out) throw IoError("cannot write " + layout_.manifest().string());
    out << doc_.dump(2) << '\n';
  }

 private:
  std::string rel(const fs::path& p) const { return fs::relative(p, layout_.root).generic_string(); }

  const Layout& layout_;
  json doc_;
};

// ---------------------------------------------------------------------------
// Shared helpers

inline std::string instance_id(const std::string& split, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05d", split.c_str(), i);
  return buf;
}

/// Instance i of a split is a pure function of (benchmark seed, split, i).
inline Dataset generate_split(const BenchmarkConfig& b, const std::string& split, int n) {
  std::vector<Instance> items(static_cast<std::size_t>(n));
  parallel_for(items.size(), [&](std::size_t i) {
    const std::string id = instance_id(split, static_cast<int>(i));
    Rng rng(stream_seed(b.seed, id, 0, "gen"));
    GeneratorSpec spec;
    spec.chain_length = static_cast<int>(rng.range(b.chain_min, b.chain_max));
    spec.n_distractors = b.n_distractors;
    spec.n_rules = spec.chain_length + b.n_distractors + b.n_dead_ends;
    spec.n_atoms = b.n_atoms;
    spec.n_options = b.n_options;
    spec.n_base_facts = b.n_base_facts;
    spec.max_arity = b.max_arity;
    spec.max_steps = spec.chain_length + b.slack;
    items[i] = generate_instance(spec, rng.next(), id);
  });
  return Dataset(std::move(items));
}

inline PolicyFeatureSpace policy_space(const Config& c) { return {c.benchmark.n_options, c.n_rule_slots}; }
inline PrmFeatureSpace prm_space(const Config& c) { return PrmFeatureSpace{c.n_rule_slots}; }

inline void ensure_dir(const fs::path& p) { fs::create_directories(p); }

/// The instances whose ids appear in `keep`, in dataset order.
inline Dataset restrict(const Dataset& ds, const std::set<std::string>& keep) {
  std::vector<Instance> items;
  for (const auto& inst : ds)
    if (keep.count(inst.id)) items.push_back(inst);
  return Dataset(std::move(items));
}

/// A seeded subset holding round(ratio * |train|) instance ids.
inline std::set<std::string> question_subset(const Dataset& train, double ratio, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& inst : train) ids.push_back(inst.id);
  Rng rng(mix_seed(seed, fnv1a("question-subset")));
  rng.shuffle(ids);
  const auto n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(ids.size())));
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n, ids.size()))};
}

struct PairSets {
  std::vector<PreferencePair> outcome;  // deduplicated
  std::vector<PreferencePair> process;
  std::vector<PreferencePair> merged;
};

inline PairSets make_pairs(const Config& c, const std::vector<Trajectory>& seeds, const Dataset& train,
                           const PRMParams& prm, double sigma) {
  PairSets p;
  p.outcome = merge_pref_datasets(build_outcome_pairs(seeds, train), {});
  p.process = build_process_pairs(seeds, train, prm, c.prefs.confidence_floor, sigma, c.estimate.anchor);
  p.merged = merge_pref_datasets(p.outcome, p.process);
  return p;
}

inline PrmHyper prm_hyper(const Config& c, std::uint64_t seed) {
  PrmHyper h;
  h.lr = c.prm.lr;
  h.epochs = c.prm.epochs;
  h.batch = c.prm.batch;
  h.seed = seed;
  return h;
}

inline TrainConfig dpo_config(const Config& c, std::uint64_t seed) {
  TrainConfig t;
  t.beta = c.dpo.beta;
  t.lr = c.dpo.lr;
  t.epochs = c.dpo.epochs;
  t.batch = c.dpo.batch;
  t.seed = seed;
  return t;
}

inline DpoResult run_dpo(const Config& c, std::uint64_t seed, const PolicyParams& init,
                         const std::vector<PreferencePair>& pairs, const Dataset& train, const Dataset& dev,
                         const std::function<void(int, const PolicyParams&)>& on_epoch = {}) {
  return train_dpo(
      init, pairs, train, dpo_config(c, seed), [&](const PolicyParams& p) { return evaluate_greedy(p, dev).accuracy; },
      on_epoch);
}

struct MeanSd {
  double mean = 0;
  double sd = 0;
};

/// Mean and sample standard deviation (0 for a single value).
inline MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Stages

inline void gen_data(const Config& c, const Layout& L) {
  const int max_rules = c.benchmark.chain_max + c.benchmark.n_distractors + c.benchmark.n_dead_ends;
  if (max_rules > c.n_rule_slots)
    throw ConfigError("n_rule_slots", "instances may carry " + std::to_string(max_rules) + " rules");
  ensure_dir(L.root / "data");
  Manifest m(L);
  const std::pair<const char*, int> splits[] = {
      {"train", c.benchmark.n_train}, {"dev", c.benchmark.n_dev}, {"test", c.benchmark.n_test}};
  for (const auto& [name, n] : splits) {
    write_jsonl(L.data(name), generate_split(c.benchmark, name, n).items());
    m.record(L.data(name), "gen-data", c, std::nullopt, {});
  }
  m.save();
}

/// Demonstrations are oracle solutions for a seeded subset of train questions.
inline void sft(const Config& c, const Layout& L, std::uint64_t seed) {
  const Dataset train = read_instances(L.data("train"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, fnv1a("demos")));
  rng.shuffle(order);
  std::vector<Trajectory> demos;
  for (int i = 0; i < c.sft.n_demos && i < static_cast<int>(order.size()); ++i)
    demos.push_back(oracle_solve(train[order[static_cast<std::size_t>(i)]]));

  TrainConfig t;
  t.lr = c.sft.lr;
  t.epochs = c.sft.epochs;
  t.batch = c.sft.batch;
  t.seed = seed;
  const SftResult r = train_sft(policy_space(c), demos, train, t);

  ensure_dir(L.seed_dir(seed));
  save_policy(L.sft(seed), r.params);
  {
    CsvWriter csv(L.sft_metrics(seed), {"epoch", "split", "loss"});
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
      csv.row({std::to_string(e), "train", fmt_num(r.epoch_loss[e])});
  }
  Manifest m(L);
  m.record(L.sft(seed), "sft", c, seed, {L.data("train")});
  m.record(L.sft_metrics(seed), "sft", c, seed, {L.data("train")});
  m.save();
}

inline void sample(const Config& c, const Layout& L, std::uint64_t seed) {
  const Dataset train = read_instances(L.data("train"));
  const PolicyParams policy = load_policy(L.sft(seed));
  write_jsonl(L.seeds(seed),
              collect_seed_trajectories(policy, train, c.sample.n_samples, c.sample.temperature, seed));
  Manifest m(L);
  m.record(L.seeds(seed), "sample", c, seed, {L.data("train"), L.sft(seed)});
  m.save();
}

inline void estimate(const Config& c, const Layout& L, std::uint64_t seed) {
  const Dataset train = read_instances(L.data("train"));
  const PolicyParams policy = load_policy(L.sft(seed));
  const auto seeds = read_trajectories(L.seeds(seed), train);
  write_jsonl(L.records(seed), build_prm_dataset(policy, train, seeds, c.estimate.k, c.estimate.stride,
                                                 c.estimate.anchor, c.estimate.temperature, seed));
  Manifest m(L);
  m.record(L.records(seed), "estimate", c, seed, {L.data("train"), L.sft(seed), L.seeds(seed)});
  m.save();
}

inline void train_prm_stage(const Config& c, const Layout& L, std::uint64_t seed) {
  const Dataset train = read_instances(L.data("train"));
  const auto seeds = read_trajectories(L.seeds(seed), train);
  const auto records = read_records(L.records(seed));
  const PrmTrainResult r = prm_train(records, train, seeds, prm_space(c), prm_hyper(c, seed));
  save_prm(L.prm(seed), r.params);
  {
    CsvWriter csv(L.prm_metrics(seed), {"epoch", "split", "loss"});
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
      csv.row({std::to_string(e), "train", fmt_num(r.epoch_loss[e])});
  }
  Manifest m(L);
  const std::vector<fs::path> in{L.data("train"), L.seeds(seed), L.records(seed)};
  m.record(L.prm(seed), "train-prm", c, seed, in);
  m.record(L.prm_metrics(seed), "train-prm", c, seed, in);
  m.save();
}

inline void build_prefs(const Config& c, const Layout& L, std::uint64_t seed) {
  const Dataset train = read_instances(L.data("train"));
  const auto seeds = read_trajectories(L.seeds(seed), train);
  const PRMParams prm = load_prm(L.prm(seed));
  const PairSets p = make_pairs(c, seeds, train, prm, c.prefs.sigma);
  write_jsonl(L.pairs(seed, "outcome"), p.outcome);
  write_jsonl(L.pairs(seed, "process"), p.process);
  write_jsonl(L.pairs(seed, "merged"), p.merged);
  Manifest m(L);
  for (const char* which : {"outcome", "process", "merged"})
    m.record(L.pairs(seed, which), "build-prefs", c, seed, {L.data("train"), L.seeds(seed), L.prm(seed)});
  m.save();
}

inline void train_dpo_stage(const Config& c, const Layout& L, std::uint64_t seed, DpoVariant variant) {
  const Dataset train = read_instances(L.data("train"));
  const Dataset dev = read_instances(L.data("dev"));
  const auto seeds = read_trajectories(L.seeds(seed), train);
  const PolicyParams init = load_policy(L.sft(seed));
  Manifest m(L);
  auto run = [&](const std::string& method, const std::string& pair_file) {
    const auto pairs = read_pairs(L.pairs(seed, pair_file), seeds);
    ensure_dir(L.seed_dir(seed) / "checkpoints");
    const DpoResult r = run_dpo(c, seed, init, pairs, train, dev, [&](int epoch, const PolicyParams& p) {
      save_policy(L.checkpoint(seed, method, epoch), p);
    });
    save_policy(L.policy(seed, method), r.params);
    {
      CsvWriter csv(L.train_metrics(seed, method), {"epoch", "split", "loss", "preference_accuracy", "dev_accuracy"});
      for (const auto& e : r.metrics)
        csv.row({std::to_string(e.epoch), "train", fmt_num(e.loss), fmt_num(e.preference_accuracy),
                 e.dev_accuracy ? fmt_num(*e.dev_accuracy) : std::string{}});
    }
    const std::vector<fs::path> in{L.data("train"), L.data("dev"), L.seeds(seed), L.sft(seed),
                                   L.pairs(seed, pair_file)};
    m.record(L.policy(seed, method), "train-dpo", c, seed, in);
    m.record(L.train_metrics(seed, method), "train-dpo", c, seed, in);
  };
  if (variant != DpoVariant::pdpo) run("dpo", "outcome");
  if (variant != DpoVariant::dpo) run("pdpo", "merged");
  m.save();
}

template <typename Fn>
double elapsed_seconds(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct EvalRow {
  std::string method;
  std::string decode;
  std::uint64_t seed = 0;
  AccuracyReport report;
  PlanningCost cost;
};

inline const std::vector<std::string>& eval_header() {
  static const std::vector<std::string> h{"method",    "decode",        "dataset_split", "seed",
                                          "accuracy",  "n_valid",       "n_invalid",     "n_instances",
                                          "n_policy_evals", "n_env_steps", "wall_time"};
  return h;
}

/// Greedy and self-consistency accuracy for SFT, DPO and pDPO on the test
/// split, and UCT search over the SFT policy on the first mcts_instances test
/// questions. Returns the rows in write order.
inline std::vector<EvalRow> evaluate(const Config& c, const Layout& L, const std::vector<std::uint64_t>& seeds) {
  const Dataset test = read_instances(L.data("test"));
  std::vector<EvalRow> rows;
  Manifest m(L);
  std::vector<fs::path> inputs{L.data("test")};
  for (std::uint64_t seed : seeds) {
    for (const char* method : {"sft", "dpo", "pdpo"}) {
      const fs::path path = method == std::string("sft") ? L.sft(seed) : L.policy(seed, method);
      const PolicyParams p = load_policy(path);
      inputs.push_back(path);
      // Wall time is the elapsed time of the whole split, not a per-instance sum.
      EvalRow g{method, "greedy", seed, {}, {}};
      g.cost.wall_time = elapsed_seconds([&] {
        g.report = evaluate_greedy(p, test, &g.cost);
        g.cost.wall_time = 0;
      });
      rows.push_back(g);
      EvalRow s{method, "sc", seed, {}, {}};
      s.cost.wall_time = elapsed_seconds([&] {
        auto sc = evaluate_self_consistency(p, test, c.eval.sc_n, c.eval.sc_temperature, seed);
        s.report = sc.summary;
        s.cost = sc.cost;
      });
      rows.push_back(s);
    }
    if (c.eval.mcts_instances > 0) {
      const PolicyParams p = load_policy(L.sft(seed));
      const std::size_t n = std::min<std::size_t>(test.size(), static_cast<std::size_t>(c.eval.mcts_instances));
      std::vector<Trajectory> out(n);
      std::vector<PlanningCost> costs(n);
      MctsConfig mc{c.eval.mcts_budget, c.eval.c_uct, c.eval.mcts_rollout_temperature};
      EvalRow row{"mcts", "search", seed, {}, {}};
      const double wall = elapsed_seconds([&] {
        parallel_for(n, [&](std::size_t i) {
          Rng rng(stream_seed(seed, test[i].id, 0, "mcts"));
          MctsResult r = mcts_plan(p, test[i], mc, rng);
          out[i] = std::move(r.trajectory);
          costs[i] = r.cost;
        });
      });
      for (std::size_t i = 0; i < n; ++i) {
        (out[i].valid ? row.report.n_valid : row.report.n_invalid) += 1;
        row.report.n_correct += outcome_reward(out[i], test[i]);
        row.cost += costs[i];
      }
      row.cost.wall_time = wall;
      row.report.accuracy = n ? static_cast<double>(row.report.n_correct) / static_cast<double>(n) : 0.0;
      rows.push_back(row);
    }
  }

  {
    CsvWriter csv(L.eval_metrics(), eval_header());
    for (const auto& r : rows) {
      const int n = r.report.n_valid + r.report.n_invalid;
      csv.row({r.method, r.decode, "test", std::to_string(r.seed), fmt_num(r.report.accuracy),
               std::to_string(r.report.n_valid), std::to_string(r.report.n_invalid), std::to_string(n),
               std::to_string(r.cost.n_policy_evals), std::to_string(r.cost.n_env_steps), fmt_num(r.cost.wall_time)});
    }
  }
  {
    CsvWriter csv(L.eval_summary(), {"method", "decode", "dataset_split", "n_seeds", "accuracy_mean", "accuracy_sd",
                                     "policy_evals_per_instance"});
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& r : rows)
      if (std::find(keys.begin(), keys.end(), std::pair{r.method, r.decode}) == keys.end())
        keys.emplace_back(r.method, r.decode);
    for (const auto& [method, decode] : keys) {
      std::vector<double> acc;
      double evals = 0, instances = 0;
      for (const auto& r : rows) {
        if (r.method != method || r.decode != decode) continue;
        acc.push_back(r.report.accuracy);
        evals += static_cast<double>(r.cost.n_policy_evals);
        instances += r.report.n_valid + r.report.n_invalid;
      }
      const MeanSd ms = mean_sd(acc);
      csv.row({method, decode, "test", std::to_string(acc.size()), fmt_num(ms.mean), fmt_num(ms.sd),
               fmt_num(instances > 0 ? evals / instances : 0.0)});
    }
  }
  m.record(L.eval_metrics(), "eval", c, std::nullopt, inputs);
  m.record(L.eval_summary(), "eval", c, std::nullopt, inputs);
  m.save();
  return rows;
}

struct SigmaRow {
  std::uint64_t seed = 0;
  double sigma = 0;
  std::size_t n_process = 0;
  std::size_t n_merged = 0;
  double dev_accuracy = 0;
};

/// For each margin: |D_p| on the fixed seed trajectories and the dev accuracy
/// of pDPO trained on D_o merged with that D_p.
inline std::vector<SigmaRow> ablate_sigma(const Config& c, const Layout& L, const std::vector<std::uint64_t>& seeds) {
  const Dataset train = read_instances(L.data("train"));
  const Dataset dev = read_instances(L.data("dev"));
  std::vector<SigmaRow> rows;
  std::vector<fs::path> inputs{L.data("train"), L.data("dev")};
  for (std::uint64_t seed : seeds) {
    const auto trajectories = read_trajectories(L.seeds(seed), train);
    const PRMParams prm = load_prm(L.prm(seed));
    const PolicyParams init = load_policy(L.sft(seed));
    inputs.insert(inputs.end(), {L.seeds(seed), L.prm(seed), L.sft(seed)});
    for (double sigma : c.ablation.sigmas) {
      const PairSets p = make_pairs(c, trajectories, train, prm, sigma);
      const DpoResult r = run_dpo(c, seed, init, p.merged, train, dev);
      rows.push_back({seed, sigma, p.process.size(), p.merged.size(), evaluate_greedy(r.params, dev).accuracy});
    }
  }
  {
    CsvWriter csv(L.ablate_sigma(), {"seed", "sigma", "n_process_pairs", "n_merged_pairs", "dev_accuracy"});
    for (const auto& r : rows)
      csv.row({std::to_string(r.seed), fmt_num(r.sigma), std::to_string(r.n_process), std::to_string(r.n_merged),
               fmt_num(r.dev_accuracy)});
  }
  Manifest m(L);
  m.record(L.ablate_sigma(), "ablate-sigma", c, std::nullopt, inputs);
  m.save();
  return rows;
}

struct RatioRow {
  std::uint64_t seed = 0;
  double ratio = 0;
  std::size_t n_questions = 0;
  double dpo_accuracy = 0;
  double pdpo_accuracy = 0;
};

/// Reruns PRM training, pair construction and both DPO variants on a seeded
/// fraction of the training questions; reports greedy test accuracy.
inline std::vector<RatioRow> ablate_data_ratio(const Config& c, const Layout& L,
                                               const std::vector<std::uint64_t>& seeds) {
  const Dataset train_all = read_instances(L.data("train"));
  const Dataset dev = read_instances(L.data("dev"));
  const Dataset test = read_instances(L.data("test"));
  std::vector<RatioRow> rows;
  std::vector<fs::path> inputs{L.data("train"), L.data("dev"), L.data("test")};
  for (std::uint64_t seed : seeds) {
    const auto all_traj = read_trajectories(L.seeds(seed), train_all);
    const auto all_records = read_records(L.records(seed));
    const PolicyParams init = load_policy(L.sft(seed));
    inputs.insert(inputs.end(), {L.seeds(seed), L.records(seed), L.sft(seed)});
    for (double ratio : c.ablation.data_ratios) {
      const auto keep = question_subset(train_all, ratio, seed);
      const Dataset train = restrict(train_all, keep);
      std::vector<Trajectory> traj;
      for (const auto& t : all_traj)
        if (keep.count(t.instance_id)) traj.push_back(t);
      std::vector<PRMRecord> records;
      for (const auto& r : all_records)
        if (keep.count(r.instance_id)) records.push_back(r);
      const PRMParams prm = prm_train(records, train, traj, prm_space(c), prm_hyper(c, seed)).params;
      const PairSets p = make_pairs(c, traj, train, prm, c.prefs.sigma);
      RatioRow row{seed, ratio, keep.size(), 0, 0};
      row.dpo_accuracy = evaluate_greedy(run_dpo(c, seed, init, p.outcome, train, dev).params, test).accuracy;
      row.pdpo_accuracy = evaluate_greedy(run_dpo(c, seed, init, p.merged, train, dev).params, test).accuracy;
      rows.push_back(row);
    }
  }
  {
    CsvWriter csv(L.ablate_data_ratio(), {"seed", "ratio", "n_questions", "method", "test_accuracy"});
    for (const auto& r : rows) {
      csv.row({std::to_string(r.seed), fmt_num(r.ratio), std::to_string(r.n_questions), "dpo", fmt_num(r.dpo_accuracy)});
      csv.row({std::to_string(r.seed), fmt_num(r.ratio), std::to_string(r.n_questions), "pdpo", fmt_num(r.pdpo_accuracy)});
    }
  }
  Manifest m(L);
  m.record(L.ablate_data_ratio(), "ablate-data-ratio", c, std::nullopt, inputs);
  m.save();
  return rows;
}

// ---------------------------------------------------------------------------
// Dispatch

struct RunOptions {
  std::vector<std::uint64_t> seeds;  // empty: the config's seeds
  DpoVariant variant = DpoVariant::both;
};

inline void run_stage(const std::string& stage, const Config& c, const fs::path& out, const RunOptions& opt = {}) {
  const Layout L{out};
  const std::vector<std::uint64_t> seeds = opt.seeds.empty() ? c.seeds : opt.seeds;
  try {
    ensure_dir(out);
    if (stage == "gen-data") {
      gen_data(c, L);
    } else if (stage == "sft") {
      for (auto s : seeds) sft(c, L, s);
    } else if (stage == "sample") {
      for (auto s : seeds) sample(c, L, s);
    } else if (stage == "estimate") {
      for (auto s : seeds) estimate(c, L, s);
    } else if (stage == "train-prm") {
      for (auto s : seeds) train_prm_stage(c, L, s);
    } else if (stage == "build-prefs") {
      for (auto s : seeds) build_prefs(c, L, s);
    } else if (stage == "train-dpo") {
      for (auto s : seeds) train_dpo_stage(c, L, s, opt.variant);
    } else if (stage == "eval") {
      evaluate(c, L, seeds);
    } else if (stage == "ablate-sigma") {
      ablate_sigma(c, L, seeds);
    } else if (stage == "ablate-data-ratio") {
      ablate_data_ratio(c, L, seeds);
    } else if (stage == "all") {
      for (const auto& s : {"gen-data", "sft", "sample", "estimate", "train-prm", "build-prefs", "train-dpo", "eval"})
        run_stage(s, c, out, opt);
    } else {
      throw std::invalid_argument("unknown stage");
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

}  // namespace pdpo::pipeline
