#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdpo/env.hpp"
#include "pdpo/parallel.hpp"
#include "pdpo/policy.hpp"
#include "pdpo/rng.hpp"

namespace pdpo {

/// Where a partial trajectory is cut: right after an action (tau_{t,a}) or at
/// the state preceding the action (tau_{t,s}).
enum class Anchor : std::uint8_t { action, state, both };

inline const char* to_string(Anchor a) {
  switch (a) {
    case Anchor::action: return "action";
    case Anchor::state: return "state";
    case Anchor::both: return "both";
  }
  return "?";
}

inline Anchor parse_anchor(const std::string& s) {
  if (s == "action") return Anchor::action;
  if (s == "state") return Anchor::state;
  if (s == "both") return Anchor::both;
  throw std::invalid_argument("unknown anchor '" + s + "' (expected action, state or both)");
}

/// One explore-and-play measurement: of `k_used` completions sampled from the
/// prefix, `count` reached the correct answer. The prefix is the first
/// `prefix_len` steps of seed trajectory (instance_id, sample_index).
struct PRMRecord {
  std::string instance_id;
  int sample_index = 0;
  int prefix_len = 0;
  Anchor anchor = Anchor::action;  // action or state, never both
  int count = 0;
  int k_used = 0;

  bool operator==(const PRMRecord&) const = default;
};

/// Copy of the first `len` steps. A prefix that ends with Finish keeps its
/// prediction so it reads as complete.
inline Trajectory prefix_of(const Trajectory& t, int len) {
  if (len < 0 || len > t.length()) throw ContractViolation("prefix length out of range");
  Trajectory p;
  p.instance_id = t.instance_id;
  p.sample_index = t.sample_index;
  p.steps.assign(t.steps.begin(), t.steps.begin() + len);
  if (p.finished()) {
    p.prediction = p.steps.back().action.index;
    p.valid = true;
  }
  return p;
}

/// Cut points of a trajectory in emission order: for each selected step t,
/// the state cut (length t) and/or the action cut (length t + 1).
struct Cut {
  int prefix_len;
  Anchor anchor;
};

inline std::vector<Cut> trajectory_cuts(const Trajectory& t, Anchor anchor, int stride = 1) {
  if (stride < 1) throw ContractViolation("stride must be >= 1");
  std::vector<Cut> cuts;
  for (int step = 0; step < t.length(); step += stride) {
    if (anchor != Anchor::action) cuts.push_back({step, Anchor::state});
    if (anchor != Anchor::state) cuts.push_back({step + 1, Anchor::action});
  }
  return cuts;
}

/// n_samples trajectories per instance; sample j of instance x draws from the
/// stream (run_seed, x, j). Trajectories shorter than min_steps are dropped.
inline std::vector<Trajectory> collect_seed_trajectories(const PolicyParams& params, const Dataset& dataset,
                                                         int n_samples, double temperature,
                                                         std::uint64_t run_seed, int min_steps = 0) {
  if (n_samples < 1) throw ContractViolation("n_samples must be >= 1");
  std::vector<std::vector<Trajectory>> per_instance(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    const Instance& inst = dataset[i];
    auto& out = per_instance[i];
    for (int j = 0; j < n_samples; ++j) {
      Rng rng(stream_seed(run_seed, inst.id, static_cast<std::uint64_t>(j), "seed"));
      Trajectory t = sample_trajectory(params, inst, temperature, rng);
      t.sample_index = j;
      if (t.length() >= min_steps) out.push_back(std::move(t));
    }
  });
  std::vector<Trajectory> all;
  for (auto& v : per_instance)
    for (auto& t : v) all.push_back(std::move(t));
  return all;
}

/// Number of K completions from `prefix` that reach the correct answer.
inline int estimate_step_value(const PolicyParams& params, const Instance& inst, const Trajectory& prefix,
                               int k, double temperature, Rng& rng) {
  if (k < 1) throw ContractViolation("K must be >= 1");
  check_consistent(inst, prefix, false);
  int count = 0;
  for (int i = 0; i < k; ++i) count += outcome_reward(sample_trajectory(params, inst, temperature, rng, prefix), inst);
  return count;
}

inline std::uint64_t record_seed(std::uint64_t run_seed, const std::string& instance_id, int sample_index,
                                 int prefix_len, Anchor anchor) {
  const std::uint64_t key = mix_seed(static_cast<std::uint64_t>(sample_index),
                                     static_cast<std::uint64_t>(prefix_len) * 2 + (anchor == Anchor::state ? 1 : 0));
  return stream_seed(run_seed, instance_id, key, "estimate");
}

/// Explore-and-play over every stride-th step of every seed trajectory.
/// Records come back in (trajectory, step) order regardless of threading.
inline std::vector<PRMRecord> build_prm_dataset(const PolicyParams& params, const Dataset& dataset,
                                                const std::vector<Trajectory>& seeds, int k, int stride,
                                                Anchor anchor, double temperature, std::uint64_t run_seed) {
  if (k < 1) throw ContractViolation("K must be >= 1");
  if (stride < 1) throw ContractViolation("stride must be >= 1");
  std::vector<std::vector<PRMRecord>> per_traj(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    const Trajectory& t = seeds[i];
    const Instance& inst = dataset.at(t.instance_id);
    for (const Cut& c : trajectory_cuts(t, anchor, stride)) {
      Rng rng(record_seed(run_seed, t.instance_id, t.sample_index, c.prefix_len, c.anchor));
      const int count = estimate_step_value(params, inst, prefix_of(t, c.prefix_len), k, temperature, rng);
      per_traj[i].push_back({t.instance_id, t.sample_index, c.prefix_len, c.anchor, count, k});
    }
  });
  std::vector<PRMRecord> out;
  for (auto& v : per_traj)
    for (auto& r : v) out.push_back(std::move(r));
  return out;
}

}  // namespace pdpo
