#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "pdpo/env.hpp"
#include "pdpo/parallel.hpp"
#include "pdpo/prm.hpp"
#include "pdpo/rng.hpp"

namespace pdpo {

enum class PairSource : std::uint8_t { outcome, process };

inline const char* to_string(PairSource s) { return s == PairSource::outcome ? "outcome" : "process"; }

struct PreferencePair {
  std::string instance_id;
  Trajectory chosen;
  Trajectory rejected;
  PairSource source = PairSource::outcome;
  std::optional<double> reward_gap;

  bool operator==(const PreferencePair&) const = default;
};

/// Content hash over the action sequence and outcome fields.
inline std::uint64_t trajectory_hash(const Trajectory& t) {
  std::uint64_t h = fnv1a(t.instance_id);
  for (const Step& s : t.steps) {
    h = mix_seed(h, static_cast<std::uint64_t>(s.action.index) * 2 + (s.action.is_finish() ? 1 : 0));
  }
  h = mix_seed(h, t.prediction ? static_cast<std::uint64_t>(*t.prediction) + 1 : 0);
  return mix_seed(h, t.valid ? 1 : 0);
}

/// Trajectories grouped by instance, groups in order of first appearance.
inline std::vector<std::vector<const Trajectory*>> group_by_instance(const std::vector<Trajectory>& ts) {
  std::vector<std::vector<const Trajectory*>> groups;
  std::map<std::string, std::size_t> slot;
  for (const Trajectory& t : ts) {
    auto [it, inserted] = slot.emplace(t.instance_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(&t);
  }
  return groups;
}

/// Every correct trajectory paired with every incorrect one of the same
/// instance, at most `max_pairs_per_instance` per instance when given.
inline std::vector<PreferencePair> build_outcome_pairs(const std::vector<Trajectory>& ts, const Dataset& dataset,
                                                       std::optional<int> max_pairs_per_instance = std::nullopt) {
  std::vector<PreferencePair> out;
  for (const auto& group : group_by_instance(ts)) {
    const Instance& inst = dataset.at(group.front()->instance_id);
    std::vector<const Trajectory*> good, bad;
    for (const Trajectory* t : group) (outcome_reward(*t, inst) ? good : bad).push_back(t);
    int emitted = 0;
    for (const Trajectory* w : good) {
      for (const Trajectory* l : bad) {
        if (max_pairs_per_instance && emitted >= *max_pairs_per_instance) break;
        out.push_back({inst.id, *w, *l, PairSource::outcome, std::nullopt});
        ++emitted;
      }
    }
  }
  return out;
}

struct ScoredTrajectory {
  const Trajectory* trajectory;
  double reward;
};

/// Pairs (a, b) of one instance's correct trajectories with
/// reward(a) - reward(b) > sigma; the higher-reward member is chosen.
inline std::vector<PreferencePair> process_pairs_for_group(const std::vector<ScoredTrajectory>& group, double sigma) {
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < group.size(); ++i) {
    for (std::size_t j = i + 1; j < group.size(); ++j) {
      const ScoredTrajectory* a = &group[i];
      const ScoredTrajectory* b = &group[j];
      if (b->reward > a->reward) std::swap(a, b);
      const double gap = a->reward - b->reward;
      if (gap > sigma)
        out.push_back({a->trajectory->instance_id, *a->trajectory, *b->trajectory, PairSource::process, gap});
    }
  }
  return out;
}

/// Trajectory rewards r_p for the correct trajectories, grouped by instance.
inline std::vector<std::vector<ScoredTrajectory>> score_correct_trajectories(const std::vector<Trajectory>& ts,
                                                                             const Dataset& dataset,
                                                                             const PRMParams& prm, int c,
                                                                             Anchor anchor = Anchor::action) {
  const auto groups = group_by_instance(ts);
  std::vector<std::vector<ScoredTrajectory>> scored(groups.size());
  parallel_for(groups.size(), [&](std::size_t g) {
    const Instance& inst = dataset.at(groups[g].front()->instance_id);
    for (const Trajectory* t : groups[g])
      if (outcome_reward(*t, inst)) scored[g].push_back({t, trajectory_reward(prm, inst, *t, c, anchor)});
  });
  return scored;
}

inline std::vector<PreferencePair> build_process_pairs(const std::vector<std::vector<ScoredTrajectory>>& scored,
                                                       double sigma) {
  if (sigma < 0 || sigma > 1) throw ContractViolation("confidence margin sigma must lie in [0, 1]");
  std::vector<PreferencePair> out;
  for (const auto& group : scored) {
    auto pairs = process_pairs_for_group(group, sigma);
    out.insert(out.end(), std::make_move_iterator(pairs.begin()), std::make_move_iterator(pairs.end()));
  }
  return out;
}

inline std::vector<PreferencePair> build_process_pairs(const std::vector<Trajectory>& ts, const Dataset& dataset,
                                                       const PRMParams& prm, int c, double sigma,
                                                       Anchor anchor = Anchor::action) {
  if (sigma < 0 || sigma > 1) throw ContractViolation("confidence margin sigma must lie in [0, 1]");
  return build_process_pairs(score_correct_trajectories(ts, dataset, prm, c, anchor), sigma);
}

/// D_o followed by D_p with exact duplicates removed; order otherwise kept.
inline std::vector<PreferencePair> merge_pref_datasets(const std::vector<PreferencePair>& d_o,
                                                       const std::vector<PreferencePair>& d_p) {
  std::vector<PreferencePair> out;
  std::set<std::tuple<std::string, std::uint64_t, std::uint64_t>> seen;
  for (const auto* d : {&d_o, &d_p}) {
    for (const PreferencePair& p : *d) {
      if (seen.emplace(p.instance_id, trajectory_hash(p.chosen), trajectory_hash(p.rejected)).second)
        out.push_back(p);
    }
  }
  return out;
}

}  // namespace pdpo
