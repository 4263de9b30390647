#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "pdpo/env.hpp"
#include "pdpo/parallel.hpp"
#include "pdpo/policy.hpp"
#include "pdpo/rng.hpp"

namespace pdpo {

struct AccuracyReport {
  double accuracy = 0;
  int n_correct = 0;
  int n_valid = 0;
  int n_invalid = 0;
};

/// Greedy decoding on every instance. Truncated trajectories have no
/// prediction and count as incorrect.
inline AccuracyReport evaluate_greedy(const PolicyParams& params, const Dataset& dataset,
                                      PlanningCost* cost = nullptr) {
  AccuracyReport r;
  if (dataset.empty()) return r;
  std::vector<Trajectory> decoded(dataset.size());
  std::vector<PlanningCost> costs(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) { decoded[i] = greedy_decode(params, dataset[i], &costs[i]); });
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (decoded[i].valid ? r.n_valid : r.n_invalid) += 1;
    r.n_correct += outcome_reward(decoded[i], dataset[i]);
    if (cost) *cost += costs[i];
  }
  r.accuracy = static_cast<double>(r.n_correct) / static_cast<double>(dataset.size());
  return r;
}

/// Most frequent prediction among the votes that have one; ties go to the
/// lowest option index. No valid vote gives no prediction.
inline std::optional<int> majority_vote(const std::vector<std::optional<int>>& votes) {
  std::map<int, int> tally;
  for (const auto& v : votes)
    if (v) ++tally[*v];
  std::optional<int> best;
  int best_count = 0;
  for (const auto& [option, count] : tally) {
    if (count > best_count) {
      best = option;
      best_count = count;
    }
  }
  return best;
}

struct SelfConsistencyResult {
  std::optional<int> prediction;
  std::vector<std::optional<int>> votes;
};

inline SelfConsistencyResult self_consistency(const PolicyParams& params, const Instance& inst, int n_samples,
                                              double temperature, Rng& rng, PlanningCost* cost = nullptr) {
  if (n_samples < 1) throw ContractViolation("self_consistency needs n_samples >= 1");
  SelfConsistencyResult r;
  for (int i = 0; i < n_samples; ++i)
    r.votes.push_back(sample_trajectory(params, inst, temperature, rng, {}, cost).prediction);
  r.prediction = majority_vote(r.votes);
  return r;
}

struct SelfConsistencyReport {
  AccuracyReport summary;  // n_valid counts instances with any valid vote
  std::vector<SelfConsistencyResult> per_instance;
  PlanningCost cost;
};

/// Instance x votes with the stream (run_seed, x, "sc").
inline SelfConsistencyReport evaluate_self_consistency(const PolicyParams& params, const Dataset& dataset,
                                                       int n_samples, double temperature, std::uint64_t run_seed) {
  SelfConsistencyReport out;
  out.per_instance.resize(dataset.size());
  std::vector<PlanningCost> costs(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    Rng rng(stream_seed(run_seed, dataset[i].id, 0, "sc"));
    out.per_instance[i] = self_consistency(params, dataset[i], n_samples, temperature, rng, &costs[i]);
  });
  for (const auto& c : costs) out.cost += c;
  auto& s = out.summary;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& p = out.per_instance[i].prediction;
    (p ? s.n_valid : s.n_invalid) += 1;
    s.n_correct += (p && *p == dataset[i].answer_index) ? 1 : 0;
  }
  if (!dataset.empty()) s.accuracy = static_cast<double>(s.n_correct) / static_cast<double>(dataset.size());
  return out;
}

}  // namespace pdpo
