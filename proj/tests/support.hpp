#pragma once

// Shared fixtures and independent oracles for the test suites. The oracles
// deliberately avoid the library's own helpers where a shortcut would make
// the check circular (probabilities are recomputed in long double from raw
// feature dot products, closures use std::set, shortest plans use BFS).

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pdpo/env.hpp"
#include "pdpo/policy.hpp"
#include "pdpo/rng.hpp"

namespace testing_support {

using namespace pdpo;

/// Hand-built instance over atoms 0..9.
///   r0: {0,1} -> 2     gold
///   r1: {2}   -> 5     gold, 5 is the answer
///   r2: {0}   -> 3     distractor
///   r3: {3}   -> 4     distractor building on a derived atom
///   r4: {9,1} -> 6     dead end (9 is never derivable), 6 is a wrong option
/// Options {6, 5, 7, 8}; answer index 1.
inline Instance tiny_instance(int max_steps = 4) {
  Instance inst;
  inst.id = "tiny";
  inst.n_atoms = 10;
  inst.base_facts = {0, 1};
  inst.rules = {{{0, 1}, 2}, {{2}, 5}, {{0}, 3}, {{3}, 4}, {{1, 9}, 6}};
  inst.options = {6, 5, 7, 8};
  inst.answer_index = 1;
  inst.max_steps = max_steps;
  return inst;
}

inline GeneratorSpec default_spec(int chain = 3) {
  GeneratorSpec g;
  g.n_atoms = 24;
  g.chain_length = chain;
  g.n_distractors = 5;
  g.n_rules = chain + 5 + 3;
  g.n_options = 4;
  g.max_steps = chain + 2;
  g.n_base_facts = 3;
  g.max_arity = 2;
  return g;
}

inline Dataset small_dataset(int n, std::uint64_t seed, int chain = 3, const std::string& prefix = "x") {
  std::vector<Instance> items;
  for (int i = 0; i < n; ++i)
    items.push_back(generate_instance(default_spec(chain), mix_seed(seed, static_cast<std::uint64_t>(i)),
                                      prefix + std::to_string(i)));
  return Dataset(std::move(items));
}

inline std::set<Atom> closure_oracle(const Instance& inst) {
  std::set<Atom> known(inst.base_facts.begin(), inst.base_facts.end());
  for (bool grew = true; grew;) {
    grew = false;
    for (const Rule& r : inst.rules) {
      bool fire = !known.count(r.consequent);
      for (Atom a : r.antecedents) fire = fire && known.count(a);
      if (fire) grew = known.insert(r.consequent).second || grew;
    }
  }
  return known;
}

/// Fewest ApplyRule actions that make the answer known (BFS over known sets).
inline int bfs_shortest_derivation(const Instance& inst) {
  using Known = std::set<Atom>;
  const Atom goal = inst.options[static_cast<std::size_t>(inst.answer_index)];
  std::deque<std::pair<Known, int>> queue{{Known(inst.base_facts.begin(), inst.base_facts.end()), 0}};
  std::set<Known> seen{queue.front().first};
  while (!queue.empty()) {
    auto [k, d] = queue.front();
    queue.pop_front();
    if (k.count(goal)) return d;
    for (const Rule& r : inst.rules) {
      if (k.count(r.consequent)) continue;
      if (!std::all_of(r.antecedents.begin(), r.antecedents.end(), [&](Atom a) { return k.count(a) > 0; }))
        continue;
      Known next = k;
      next.insert(r.consequent);
      if (seen.insert(next).second) queue.push_back({next, d + 1});
    }
  }
  return -1;
}

/// Action probabilities recomputed from raw feature dot products in long
/// double, without the library's softmax.
inline std::vector<long double> oracle_probs(const PolicyParams& p, const Instance& inst, const ReasoningState& s,
                                             const std::vector<Action>& actions, double temperature) {
  std::vector<long double> z;
  for (const Action& a : actions) {
    const Eigen::VectorXd f = featurize(inst, s, a, p.space);
    long double dot = 0;
    for (Eigen::Index i = 0; i < f.size(); ++i) dot += static_cast<long double>(f[i]) * p.weights[i];
    z.push_back(dot / temperature);
  }
  const long double m = *std::max_element(z.begin(), z.end());
  long double total = 0;
  for (auto& v : z) total += (v = std::exp(v - m));
  for (auto& v : z) v /= total;
  return z;
}

/// Exact probability that a rollout from `state` (after `depth` actions)
/// finishes with the answer, by enumerating every completion.
inline long double enumerate_success(const PolicyParams& p, const Instance& inst, const ReasoningState& s, int depth,
                                     double temperature) {
  if (depth >= inst.max_steps) return 0;
  std::vector<Action> actions;
  for (int i = 0; i < inst.n_rules(); ++i) {
    const Rule& r = inst.rules[static_cast<std::size_t>(i)];
    if (s.contains(r.consequent)) continue;
    if (std::all_of(r.antecedents.begin(), r.antecedents.end(), [&](Atom a) { return s.contains(a); }))
      actions.push_back(Action::apply(i));
  }
  for (int o = 0; o < inst.n_options(); ++o) actions.push_back(Action::finish(o));
  const auto probs = oracle_probs(p, inst, s, actions, temperature);
  long double v = 0;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i].is_finish()) {
      v += actions[i].index == inst.answer_index ? probs[i] : 0;
    } else {
      ReasoningState next = s;
      next.known[static_cast<std::size_t>(inst.rules[static_cast<std::size_t>(actions[i].index)].consequent)] = 1;
      v += probs[i] * enumerate_success(p, inst, next, depth + 1, temperature);
    }
  }
  return v;
}

/// Best achievable success probability from `state` over all action sequences.
inline double enumerate_best(const Instance& inst, const ReasoningState& s, int depth) {
  if (depth >= inst.max_steps) return 0;
  double best = 0;
  for (int o = 0; o < inst.n_options(); ++o) best = std::max(best, o == inst.answer_index ? 1.0 : 0.0);
  for (int i = 0; i < inst.n_rules(); ++i) {
    const Rule& r = inst.rules[static_cast<std::size_t>(i)];
    if (s.contains(r.consequent)) continue;
    if (!std::all_of(r.antecedents.begin(), r.antecedents.end(), [&](Atom a) { return s.contains(a); })) continue;
    ReasoningState next = s;
    next.known[static_cast<std::size_t>(r.consequent)] = 1;
    best = std::max(best, enumerate_best(inst, next, depth + 1));
  }
  return best;
}

inline PolicyParams random_policy(const PolicyFeatureSpace& space, Rng& rng, double scale = 1.0) {
  PolicyParams p(space);
  for (Eigen::Index i = 0; i < p.weights.size(); ++i) p.weights[i] = scale * (2 * rng.uniform() - 1);
  return p;
}

/// ||analytic - numeric|| / max(||analytic||, ||numeric||), using central
/// differences of `f` around `x`. Zero when both gradients vanish.
inline double check_gradient(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                             const Eigen::VectorXd& grad, double h = 1e-5) {
  Eigen::VectorXd numeric(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    numeric[i] = (up - down) / (2 * h);
  }
  const double scale = std::max(grad.norm(), numeric.norm());
  return scale == 0 ? 0.0 : (grad - numeric).norm() / scale;
}

/// Trajectory built from an explicit action list, with states filled in.
inline Trajectory make_trajectory(const Instance& inst, const std::vector<Action>& actions, int sample_index = 0) {
  Trajectory t;
  t.instance_id = inst.id;
  t.sample_index = sample_index;
  ReasoningState s = initial_state(inst);
  for (const Action& a : actions) {
    t.steps.push_back({s, a});
    if (a.is_finish()) {
      t.prediction = a.index;
      t.valid = true;
      break;
    }
    s = next_state(inst, s, a);
  }
  return t;
}

}  // namespace testing_support
