#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "pdpo/env.hpp"
#include "pdpo/numeric.hpp"
#include "pdpo/rng.hpp"

namespace pdpo {

/// Layout of the (state, action) feature vector. The generic block is shared
/// across instances; the one-hot blocks index options and rule positions.
struct PolicyFeatureSpace {
  // Apply block
  static constexpr int kApplyBias = 0;
  static constexpr int kApplyAntecedentsKnown = 1;
  static constexpr int kApplyConsequentIsOption = 2;
  static constexpr int kApplyFanout = 3;
  static constexpr int kApplyUnlocks = 4;
  static constexpr int kApplyBuildsOnDerived = 5;
  static constexpr int kApplyArity = 6;
  static constexpr int kApplyPending = 7;
  // Finish block. A derived option is always the answer, so the only real
  // choice is whether to commit to an underived option; bias, pending and
  // progress fire only for such guesses.
  static constexpr int kFinishBias = 8;
  static constexpr int kFinishOptionKnown = 9;
  static constexpr int kFinishPending = 10;
  static constexpr int kFinishProgress = 11;
  static constexpr int kGeneric = 12;

  int n_options = 4;
  int n_rule_slots = 16;

  int option_offset() const { return kGeneric; }
  int rule_offset() const { return kGeneric + n_options; }
  int size() const { return kGeneric + n_options + n_rule_slots; }

  bool operator==(const PolicyFeatureSpace&) const = default;
};

struct PolicyParams {
  PolicyFeatureSpace space;
  Eigen::VectorXd weights;

  PolicyParams() = default;
  explicit PolicyParams(PolicyFeatureSpace s)
      : space(s), weights(Eigen::VectorXd::Zero(s.size())) {}

  int n_features() const { return static_cast<int>(weights.size()); }
};

/// Frozen copy of a policy; the reference model for DPO.
class PolicySnapshot {
 public:
  explicit PolicySnapshot(const PolicyParams& p)
      : params_(std::make_shared<const PolicyParams>(p)) {}
  const PolicyParams& params() const { return *params_; }

 private:
  std::shared_ptr<const PolicyParams> params_;
};

/// Counters for comparing decoding strategies.
struct PlanningCost {
  std::int64_t n_policy_evals = 0;
  std::int64_t n_env_steps = 0;
  double wall_time = 0;  // seconds

  PlanningCost& operator+=(const PlanningCost& o) {
    n_policy_evals += o.n_policy_evals;
    n_env_steps += o.n_env_steps;
    wall_time += o.wall_time;
    return *this;
  }
};

class ScopedTimer {
 public:
  explicit ScopedTimer(PlanningCost* cost) : cost_(cost), start_(std::chrono::steady_clock::now()) {}
  ~ScopedTimer() {
    if (cost_)
      cost_->wall_time += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  PlanningCost* cost_;
  std::chrono::steady_clock::time_point start_;
};

namespace detail {

struct StateContext {
  std::vector<std::uint8_t> applicable;  // per rule
  int pending_consequents = 0;           // distinct derivable-but-underived atoms
  int derived = 0;                       // atoms added beyond the base facts
};

inline StateContext state_context(const Instance& inst, const ReasoningState& s) {
  StateContext ctx;
  ctx.applicable.assign(inst.rules.size(), 0);
  std::vector<Atom> pending;
  for (std::size_t i = 0; i < inst.rules.size(); ++i) {
    if (rule_applicable(inst.rules[i], s)) {
      ctx.applicable[i] = 1;
      pending.push_back(inst.rules[i].consequent);
    }
  }
  std::sort(pending.begin(), pending.end());
  ctx.pending_consequents =
      static_cast<int>(std::unique(pending.begin(), pending.end()) - pending.begin());
  ctx.derived = s.size() - static_cast<int>(inst.base_facts.size());
  return ctx;
}

inline void write_features(const Instance& inst, const ReasoningState& s, const StateContext& ctx,
                           const Action& a, const PolicyFeatureSpace& space,
                           Eigen::Ref<Eigen::VectorXd> f) {
  using F = PolicyFeatureSpace;
  f.setZero();
  const double n_rules = std::max(1, inst.n_rules());
  if (a.is_apply()) {
    if (a.index >= space.n_rule_slots)
      throw ContractViolation("rule index exceeds policy feature slots");
    const Rule& r = inst.rules[static_cast<std::size_t>(a.index)];
    int known = 0;
    bool builds_on_derived = false;
    for (Atom x : r.antecedents) {
      if (s.contains(x)) ++known;
      if (!std::binary_search(inst.base_facts.begin(), inst.base_facts.end(), x)) builds_on_derived = true;
    }
    int fanout = 0, unlocks = 0;
    for (std::size_t j = 0; j < inst.rules.size(); ++j) {
      const Rule& other = inst.rules[j];
      if (!std::binary_search(other.antecedents.begin(), other.antecedents.end(), r.consequent)) continue;
      ++fanout;
      if (ctx.applicable[j] || s.contains(other.consequent) || other.consequent == r.consequent) continue;
      bool ready = std::all_of(other.antecedents.begin(), other.antecedents.end(),
                               [&](Atom x) { return x == r.consequent || s.contains(x); });
      if (ready) ++unlocks;
    }
    f[F::kApplyBias] = 1.0;
    f[F::kApplyAntecedentsKnown] = static_cast<double>(known) / static_cast<double>(r.antecedents.size());
    f[F::kApplyConsequentIsOption] =
        std::find(inst.options.begin(), inst.options.end(), r.consequent) != inst.options.end() ? 1.0 : 0.0;
    f[F::kApplyFanout] = std::min(fanout, 3) / 3.0;
    f[F::kApplyUnlocks] = std::min(unlocks, 3) / 3.0;
    f[F::kApplyBuildsOnDerived] = builds_on_derived ? 1.0 : 0.0;
    f[F::kApplyArity] = static_cast<double>(r.antecedents.size()) / 3.0;
    f[F::kApplyPending] = ctx.pending_consequents / n_rules;
    f[space.rule_offset() + a.index] = 1.0;
  } else {
    if (a.index >= space.n_options) throw ContractViolation("option index exceeds policy feature slots");
    const bool option_known = s.contains(inst.options[static_cast<std::size_t>(a.index)]);
    f[F::kFinishBias] = option_known ? 0.0 : 1.0;
    f[F::kFinishOptionKnown] = option_known ? 1.0 : 0.0;
    if (!option_known) {
      f[F::kFinishPending] = ctx.pending_consequents / n_rules;
      f[F::kFinishProgress] = static_cast<double>(ctx.derived) / std::max(1, inst.max_steps);
    }
    f[space.option_offset() + a.index] = 1.0;
  }
}

}  // namespace detail

inline Eigen::VectorXd featurize(const Instance& inst, const ReasoningState& s, const Action& a,
                                 const PolicyFeatureSpace& space) {
  if (!is_legal(inst, s, a)) throw ContractViolation("featurize: illegal action");
  Eigen::VectorXd f(space.size());
  detail::write_features(inst, s, detail::state_context(inst, s), a, space, f);
  return f;
}

/// Legal actions of a state with their feature rows and raw scores w.phi.
struct ActionScores {
  std::vector<Action> actions;
  Eigen::MatrixXd features;  // one row per action
  Eigen::VectorXd scores;
};

inline ActionScores score_actions(const PolicyParams& params, const Instance& inst,
                                  const ReasoningState& s) {
  ActionScores out;
  out.actions = legal_actions(inst, s);
  if (out.actions.empty()) throw ContractViolation("no legal actions");
  const auto ctx = detail::state_context(inst, s);
  out.features.resize(static_cast<Eigen::Index>(out.actions.size()), params.space.size());
  Eigen::VectorXd row(params.space.size());
  for (std::size_t i = 0; i < out.actions.size(); ++i) {
    detail::write_features(inst, s, ctx, out.actions[i], params.space, row);
    out.features.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  out.scores = out.features * params.weights;
  return out;
}

struct ActionDistribution {
  std::vector<Action> actions;
  Eigen::VectorXd probs;
};

inline ActionDistribution action_distribution(const PolicyParams& params, const Instance& inst,
                                              const ReasoningState& s, double temperature) {
  if (!(temperature > 0)) throw ContractViolation("temperature must be positive");
  ActionScores sc = score_actions(params, inst, s);
  return {std::move(sc.actions), softmax(sc.scores / temperature)};
}

namespace detail {

inline std::size_t sample_index(const Eigen::VectorXd& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<std::size_t>(i);
  }
  // Rounding left u above the last cumulative sum; take the last positive entry.
  for (Eigen::Index i = probs.size() - 1; i >= 0; --i)
    if (probs[i] > 0) return static_cast<std::size_t>(i);
  return 0;
}

template <typename Choose>
Trajectory rollout(const Instance& inst, Trajectory t, PlanningCost* cost, Choose&& choose) {
  if (t.finished()) return t;
  if (t.instance_id.empty()) t.instance_id = inst.id;
  ReasoningState s = state_after(inst, t);
  while (t.length() < inst.max_steps) {
    const Action a = choose(s);
    if (cost) {
      ++cost->n_policy_evals;
      ++cost->n_env_steps;
    }
    t.steps.push_back({s, a});
    if (a.is_finish()) {
      t.prediction = a.index;
      t.valid = true;
      return t;
    }
    s = next_state(inst, s, a);
  }
  t.prediction.reset();
  t.valid = false;
  return t;
}

}  // namespace detail

/// Samples actions until Finish or the step budget, continuing from `prefix`
/// when one is given. A prefix that already finished comes back unchanged.
inline Trajectory sample_trajectory(const PolicyParams& params, const Instance& inst, double temperature,
                                    Rng& rng, Trajectory prefix = {}, PlanningCost* cost = nullptr) {
  return detail::rollout(inst, std::move(prefix), cost, [&](const ReasoningState& s) {
    ActionDistribution d = action_distribution(params, inst, s, temperature);
    return d.actions[detail::sample_index(d.probs, rng)];
  });
}

/// Max-probability action at each step; ties go to the first action in
/// canonical order. Continues from `prefix` when one is given.
inline Trajectory greedy_continue(const PolicyParams& params, const Instance& inst, Trajectory prefix,
                                  PlanningCost* cost = nullptr) {
  return detail::rollout(inst, std::move(prefix), cost, [&](const ReasoningState& s) {
    ActionScores sc = score_actions(params, inst, s);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < sc.scores.size(); ++i)
      if (sc.scores[i] > sc.scores[best]) best = i;
    return sc.actions[static_cast<std::size_t>(best)];
  });
}

inline Trajectory greedy_decode(const PolicyParams& params, const Instance& inst, PlanningCost* cost = nullptr) {
  ScopedTimer timer(cost);
  return greedy_continue(params, inst, Trajectory{}, cost);
}

struct LogProbGrad {
  double logprob = 0;
  Eigen::VectorXd grad;
};

/// Sum over steps of log pi(a_t | s_t) at temperature 1, and its gradient
/// with respect to the weights: sum_t phi(s_t, a_t) - E_pi[phi(s_t, .)].
inline LogProbGrad trajectory_logprob_grad(const PolicyParams& params, const Instance& inst,
                                           const Trajectory& t, bool with_grad = true) {
  check_consistent(inst, t, false);
  LogProbGrad out;
  if (with_grad) out.grad = Eigen::VectorXd::Zero(params.n_features());
  for (const Step& st : t.steps) {
    ActionScores sc = score_actions(params, inst, st.state);
    const auto it = std::find(sc.actions.begin(), sc.actions.end(), st.action);
    const auto k = static_cast<Eigen::Index>(it - sc.actions.begin());
    out.logprob += sc.scores[k] - log_sum_exp(sc.scores);
    if (with_grad) {
      const Eigen::VectorXd p = softmax(sc.scores);
      out.grad += sc.features.row(k).transpose() - sc.features.transpose() * p;
    }
  }
  return out;
}

inline double trajectory_logprob(const PolicyParams& params, const Instance& inst, const Trajectory& t) {
  return trajectory_logprob_grad(params, inst, t, false).logprob;
}

}  // namespace pdpo
