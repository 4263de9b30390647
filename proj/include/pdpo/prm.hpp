#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pdpo/env.hpp"
#include "pdpo/numeric.hpp"
#include "pdpo/rng.hpp"
#include "pdpo/rollout.hpp"

namespace pdpo {

/// Features of a partial trajectory. Nothing here looks at answer_index, so
/// relabelling the options leaves the vector unchanged.
struct PrmFeatureSpace {
  static constexpr int kBias = 0;
  static constexpr int kPrefixLen = 1;
  static constexpr int kBudgetLeft = 2;
  static constexpr int kBudgetLeftSq = 3;
  static constexpr int kKnownFraction = 4;
  static constexpr int kApplicable = 5;
  static constexpr int kOptionsKnown = 6;
  static constexpr int kLastApply = 7;
  static constexpr int kLastFinish = 8;
  static constexpr int kLastFinishKnown = 9;
  static constexpr int kEndsAtState = 10;
  static constexpr int kLastBuildsOnDerived = 11;
  static constexpr int kLastFanout = 12;
  static constexpr int kLastConsequentIsOption = 13;
  static constexpr int kOptionDistance = 14;
  static constexpr int kSlack = 15;
  static constexpr int kGeneric = 16;

  int n_rule_slots = 16;

  int rule_offset() const { return kGeneric; }
  int size() const { return kGeneric + n_rule_slots; }

  bool operator==(const PrmFeatureSpace&) const = default;
};

/// Linear-softmax classifier over success counts 0..k.
struct PRMParams {
  int k = 10;
  PrmFeatureSpace space;
  Eigen::MatrixXd weights;  // (k + 1) x space.size()

  PRMParams() = default;
  PRMParams(int k_, PrmFeatureSpace s) : k(k_), space(s), weights(Eigen::MatrixXd::Zero(k_ + 1, s.size())) {}

  int n_classes() const { return k + 1; }
};

/// Fewest rule applications that derive some option from `s` (0 if one is
/// already known), or -1 if no option is derivable.
inline int option_distance(const Instance& inst, const ReasoningState& s) {
  // Derivation cost of each atom: 0 if known, else 1 + sum over the cheapest
  // producer's antecedents. Summing over-counts shared sub-derivations, which
  // the generated instances do not have.
  std::vector<int> cost(static_cast<std::size_t>(inst.n_atoms), -1);
  for (Atom a = 0; a < inst.n_atoms; ++a)
    if (s.contains(a)) cost[static_cast<std::size_t>(a)] = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Rule& r : inst.rules) {
      int c = 1;
      for (Atom x : r.antecedents) {
        const int cx = cost[static_cast<std::size_t>(x)];
        if (cx < 0) { c = -1; break; }
        c += cx;
      }
      int& cur = cost[static_cast<std::size_t>(r.consequent)];
      if (c > 0 && (cur < 0 || c < cur)) {
        cur = c;
        changed = true;
      }
    }
  }
  int best = -1;
  for (Atom o : inst.options) {
    const int c = cost[static_cast<std::size_t>(o)];
    if (c >= 0 && (best < 0 || c < best)) best = c;
  }
  return best;
}

/// `prefix` holds the steps up to the cut; `ends_at_state` marks tau_{t,s}
/// cuts (the state after the last step is the one being judged).
inline Eigen::VectorXd prm_featurize(const Instance& inst, const Trajectory& prefix, bool ends_at_state,
                                     const PrmFeatureSpace& space) {
  using F = PrmFeatureSpace;
  check_consistent(inst, prefix, false);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(space.size());
  const ReasoningState s = state_after(inst, prefix);
  const double len = static_cast<double>(prefix.length()) / std::max(1, inst.max_steps);
  f[F::kBias] = 1.0;
  f[F::kPrefixLen] = len;
  f[F::kBudgetLeft] = 1.0 - len;
  f[F::kBudgetLeftSq] = (1.0 - len) * (1.0 - len);
  f[F::kKnownFraction] = static_cast<double>(s.size()) / std::max(1, inst.n_atoms);
  int applicable = 0;
  for (const Rule& r : inst.rules) applicable += rule_applicable(r, s) ? 1 : 0;
  f[F::kApplicable] = static_cast<double>(applicable) / std::max(1, inst.n_rules());
  int options_known = 0;
  for (Atom o : inst.options) options_known += s.contains(o) ? 1 : 0;
  f[F::kOptionsKnown] = options_known;
  f[F::kEndsAtState] = ends_at_state ? 1.0 : 0.0;
  {
    const double budget = static_cast<double>(std::max(1, inst.max_steps));
    const int left = inst.max_steps - prefix.length();
    const int dist = option_distance(inst, s);
    const int d = dist < 0 ? inst.max_steps + 1 : dist;
    f[F::kOptionDistance] = d / budget;
    // Steps to spare once the nearest option is derived and Finish is taken.
    f[F::kSlack] = std::clamp(left - d - 1, -3, 3) / 3.0;
  }
  if (!prefix.steps.empty()) {
    const Step& last = prefix.steps.back();
    if (last.action.is_finish()) {
      f[F::kLastFinish] = 1.0;
      f[F::kLastFinishKnown] = s.contains(inst.options[static_cast<std::size_t>(last.action.index)]) ? 1.0 : 0.0;
    } else {
      const Rule& r = inst.rules[static_cast<std::size_t>(last.action.index)];
      f[F::kLastApply] = 1.0;
      bool derived = false;
      for (Atom x : r.antecedents)
        if (!std::binary_search(inst.base_facts.begin(), inst.base_facts.end(), x)) derived = true;
      f[F::kLastBuildsOnDerived] = derived ? 1.0 : 0.0;
      int fanout = 0;
      for (const Rule& other : inst.rules)
        if (std::binary_search(other.antecedents.begin(), other.antecedents.end(), r.consequent)) ++fanout;
      f[F::kLastFanout] = std::min(fanout, 3) / 3.0;
      f[F::kLastConsequentIsOption] =
          std::find(inst.options.begin(), inst.options.end(), r.consequent) != inst.options.end() ? 1.0 : 0.0;
    }
  }
  for (const Step& st : prefix.steps) {
    if (!st.action.is_apply()) continue;
    if (st.action.index >= space.n_rule_slots) throw ContractViolation("rule index exceeds PRM feature slots");
    f[space.rule_offset() + st.action.index] = 1.0;
  }
  return f;
}

inline Eigen::VectorXd prm_forward(const PRMParams& params, const Eigen::VectorXd& features) {
  return softmax(params.weights * features);
}

inline Eigen::VectorXd prm_forward(const PRMParams& params, const Instance& inst, const Trajectory& prefix,
                                   bool ends_at_state = false) {
  return prm_forward(params, prm_featurize(inst, prefix, ends_at_state, params.space));
}

/// Probability mass on counts >= C.
inline double step_confidence(const Eigen::VectorXd& p, int c) {
  const int k = static_cast<int>(p.size()) - 1;
  if (c < 0 || c > k)
    throw ContractViolation("confidence floor C=" + std::to_string(c) + " outside [0, " + std::to_string(k) + "]");
  if (c == 0) return 1.0;
  return std::min(1.0, std::max(0.0, p.tail(k + 1 - c).sum()));
}

/// Product of per-cut confidences over the trajectory. `confidence(len,
/// anchor)` scores the prefix of length `len`; this form takes stub scorers
/// in tests.
template <typename ConfidenceFn>
double trajectory_reward_with(const Trajectory& t, Anchor anchor, ConfidenceFn&& confidence) {
  double r = 1.0;
  for (const Cut& c : trajectory_cuts(t, anchor)) r *= confidence(c.prefix_len, c.anchor);
  return r;
}

inline double trajectory_reward(const PRMParams& params, const Instance& inst, const Trajectory& t, int c,
                                Anchor anchor = Anchor::action) {
  if (c < 0 || c > params.k) throw ContractViolation("confidence floor C outside [0, K]");
  return trajectory_reward_with(t, anchor, [&](int len, Anchor a) {
    return step_confidence(prm_forward(params, inst, prefix_of(t, len), a == Anchor::state), c);
  });
}

// ---------------------------------------------------------------------------
// Training

struct PrmExample {
  Eigen::VectorXd features;
  int label = 0;
};

struct PrmHyper {
  double lr = 0.5;
  int epochs = 30;
  int batch = 64;
  std::uint64_t seed = 1;
};

struct PrmTrainResult {
  PRMParams params;
  std::vector<double> epoch_loss;  // [0] is the loss before training
};

/// Mean cross-entropy -log p[label] and its gradient (p - e_label) f^T.
inline double prm_loss(const PRMParams& params, const std::vector<PrmExample>& data,
                       Eigen::MatrixXd* grad = nullptr, const std::vector<std::size_t>* subset = nullptr) {
  if (grad) grad->setZero(params.weights.rows(), params.weights.cols());
  const std::size_t n = subset ? subset->size() : data.size();
  if (n == 0) return 0.0;
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const PrmExample& ex = data[subset ? (*subset)[i] : i];
    const Eigen::VectorXd logits = params.weights * ex.features;
    loss -= logits[ex.label] - log_sum_exp(logits);
    if (grad) {
      Eigen::VectorXd d = softmax(logits);
      d[ex.label] -= 1.0;
      grad->noalias() += d * ex.features.transpose();
    }
  }
  if (grad) *grad /= static_cast<double>(n);
  return loss / static_cast<double>(n);
}

/// Plain minibatch gradient descent with a fixed shuffling seed.
inline PrmTrainResult prm_train(const std::vector<PrmExample>& data, int k, const PrmFeatureSpace& space,
                                const PrmHyper& hyper) {
  if (data.empty()) throw std::invalid_argument("prm_train: no training records");
  PrmTrainResult out{PRMParams(k, space), {}};
  for (const auto& ex : data) {
    if (ex.label < 0 || ex.label > k) throw std::invalid_argument("prm_train: label outside [0, K]");
    if (ex.features.size() != space.size()) throw std::invalid_argument("prm_train: feature size mismatch");
  }
  out.epoch_loss.push_back(prm_loss(out.params, data));
  Rng rng(mix_seed(hyper.seed, 0x70726d));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(std::max(1, hyper.batch));
  Eigen::MatrixXd grad;
  for (int e = 0; e < hyper.epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += batch) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + batch)));
      prm_loss(out.params, data, &grad, &idx);
      out.params.weights -= hyper.lr * grad;
    }
    out.epoch_loss.push_back(prm_loss(out.params, data));
  }
  return out;
}

/// Lookup of trajectories by (instance id, sample index).
class TrajectoryIndex {
 public:
  explicit TrajectoryIndex(const std::vector<Trajectory>& ts) : ts_(&ts) {
    for (std::size_t i = 0; i < ts.size(); ++i) index_[{ts[i].instance_id, ts[i].sample_index}] = i;
  }
  const Trajectory& at(const std::string& id, int sample) const {
    auto it = index_.find({id, sample});
    if (it == index_.end())
      throw std::out_of_range("no trajectory " + id + "#" + std::to_string(sample));
    return (*ts_)[it->second];
  }

 private:
  const std::vector<Trajectory>* ts_;
  std::map<std::pair<std::string, int>, std::size_t> index_;
};

/// Rebuilds each record's prefix from its seed trajectory and featurizes it.
inline std::vector<PrmExample> prm_examples(const std::vector<PRMRecord>& records, const Dataset& dataset,
                                            const std::vector<Trajectory>& seeds, const PrmFeatureSpace& space) {
  if (records.empty()) throw std::invalid_argument("prm_train: no training records");
  const int k = records.front().k_used;
  const TrajectoryIndex index(seeds);
  std::vector<PrmExample> out;
  out.reserve(records.size());
  for (const PRMRecord& r : records) {
    if (r.k_used != k)
      throw std::invalid_argument("prm_train: inconsistent k_used (" + std::to_string(r.k_used) + " vs " +
                                  std::to_string(k) + ")");
    if (r.count < 0 || r.count > r.k_used) throw std::invalid_argument("prm_train: count outside [0, k_used]");
    const Trajectory& t = index.at(r.instance_id, r.sample_index);
    out.push_back({prm_featurize(dataset.at(r.instance_id), prefix_of(t, r.prefix_len),
                                 r.anchor == Anchor::state, space),
                   r.count});
  }
  return out;
}

inline PrmTrainResult prm_train(const std::vector<PRMRecord>& records, const Dataset& dataset,
                                const std::vector<Trajectory>& seeds, const PrmFeatureSpace& space,
                                const PrmHyper& hyper) {
  auto examples = prm_examples(records, dataset, seeds, space);
  return prm_train(examples, records.front().k_used, space, hyper);
}

}  // namespace pdpo
