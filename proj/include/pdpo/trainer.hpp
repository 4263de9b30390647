#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pdpo/env.hpp"
#include "pdpo/numeric.hpp"
#include "pdpo/parallel.hpp"
#include "pdpo/policy.hpp"
#include "pdpo/prefs.hpp"
#include "pdpo/rng.hpp"

namespace pdpo {

struct TrainConfig {
  double beta = 0.1;
  double lr = 0.5;
  int epochs = 10;
  int batch = 32;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, int batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  const auto b = static_cast<std::size_t>(std::max(1, batch));
  for (std::size_t i = 0; i < n; i += b)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + b)));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Supervised warm start

/// Negative mean trajectory log-likelihood of the demos over `subset` (all
/// demos when null), with its gradient.
inline double sft_loss(const PolicyParams& params, const std::vector<Trajectory>& demos, const Dataset& dataset,
                       Eigen::VectorXd* grad = nullptr, const std::vector<std::size_t>* subset = nullptr) {
  const std::size_t n = subset ? subset->size() : demos.size();
  if (grad) grad->setZero(params.n_features());
  if (n == 0) return 0.0;
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& t = demos[subset ? (*subset)[i] : i];
    LogProbGrad lg = trajectory_logprob_grad(params, dataset.at(t.instance_id), t, grad != nullptr);
    loss -= lg.logprob;
    if (grad) *grad -= lg.grad;
  }
  if (grad) *grad /= static_cast<double>(n);
  return loss / static_cast<double>(n);
}

struct SftResult {
  PolicyParams params;
  std::vector<double> epoch_loss;  // [0] before training
};

/// Maximizes the demos' log-likelihood by minibatch gradient ascent.
inline SftResult train_sft(const PolicyFeatureSpace& space, const std::vector<Trajectory>& demos,
                           const Dataset& dataset, const TrainConfig& config) {
  SftResult out{PolicyParams(space), {}};
  if (demos.empty()) return out;
  out.epoch_loss.push_back(sft_loss(out.params, demos, dataset));
  Rng rng(mix_seed(config.seed, 0x736674));
  Eigen::VectorXd grad;
  for (int e = 0; e < config.epochs; ++e) {
    for (const auto& batch : detail::minibatches(demos.size(), config.batch, rng)) {
      sft_loss(out.params, demos, dataset, &grad, &batch);
      out.params.weights -= config.lr * grad;
    }
    out.epoch_loss.push_back(sft_loss(out.params, demos, dataset));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Direct preference optimization

/// A pair with the reference log-likelihoods resolved once.
struct PreparedPair {
  const Instance* instance;
  const PreferencePair* pair;
  double ref_chosen;
  double ref_rejected;
};

inline PreparedPair prepare_pair(const PolicySnapshot& ref, const PreferencePair& pair, const Dataset& dataset) {
  const Instance& inst = dataset.at(pair.instance_id);
  return {&inst, &pair, trajectory_logprob(ref.params(), inst, pair.chosen),
          trajectory_logprob(ref.params(), inst, pair.rejected)};
}

struct DpoTerm {
  double loss = 0;
  double margin = 0;  // beta * (chosen log-ratio - rejected log-ratio)
  Eigen::VectorXd grad;
};

/// -log sigmoid(margin); d loss / d margin = -sigmoid(-margin).
inline DpoTerm dpo_term(const PolicyParams& params, const PreparedPair& p, double beta, bool with_grad = true) {
  const LogProbGrad w = trajectory_logprob_grad(params, *p.instance, p.pair->chosen, with_grad);
  const LogProbGrad l = trajectory_logprob_grad(params, *p.instance, p.pair->rejected, with_grad);
  DpoTerm out;
  out.margin = beta * ((w.logprob - p.ref_chosen) - (l.logprob - p.ref_rejected));
  out.loss = -log_sigmoid(out.margin);
  if (with_grad) out.grad = (-sigmoid(-out.margin) * beta) * (w.grad - l.grad);
  return out;
}

inline double dpo_loss(const PolicyParams& params, const PolicySnapshot& ref, const PreferencePair& pair,
                       double beta, const Dataset& dataset) {
  if (!(beta > 0)) throw ContractViolation("beta must be positive");
  return dpo_term(params, prepare_pair(ref, pair, dataset), beta, false).loss;
}

struct DpoEpochMetrics {
  int epoch = 0;
  double loss = 0;
  double preference_accuracy = 0;
  std::optional<double> dev_accuracy;
};

struct DpoResult {
  PolicyParams params;  // best checkpoint by dev accuracy, else the last one
  PolicyParams last;
  int best_epoch = 0;
  std::vector<DpoEpochMetrics> metrics;  // entry 0 describes the reference policy
};

/// Mean loss and fraction of pairs whose chosen log-ratio beats the rejected one.
inline std::pair<double, double> dpo_summary(const PolicyParams& params, const std::vector<PreparedPair>& pairs,
                                             double beta) {
  std::vector<DpoTerm> terms(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) { terms[i] = dpo_term(params, pairs[i], beta, false); });
  double loss = 0, correct = 0;
  for (const auto& t : terms) {
    loss += t.loss;
    correct += t.margin > 0 ? 1 : 0;
  }
  const auto n = static_cast<double>(pairs.size());
  return {loss / n, correct / n};
}

/// Snapshots `init` as the reference and minimizes the mean DPO loss by
/// minibatch gradient descent. When `dev_accuracy` is given every epoch's
/// checkpoint is scored with it and the best one is kept. `on_epoch` sees
/// every epoch's weights (for checkpointing).
inline DpoResult train_dpo(const PolicyParams& init, const std::vector<PreferencePair>& pairs,
                           const Dataset& dataset, const TrainConfig& config,
                           const std::function<double(const PolicyParams&)>& dev_accuracy = {},
                           const std::function<void(int, const PolicyParams&)>& on_epoch = {}) {
  if (pairs.empty()) throw std::invalid_argument("train_dpo: empty preference dataset");
  if (!(config.beta > 0)) throw ContractViolation("beta must be positive");
  const PolicySnapshot ref(init);
  std::vector<PreparedPair> prepared(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) { prepared[i] = prepare_pair(ref, pairs[i], dataset); });

  DpoResult out{init, init, 0, {}};
  PolicyParams params = init;
  {
    auto [loss, acc] = dpo_summary(params, prepared, config.beta);
    out.metrics.push_back({0, loss, acc, std::nullopt});
  }
  std::optional<double> best_dev;
  Rng rng(mix_seed(config.seed, 0x64706f));
  std::vector<DpoTerm> terms;
  for (int e = 1; e <= config.epochs; ++e) {
    for (const auto& batch : detail::minibatches(prepared.size(), config.batch, rng)) {
      terms.assign(batch.size(), {});
      parallel_for(batch.size(), [&](std::size_t i) { terms[i] = dpo_term(params, prepared[batch[i]], config.beta); });
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.n_features());
      for (const auto& t : terms) grad += t.grad;
      params.weights -= (config.lr / static_cast<double>(batch.size())) * grad;
    }
    auto [loss, acc] = dpo_summary(params, prepared, config.beta);
    DpoEpochMetrics m{e, loss, acc, std::nullopt};
    if (on_epoch) on_epoch(e, params);
    if (dev_accuracy) {
      m.dev_accuracy = dev_accuracy(params);
      if (!best_dev || *m.dev_accuracy > *best_dev) {
        best_dev = m.dev_accuracy;
        out.params = params;
        out.best_epoch = e;
      }
    }
    out.metrics.push_back(m);
  }
  out.last = params;
  if (!dev_accuracy) {
    out.params = params;
    out.best_epoch = config.epochs;
  }
  return out;
}

}  // namespace pdpo
