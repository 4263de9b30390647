#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "pdpo/env.hpp"
#include "pdpo/policy.hpp"
#include "pdpo/rng.hpp"

namespace pdpo {

struct MctsConfig {
  int budget = 100;
  double c_uct = std::sqrt(2.0);
  double rollout_temperature = 1.0;
};

/// Tree node for the state reached after `depth` actions. Children are
/// indexed like `actions` (canonical legal order) and created on first visit.
struct SearchNode {
  ReasoningState state;
  int depth = 0;
  bool terminal = false;
  double terminal_value = 0;  // r_f of the finished (or truncated) episode
  Action incoming{};
  std::vector<Action> actions;
  std::vector<std::unique_ptr<SearchNode>> children;
  std::int64_t visits = 0;
  double value_sum = 0;

  double q() const { return visits > 0 ? value_sum / static_cast<double>(visits) : 0.0; }
};

struct MctsResult {
  Trajectory trajectory;
  std::unique_ptr<SearchNode> root;
  PlanningCost cost;
};

namespace detail {

inline std::unique_ptr<SearchNode> make_child(const Instance& inst, const SearchNode& parent, const Action& a) {
  auto child = std::make_unique<SearchNode>();
  child->depth = parent.depth + 1;
  child->incoming = a;
  if (a.is_finish()) {
    child->state = parent.state;
    child->terminal = true;
    child->terminal_value = a.index == inst.answer_index ? 1.0 : 0.0;
  } else {
    child->state = next_state(inst, parent.state, a);
    if (child->depth >= inst.max_steps) {
      child->terminal = true;  // step budget exhausted without Finish
      child->terminal_value = 0.0;
    }
  }
  return child;
}

inline Trajectory path_prefix(const Instance& inst, const std::vector<SearchNode*>& path) {
  Trajectory t;
  t.instance_id = inst.id;
  for (std::size_t i = 1; i < path.size(); ++i) t.steps.push_back({path[i - 1]->state, path[i]->incoming});
  return t;
}

}  // namespace detail

/// UCT search: select (unvisited children first, in canonical order; then
/// argmax Q + c * sqrt(ln N_parent / N_child)), expand one child, roll out
/// with the policy, back up r_f. The returned trajectory follows the most
/// visited child from the root; below the explored tree it continues
/// greedily.
inline MctsResult mcts_plan(const PolicyParams& params, const Instance& inst, const MctsConfig& config, Rng& rng) {
  if (config.budget < 1) throw ContractViolation("MCTS budget must be >= 1");
  MctsResult out;
  ScopedTimer timer(&out.cost);
  out.root = std::make_unique<SearchNode>();
  out.root->state = initial_state(inst);
  PlanningCost& cost = out.cost;

  auto ensure_actions = [&](SearchNode& n) {
    if (n.actions.empty()) {
      n.actions = legal_actions(inst, n.state);
      n.children.resize(n.actions.size());
    }
  };

  std::vector<SearchNode*> path;
  for (int sim = 0; sim < config.budget; ++sim) {
    path.assign(1, out.root.get());
    SearchNode* node = out.root.get();
    double value = 0;
    while (true) {
      if (node->terminal) {
        value = node->terminal_value;
        break;
      }
      ensure_actions(*node);
      std::size_t pick = node->children.size();
      for (std::size_t i = 0; i < node->children.size(); ++i) {
        if (!node->children[i]) {
          pick = i;
          break;
        }
      }
      if (pick < node->children.size()) {
        // Expansion: proposing the action costs one policy call.
        node->children[pick] = detail::make_child(inst, *node, node->actions[pick]);
        ++cost.n_policy_evals;
        ++cost.n_env_steps;
        SearchNode* child = node->children[pick].get();
        path.push_back(child);
        if (child->terminal) {
          value = child->terminal_value;
        } else {
          Trajectory done = sample_trajectory(params, inst, config.rollout_temperature, rng,
                                              detail::path_prefix(inst, path), &cost);
          value = outcome_reward(done, inst);
        }
        break;
      }
      const double log_n = std::log(static_cast<double>(node->visits));
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < node->children.size(); ++i) {
        const SearchNode& c = *node->children[i];
        const double u = c.q() + config.c_uct * std::sqrt(log_n / static_cast<double>(c.visits));
        if (u > best) {
          best = u;
          pick = i;
        }
      }
      node = node->children[pick].get();
      ++cost.n_env_steps;
      path.push_back(node);
    }
    for (SearchNode* n : path) {
      ++n->visits;
      n->value_sum += value;
    }
  }

  // Extract the most-visited line.
  std::vector<SearchNode*> line{out.root.get()};
  SearchNode* node = out.root.get();
  while (!node->terminal && !node->children.empty()) {
    SearchNode* best = nullptr;
    for (const auto& c : node->children)
      if (c && c->visits > 0 && (!best || c->visits > best->visits)) best = c.get();
    if (!best) break;
    line.push_back(best);
    node = best;
  }
  Trajectory t = detail::path_prefix(inst, line);
  if (node->terminal) {
    if (t.finished()) {
      t.prediction = t.steps.back().action.index;
      t.valid = true;
    }
    out.trajectory = std::move(t);
  } else {
    out.trajectory = greedy_continue(params, inst, std::move(t), &cost);
  }
  return out;
}

}  // namespace pdpo
