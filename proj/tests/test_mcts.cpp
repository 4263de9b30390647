#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "pdpo/mcts.hpp"
#include "support.hpp"

using namespace pdpo;
using namespace testing_support;

namespace {

const PolicyFeatureSpace kSpace{4, 16};

void for_each_node(const SearchNode& n, const std::function<void(const SearchNode&)>& fn) {
  fn(n);
  for (const auto& c : n.children)
    if (c) for_each_node(*c, fn);
}

std::int64_t child_visits(const SearchNode& n) {
  std::int64_t total = 0;
  for (const auto& c : n.children)
    if (c) total += c->visits;
  return total;
}

// Depth-2 problems: one gold rule, one distractor, two steps of budget.
GeneratorSpec depth2_spec() {
  GeneratorSpec g;
  g.n_atoms = 12;
  g.chain_length = 1;
  g.n_distractors = 1;
  g.n_rules = 2;
  g.max_steps = 2;
  return g;
}

}  // namespace

TEST(Mcts, SingleLegalPathIsFound) {
  GeneratorSpec g;
  g.chain_length = 1;
  g.n_distractors = 0;
  g.n_rules = 1;
  g.n_options = 2;
  g.max_steps = 2;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Instance inst = generate_instance(g, seed);
    Rng rng(seed);
    const MctsResult r = mcts_plan(PolicyParams(kSpace), inst, MctsConfig{16, std::sqrt(2.0), 1.0}, rng);
    EXPECT_EQ(outcome_reward(r.trajectory, inst), 1);
    check_consistent(inst, r.trajectory);
  }
}

TEST(Mcts, VisitAccountingAndValueBounds) {
  Rng wrng(1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Instance inst = generate_instance(default_spec(3), seed);
    const PolicyParams p = random_policy(kSpace, wrng);
    for (int budget : {1, 2, 7, 30, 100}) {
      Rng rng(seed);
      const MctsResult r = mcts_plan(p, inst, MctsConfig{budget, std::sqrt(2.0), 1.0}, rng);
      EXPECT_EQ(r.root->visits, budget);
      EXPECT_EQ(child_visits(*r.root), budget);
      for_each_node(*r.root, [](const SearchNode& n) {
        EXPECT_GE(n.value_sum, 0.0);
        EXPECT_LE(n.value_sum, static_cast<double>(n.visits));
        if (!n.terminal && !n.children.empty()) EXPECT_LE(child_visits(n), n.visits);
      });
      check_consistent(inst, r.trajectory);
    }
  }
}

TEST(Mcts, RootVisitsGrowByOnePerSimulation) {
  const Instance inst = generate_instance(default_spec(2), 4);
  for (int b = 1; b <= 25; ++b) {
    Rng rng(9);
    EXPECT_EQ(mcts_plan(PolicyParams(kSpace), inst, MctsConfig{b, 1.0, 1.0}, rng).root->visits, b);
  }
}

TEST(Mcts, GreedySelectionSettlesOnTheAlwaysWinningChild) {
  // c = 0: once every child has been tried, search keeps returning to the
  // child whose every simulation succeeds, Finish(answer).
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Instance inst = generate_instance(default_spec(2), seed);
    Rng rng(seed);
    const MctsResult r = mcts_plan(PolicyParams(kSpace), inst, MctsConfig{300, 0.0, 0.05}, rng);
    const auto& root = *r.root;
    std::size_t winner = 0;
    for (std::size_t i = 0; i < root.actions.size(); ++i)
      if (root.actions[i] == Action::finish(inst.answer_index)) winner = i;
    for (std::size_t i = 0; i < root.children.size(); ++i)
      EXPECT_LE(root.children[i]->visits, root.children[winner]->visits) << inst.id;
    EXPECT_EQ(root.children[winner]->q(), 1.0);
    EXPECT_EQ(outcome_reward(r.trajectory, inst), 1);
  }
}

TEST(Mcts, RootValuesConvergeToBestAchievableSuccess) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Instance inst = generate_instance(depth2_spec(), seed);
    Rng rng(seed);
    const MctsResult r = mcts_plan(PolicyParams(kSpace), inst, MctsConfig{5000, std::sqrt(2.0), 1.0}, rng);
    for (std::size_t i = 0; i < r.root->children.size(); ++i) {
      const SearchNode& c = *r.root->children[i];
      const double truth = c.incoming.is_finish() ? (c.incoming.index == inst.answer_index ? 1.0 : 0.0)
                                                  : enumerate_best(inst, c.state, 1);
      EXPECT_NEAR(c.q(), truth, 0.05) << inst.id << " child " << i;
    }
  }
}

TEST(Mcts, DeterministicUnderFixedSeed) {
  const Instance inst = generate_instance(default_spec(4), 3);
  Rng wrng(2);
  const PolicyParams p = random_policy(kSpace, wrng);
  Rng a(77), b(77);
  const MctsResult x = mcts_plan(p, inst, MctsConfig{}, a);
  const MctsResult y = mcts_plan(p, inst, MctsConfig{}, b);
  EXPECT_EQ(x.trajectory, y.trajectory);
  EXPECT_EQ(x.cost.n_policy_evals, y.cost.n_policy_evals);
  for (std::size_t i = 0; i < x.root->children.size(); ++i) {
    EXPECT_EQ(x.root->children[i]->visits, y.root->children[i]->visits);
    EXPECT_EQ(x.root->children[i]->value_sum, y.root->children[i]->value_sum);
  }
}

TEST(Mcts, CostCountersAtBudgetHundred) {
  // Every simulation moves at least one step; every expanded node was one
  // policy call. Revisiting a cached terminal leaf costs no policy call, so
  // small trees can come in under the budget in policy evaluations.
  Rng wrng(5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Instance inst = generate_instance(default_spec(3), seed);
    const PolicyParams p = random_policy(kSpace, wrng);
    Rng rng(1);
    const MctsResult r = mcts_plan(p, inst, MctsConfig{100, std::sqrt(2.0), 1.0}, rng);
    std::int64_t expanded = -1;  // the root is not an expansion
    for_each_node(*r.root, [&](const SearchNode&) { ++expanded; });
    EXPECT_GE(r.cost.n_env_steps, 100);
    EXPECT_GE(r.cost.n_policy_evals, expanded);
    EXPECT_GE(r.cost.wall_time, 0.0);
  }
}

TEST(Mcts, BudgetBelowOneIsRejected) {
  const Instance inst = tiny_instance();
  Rng rng(1);
  EXPECT_THROW(mcts_plan(PolicyParams(kSpace), inst, MctsConfig{0, 1.0, 1.0}, rng), ContractViolation);
}
