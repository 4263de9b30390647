#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "pdpo/rng.hpp"

namespace pdpo {

/// Raised when a caller breaks an operation's precondition (illegal action,
/// inconsistent trajectory, out-of-range parameter).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Atom = int;

struct Rule {
  std::vector<Atom> antecedents;  // sorted, unique
  Atom consequent = 0;

  bool operator==(const Rule&) const = default;
};

/// A generated Horn-clause deduction problem. Exactly one option is
/// derivable from the base facts by forward chaining.
struct Instance {
  std::string id;
  int n_atoms = 0;
  std::vector<Atom> base_facts;  // sorted
  std::vector<Rule> rules;
  std::vector<Atom> options;
  int answer_index = 0;
  int max_steps = 0;

  int n_options() const { return static_cast<int>(options.size()); }
  int n_rules() const { return static_cast<int>(rules.size()); }

  bool operator==(const Instance&) const = default;
};

/// Set of known atoms, stored as a membership mask over [0, n_atoms).
struct ReasoningState {
  std::vector<std::uint8_t> known;

  bool contains(Atom a) const { return known[static_cast<std::size_t>(a)] != 0; }
  int size() const { return static_cast<int>(std::count(known.begin(), known.end(), 1)); }

  std::vector<Atom> atoms() const {
    std::vector<Atom> out;
    for (std::size_t i = 0; i < known.size(); ++i)
      if (known[i]) out.push_back(static_cast<Atom>(i));
    return out;
  }

  bool operator==(const ReasoningState&) const = default;
};

struct Action {
  enum class Kind : std::uint8_t { apply_rule, finish };

  Kind kind = Kind::finish;
  int index = 0;  // rule index or option index

  static Action apply(int rule) { return {Kind::apply_rule, rule}; }
  static Action finish(int option) { return {Kind::finish, option}; }

  bool is_finish() const { return kind == Kind::finish; }
  bool is_apply() const { return kind == Kind::apply_rule; }

  bool operator==(const Action&) const = default;
  auto operator<=>(const Action&) const = default;
};

struct Step {
  ReasoningState state;  // state before the action
  Action action;

  bool operator==(const Step&) const = default;
};

/// Alternating state/action sequence. A trajectory is `valid` iff it ends
/// with a Finish action within the instance's step budget.
struct Trajectory {
  std::string instance_id;
  std::vector<Step> steps;
  std::optional<int> prediction;
  bool valid = false;
  int sample_index = -1;  // position within its sampling group, -1 if none

  int length() const { return static_cast<int>(steps.size()); }
  bool finished() const { return !steps.empty() && steps.back().action.is_finish(); }

  bool operator==(const Trajectory&) const = default;
};

struct Terminal {
  int prediction = 0;
};

using Transition = std::variant<ReasoningState, Terminal>;

struct GeneratorSpec {
  int n_atoms = 24;
  int n_rules = 10;
  int chain_length = 3;
  int n_distractors = 5;
  int n_options = 4;
  int max_steps = 6;
  int n_base_facts = 3;
  int max_arity = 2;
};

// ---------------------------------------------------------------------------
// Forward chaining

inline ReasoningState initial_state(const Instance& inst) {
  ReasoningState s;
  s.known.assign(static_cast<std::size_t>(inst.n_atoms), 0);
  for (Atom a : inst.base_facts) s.known[static_cast<std::size_t>(a)] = 1;
  return s;
}

inline bool rule_applicable(const Rule& r, const ReasoningState& s) {
  if (s.contains(r.consequent)) return false;
  return std::all_of(r.antecedents.begin(), r.antecedents.end(),
                     [&](Atom a) { return s.contains(a); });
}

/// Fixpoint of all rules from the base facts.
inline ReasoningState forward_closure(const Instance& inst) {
  ReasoningState s = initial_state(inst);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Rule& r : inst.rules) {
      if (rule_applicable(r, s)) {
        s.known[static_cast<std::size_t>(r.consequent)] = 1;
        changed = true;
      }
    }
  }
  return s;
}

/// Canonical order: ApplyRule by rule index, then Finish by option index.
inline std::vector<Action> legal_actions(const Instance& inst, const ReasoningState& s) {
  std::vector<Action> out;
  for (int i = 0; i < inst.n_rules(); ++i)
    if (rule_applicable(inst.rules[static_cast<std::size_t>(i)], s)) out.push_back(Action::apply(i));
  for (int o = 0; o < inst.n_options(); ++o) out.push_back(Action::finish(o));
  return out;
}

inline bool is_legal(const Instance& inst, const ReasoningState& s, const Action& a) {
  if (a.is_finish()) return a.index >= 0 && a.index < inst.n_options();
  if (a.index < 0 || a.index >= inst.n_rules()) return false;
  return rule_applicable(inst.rules[static_cast<std::size_t>(a.index)], s);
}

inline Transition apply_action(const Instance& inst, const ReasoningState& s, const Action& a) {
  if (!is_legal(inst, s, a))
    throw ContractViolation("apply_action: illegal action " +
                            std::string(a.is_finish() ? "Finish(" : "ApplyRule(") +
                            std::to_string(a.index) + ") in instance " + inst.id);
  if (a.is_finish()) return Terminal{a.index};
  ReasoningState next = s;
  next.known[static_cast<std::size_t>(inst.rules[static_cast<std::size_t>(a.index)].consequent)] = 1;
  return next;
}

/// Successor for an ApplyRule action; throws on Finish or illegal actions.
inline ReasoningState next_state(const Instance& inst, const ReasoningState& s, const Action& a) {
  auto t = apply_action(inst, s, a);
  if (auto* st = std::get_if<ReasoningState>(&t)) return std::move(*st);
  throw ContractViolation("next_state: Finish has no successor state");
}

/// State reached after the trajectory's steps (the state a continuation
/// would act from). Meaningless if the trajectory already finished.
inline ReasoningState state_after(const Instance& inst, const Trajectory& t) {
  if (t.steps.empty()) return initial_state(inst);
  const Step& last = t.steps.back();
  if (last.action.is_finish()) return last.state;
  return next_state(inst, last.state, last.action);
}

inline int outcome_reward(const Trajectory& t, const Instance& inst) {
  return (t.valid && t.prediction && *t.prediction == inst.answer_index) ? 1 : 0;
}

/// Checks that states follow from the actions, every action is legal, and
/// Finish only appears last. `complete` additionally requires the
/// prediction/valid fields to agree with the steps.
inline void check_consistent(const Instance& inst, const Trajectory& t, bool complete = true) {
  auto fail = [&](const std::string& why) {
    throw ContractViolation("inconsistent trajectory for " + inst.id + ": " + why);
  };
  if (t.instance_id != inst.id) fail("instance id mismatch (" + t.instance_id + ")");
  if (t.length() > inst.max_steps) fail("longer than max_steps");
  ReasoningState s = initial_state(inst);
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const Step& st = t.steps[i];
    if (!(st.state == s)) fail("state mismatch at step " + std::to_string(i));
    if (!is_legal(inst, s, st.action)) fail("illegal action at step " + std::to_string(i));
    if (st.action.is_finish()) {
      if (i + 1 != t.steps.size()) fail("Finish before the last step");
    } else {
      s = next_state(inst, s, st.action);
    }
  }
  if (!complete) return;
  if (t.finished()) {
    if (!t.valid || t.prediction != t.steps.back().action.index) fail("prediction/valid disagree with Finish");
  } else {
    if (t.valid || t.prediction) fail("unfinished trajectory marked valid");
  }
}

// ---------------------------------------------------------------------------
// Generation

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw GenerationError("infeasible generator spec: " + what);
}

inline std::vector<Atom> pick_distinct(Rng& rng, std::vector<Atom> pool, int n) {
  rng.shuffle(pool);
  pool.resize(static_cast<std::size_t>(std::min<int>(n, static_cast<int>(pool.size()))));
  return pool;
}

inline Rule make_rule(std::vector<Atom> ante, Atom consequent) {
  std::sort(ante.begin(), ante.end());
  ante.erase(std::unique(ante.begin(), ante.end()), ante.end());
  return Rule{std::move(ante), consequent};
}

}  // namespace detail

/// Builds a deduction instance: a gold chain of `chain_length` rules ending at
/// the answer option, distractor rules whose consequents are fresh atoms
/// (never options), and dead-end rules that mention wrong options but depend
/// on an atom that can never be derived.
inline Instance generate_instance(const GeneratorSpec& spec, std::uint64_t seed,
                                  std::string id = {}) {
  using detail::require;
  require(spec.chain_length >= 1, "chain_length >= 1");
  require(spec.n_options >= 2, "n_options >= 2");
  require(spec.n_distractors >= 0, "n_distractors >= 0");
  require(spec.n_base_facts >= 1, "n_base_facts >= 1");
  require(spec.max_arity >= 1, "max_arity >= 1");
  require(spec.max_steps >= spec.chain_length + 1, "max_steps >= chain_length + 1");
  require(spec.n_rules >= spec.chain_length + spec.n_distractors,
          "n_rules >= chain_length + n_distractors");
  const int n_dead_ends = spec.n_rules - spec.chain_length - spec.n_distractors;
  const int needed = spec.n_base_facts + spec.chain_length + spec.n_distractors +
                     (spec.n_options - 1) + (n_dead_ends > 0 ? 1 : 0);
  require(spec.n_atoms >= needed, "n_atoms >= " + std::to_string(needed) +
                                      " (base facts + chain + distractors + wrong options + phantom)");

  Rng rng(mix_seed(seed, 0x67656e));
  std::vector<Atom> perm(static_cast<std::size_t>(spec.n_atoms));
  for (int i = 0; i < spec.n_atoms; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);

  auto take = [&, pos = std::size_t{0}](int n) mutable {
    std::vector<Atom> out(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                          perm.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(n)));
    pos += static_cast<std::size_t>(n);
    return out;
  };
  const std::vector<Atom> base = take(spec.n_base_facts);
  const std::vector<Atom> gold = take(spec.chain_length);
  const std::vector<Atom> distract = take(spec.n_distractors);
  const std::vector<Atom> wrong = take(spec.n_options - 1);
  const std::vector<Atom> phantom = take(n_dead_ends > 0 ? 1 : 0);

  std::vector<Rule> rules;
  auto arity = [&] { return rng.range(1, spec.max_arity); };

  for (int i = 0; i < spec.chain_length; ++i) {
    const Atom link = i == 0 ? base[rng.below(base.size())] : gold[static_cast<std::size_t>(i - 1)];
    std::vector<Atom> pool;
    for (Atom b : base)
      if (b != link) pool.push_back(b);
    std::vector<Atom> ante = detail::pick_distinct(rng, pool, arity() - 1);
    ante.push_back(link);
    rules.push_back(detail::make_rule(std::move(ante), gold[static_cast<std::size_t>(i)]));
  }

  // Distractors draw on base facts, earlier distractors and gold
  // intermediates, so they stay applicable along the whole episode.
  for (int j = 0; j < spec.n_distractors; ++j) {
    std::vector<Atom> pool = base;
    pool.insert(pool.end(), distract.begin(), distract.begin() + j);
    pool.insert(pool.end(), gold.begin(), gold.end() - 1);
    std::vector<Atom> ante = detail::pick_distinct(rng, pool, arity());
    rules.push_back(detail::make_rule(std::move(ante), distract[static_cast<std::size_t>(j)]));
  }

  std::vector<Atom> derivable = base;
  derivable.insert(derivable.end(), gold.begin(), gold.end() - 1);
  derivable.insert(derivable.end(), distract.begin(), distract.end());
  for (int d = 0; d < n_dead_ends; ++d) {
    const Atom consequent = wrong[static_cast<std::size_t>(d) % wrong.size()];
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      std::vector<Atom> ante = detail::pick_distinct(rng, derivable, arity() - 1);
      ante.push_back(phantom[0]);
      Rule r = detail::make_rule(std::move(ante), consequent);
      if (std::find(rules.begin(), rules.end(), r) == rules.end()) {
        rules.push_back(std::move(r));
        placed = true;
      }
    }
    require(placed, "room for " + std::to_string(n_dead_ends) + " distinct dead-end rules");
  }
  rng.shuffle(rules);

  Instance inst;
  inst.id = id.empty() ? "inst-" + std::to_string(seed) : std::move(id);
  inst.n_atoms = spec.n_atoms;
  inst.base_facts = base;
  std::sort(inst.base_facts.begin(), inst.base_facts.end());
  inst.rules = std::move(rules);
  inst.options = wrong;
  inst.options.push_back(gold.back());
  rng.shuffle(inst.options);
  inst.answer_index = static_cast<int>(
      std::find(inst.options.begin(), inst.options.end(), gold.back()) - inst.options.begin());
  inst.max_steps = spec.max_steps;

  const ReasoningState closure = forward_closure(inst);
  for (int o = 0; o < inst.n_options(); ++o) {
    const bool derived = closure.contains(inst.options[static_cast<std::size_t>(o)]);
    if (derived != (o == inst.answer_index))
      throw GenerationError("generated instance violates option uniqueness");
  }
  return inst;
}

/// Shortest solution: backward-chains from the answer to the rules it needs,
/// applies them in dependency order, then finishes with the answer.
inline Trajectory oracle_solve(const Instance& inst) {
  const ReasoningState closure = forward_closure(inst);
  const ReasoningState s0 = initial_state(inst);

  // Producers restricted to rules that fire somewhere in the closure.
  std::map<Atom, std::vector<int>> producers;
  for (int i = 0; i < inst.n_rules(); ++i) {
    const Rule& r = inst.rules[static_cast<std::size_t>(i)];
    bool fires = std::all_of(r.antecedents.begin(), r.antecedents.end(),
                             [&](Atom a) { return closure.contains(a); });
    if (fires) producers[r.consequent].push_back(i);
  }

  // Derivation depth of each atom under the cheapest producer.
  std::map<Atom, int> cost;
  for (Atom a : inst.base_facts) cost[a] = 0;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [atom, rs] : producers) {
      for (int ri : rs) {
        const Rule& r = inst.rules[static_cast<std::size_t>(ri)];
        int c = 1;
        bool ok = true;
        for (Atom a : r.antecedents) {
          auto it = cost.find(a);
          if (it == cost.end()) { ok = false; break; }
          c += it->second;
        }
        if (!ok) continue;
        auto it = cost.find(atom);
        if (it == cost.end() || c < it->second) {
          cost[atom] = c;
          changed = true;
        }
      }
    }
  }

  std::vector<int> order;
  std::set<Atom> planned;
  auto plan = [&](auto&& self, Atom a) -> void {
    if (s0.contains(a) || planned.count(a)) return;
    int best = -1, best_cost = 0;
    for (int ri : producers.at(a)) {
      const Rule& r = inst.rules[static_cast<std::size_t>(ri)];
      int c = 1;
      bool ok = true;
      for (Atom x : r.antecedents) {
        auto it = cost.find(x);
        if (it == cost.end()) { ok = false; break; }
        c += it->second;
      }
      if (ok && (best < 0 || c < best_cost)) { best = ri; best_cost = c; }
    }
    for (Atom x : inst.rules[static_cast<std::size_t>(best)].antecedents) self(self, x);
    planned.insert(a);
    order.push_back(best);
  };
  plan(plan, inst.options[static_cast<std::size_t>(inst.answer_index)]);

  Trajectory t;
  t.instance_id = inst.id;
  ReasoningState s = s0;
  for (int ri : order) {
    t.steps.push_back({s, Action::apply(ri)});
    s = next_state(inst, s, Action::apply(ri));
  }
  t.steps.push_back({s, Action::finish(inst.answer_index)});
  t.prediction = inst.answer_index;
  t.valid = true;
  return t;
}

/// Instances keyed by id, preserving insertion order.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<Instance> items) : items_(std::move(items)) { reindex(); }

  const std::vector<Instance>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const Instance& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  const Instance& at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw std::out_of_range("unknown instance id: " + id);
    return items_[it->second];
  }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  std::size_t position(const std::string& id) const { return index_.at(id); }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < items_.size(); ++i) {
      if (!index_.emplace(items_[i].id, i).second)
        throw std::invalid_argument("duplicate instance id: " + items_[i].id);
    }
  }

  std::vector<Instance> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace pdpo
