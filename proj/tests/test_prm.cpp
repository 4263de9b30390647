#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pdpo/prm.hpp"
#include "support.hpp"

using namespace pdpo;
using namespace testing_support;
using P = PrmFeatureSpace;

namespace {

const PrmFeatureSpace kPrm{16};
const PolicyFeatureSpace kPolicy{4, 16};

PRMParams random_prm(int k, Rng& rng, double scale = 1.0) {
  PRMParams p(k, kPrm);
  for (Eigen::Index r = 0; r < p.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c) p.weights(r, c) = scale * (2 * rng.uniform() - 1);
  return p;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (static_cast<double>(i) + static_cast<double>(j)) / 2;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

int binomial(int k, double q, Rng& rng) {
  int c = 0;
  for (int i = 0; i < k; ++i) c += rng.uniform() < q ? 1 : 0;
  return c;
}

}  // namespace

TEST(PrmFeaturize, EmptyPrefixHasZeroLength) {
  const Instance inst = tiny_instance();
  const Trajectory empty{inst.id, {}, {}, false, 0};
  const auto f = prm_featurize(inst, empty, false, kPrm);
  EXPECT_EQ(f[P::kPrefixLen], 0.0);
  EXPECT_EQ(f, prm_featurize(inst, empty, false, kPrm));
}

TEST(PrmFeaturize, RepeatableAndFinite) {
  const Instance inst = generate_instance(default_spec(3), 2);
  const Trajectory t = oracle_solve(inst);
  for (int len = 0; len <= t.length(); ++len) {
    const auto f = prm_featurize(inst, prefix_of(t, len), false, kPrm);
    EXPECT_TRUE(f.allFinite());
    EXPECT_EQ(f, prm_featurize(inst, prefix_of(t, len), false, kPrm));
  }
}

TEST(PrmFeaturize, BlindToWhichOptionIsTheAnswer) {
  // Relabelling options (and the answer index with them) or moving the
  // answer index alone must not change any feature.
  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Instance inst = generate_instance(default_spec(3), seed);
    const Trajectory t = sample_trajectory(random_policy(kPolicy, rng), inst, 1.0, rng);
    std::vector<int> perm(static_cast<std::size_t>(inst.n_options()));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Instance relabelled = inst;
    for (int o = 0; o < inst.n_options(); ++o)
      relabelled.options[static_cast<std::size_t>(perm[static_cast<std::size_t>(o)])] = inst.options[static_cast<std::size_t>(o)];
    relabelled.answer_index = perm[static_cast<std::size_t>(inst.answer_index)];
    Instance moved = inst;
    moved.answer_index = (inst.answer_index + 1) % inst.n_options();
    for (int len = 0; len <= t.length(); ++len) {
      Trajectory p = prefix_of(t, len);
      Trajectory q = p;
      for (Step& st : q.steps)
        if (st.action.is_finish()) st.action.index = perm[static_cast<std::size_t>(st.action.index)];
      if (q.prediction) q.prediction = q.steps.back().action.index;
      for (bool at_state : {false, true}) {
        const auto f = prm_featurize(inst, p, at_state, kPrm);
        EXPECT_EQ(f, prm_featurize(relabelled, q, at_state, kPrm));
        EXPECT_EQ(f, prm_featurize(moved, p, at_state, kPrm));
      }
    }
  }
}

TEST(PrmForward, ZeroWeightsAreUniform) {
  const Instance inst = tiny_instance();
  const auto p = prm_forward(PRMParams(10, kPrm), inst, Trajectory{inst.id, {}, {}, false, 0});
  ASSERT_EQ(p.size(), 11);
  for (Eigen::Index i = 0; i < 11; ++i) EXPECT_NEAR(p[i], 1.0 / 11, 1e-15);
}

TEST(StepConfidence, HandComputedValues) {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(11);
  p[0] = 0.5;
  p[1] = 0.3;
  p[2] = 0.2;
  EXPECT_NEAR(step_confidence(p, 2), 0.2, 1e-12);
  EXPECT_EQ(step_confidence(p, 0), 1.0);
  EXPECT_NEAR(step_confidence(Eigen::VectorXd::Constant(11, 1.0 / 11), 2), 9.0 / 11, 1e-12);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd q(11);
    for (Eigen::Index j = 0; j < 11; ++j) q[j] = rng.uniform();
    q /= q.sum();
    EXPECT_EQ(step_confidence(q, 0), 1.0);
  }
}

TEST(StepConfidence, FloorOutOfRangeIsAnError) {
  const Eigen::VectorXd p = Eigen::VectorXd::Constant(11, 1.0 / 11);
  EXPECT_THROW(step_confidence(p, -1), ContractViolation);
  EXPECT_THROW(step_confidence(p, 11), ContractViolation);
  EXPECT_NO_THROW(step_confidence(p, 10));
}

TEST(TrajectoryReward, StubProducts) {
  const Instance inst = tiny_instance();
  const Trajectory two = make_trajectory(inst, {Action::apply(0), Action::finish(1)});
  EXPECT_EQ(trajectory_reward_with(two, Anchor::action, [](int, Anchor) { return 1.0; }), 1.0);

  const double d_action[] = {0, 0.8, 0.5};
  EXPECT_NEAR(trajectory_reward_with(two, Anchor::action, [&](int len, Anchor) { return d_action[len]; }), 0.4,
              1e-12);

  // Cuts in order: state(0), action(1), state(1), action(2).
  std::vector<std::pair<int, Anchor>> seen;
  const double both = trajectory_reward_with(two, Anchor::both, [&](int len, Anchor a) {
    seen.emplace_back(len, a);
    return a == Anchor::state ? 0.9 : 0.8;
  });
  EXPECT_NEAR(both, 0.5184, 1e-12);
  const std::vector<std::pair<int, Anchor>> want{
      {0, Anchor::state}, {1, Anchor::action}, {1, Anchor::state}, {2, Anchor::action}};
  EXPECT_EQ(seen, want);
}

TEST(TrajectoryReward, UsesPrmConfidencesPerCut) {
  // With zero weights every cut has d = (K+1-C)/(K+1).
  const Instance inst = tiny_instance();
  const Trajectory t = make_trajectory(inst, {Action::apply(0), Action::apply(1), Action::finish(1)});
  const PRMParams zero(10, kPrm);
  EXPECT_NEAR(trajectory_reward(zero, inst, t, 2), std::pow(9.0 / 11, 3), 1e-12);
  EXPECT_NEAR(trajectory_reward(zero, inst, t, 2, Anchor::both), std::pow(9.0 / 11, 6), 1e-12);
  EXPECT_THROW(trajectory_reward(zero, inst, t, 11), ContractViolation);
}

TEST(TrajectoryReward, BoundedMonotoneAndTrivialAtZeroFloor) {
  Rng rng(12);
  for (int draw = 0; draw < 50; ++draw) {
    const Instance inst = generate_instance(default_spec(3), static_cast<std::uint64_t>(draw));
    const PRMParams prm = random_prm(10, rng, 2.0);
    const Trajectory t = sample_trajectory(random_policy(kPolicy, rng), inst, 1.0, rng);
    EXPECT_EQ(trajectory_reward(prm, inst, t, 0), 1.0);
    double prev = 1.0;
    for (int len = 1; len <= t.length(); ++len) {
      const double r = trajectory_reward(prm, inst, prefix_of(t, len), 2);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, prev);
      prev = r;
    }
  }
}

TEST(PrmTrain, InitialLossIsLogClassCount) {
  Rng rng(2);
  std::vector<PrmExample> data;
  for (int i = 0; i < 40; ++i) {
    Eigen::VectorXd f(kPrm.size());
    for (Eigen::Index j = 0; j < f.size(); ++j) f[j] = rng.uniform();
    data.push_back({f, static_cast<int>(rng.below(11))});
  }
  PrmHyper h;
  h.epochs = 1;
  const auto r = prm_train(data, 10, kPrm, h);
  EXPECT_NEAR(r.epoch_loss.front(), std::log(11.0), 1e-10);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(PrmTrain, SingleRecordIsFitted) {
  const Dataset ds({generate_instance(default_spec(3), 1, "a")});
  Trajectory t = oracle_solve(ds[0]);
  t.sample_index = 0;
  const std::vector<PRMRecord> recs{{"a", 0, 2, Anchor::action, 7, 10}};
  PrmHyper h;
  h.epochs = 500;
  h.lr = 1.0;
  const auto r = prm_train(recs, ds, {t}, kPrm, h);
  EXPECT_GT(prm_forward(r.params, ds[0], prefix_of(t, 2))[7], 0.99);
}

TEST(PrmTrain, SeparableClassesReachHighAccuracy) {
  Rng rng(3);
  std::vector<PrmExample> data;
  for (int i = 0; i < 400; ++i) {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(kPrm.size());
    const int label = (i % 2) ? 9 : 1;
    f[P::kBias] = 1;
    f[P::kPrefixLen] = (label == 9 ? 1.0 : -1.0) * (0.5 + rng.uniform());
    f[P::kKnownFraction] = rng.uniform();
    data.push_back({f, label});
  }
  PrmHyper h;
  h.epochs = 60;
  const auto r = prm_train(data, 10, kPrm, h);
  int correct = 0;
  for (const auto& ex : data) {
    Eigen::Index top;
    prm_forward(r.params, ex.features).maxCoeff(&top);
    correct += top == ex.label ? 1 : 0;
  }
  EXPECT_GT(correct / 400.0, 0.9);
}

TEST(PrmTrain, InconsistentKIsAnError) {
  const Dataset ds({generate_instance(default_spec(3), 1, "a")});
  Trajectory t = oracle_solve(ds[0]);
  t.sample_index = 0;
  const std::vector<PRMRecord> recs{{"a", 0, 1, Anchor::action, 3, 10}, {"a", 0, 2, Anchor::action, 3, 5}};
  EXPECT_THROW(prm_train(recs, ds, {t}, kPrm, PrmHyper{}), std::invalid_argument);
  EXPECT_THROW(prm_train(std::vector<PRMRecord>{}, ds, {t}, kPrm, PrmHyper{}), std::invalid_argument);
}

TEST(PrmTrain, BitReproducibleUnderFixedSeed) {
  Rng rng(5);
  std::vector<PrmExample> data;
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd f(kPrm.size());
    for (Eigen::Index j = 0; j < f.size(); ++j) f[j] = rng.uniform();
    data.push_back({f, static_cast<int>(rng.below(11))});
  }
  PrmHyper h;
  h.epochs = 5;
  h.batch = 16;
  const auto a = prm_train(data, 10, kPrm, h);
  const auto b = prm_train(data, 10, kPrm, h);
  EXPECT_TRUE((a.params.weights.array() == b.params.weights.array()).all());
  h.seed = 2;
  EXPECT_FALSE((a.params.weights.array() == prm_train(data, 10, kPrm, h).params.weights.array()).all());
}

TEST(PrmLoss, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  for (int draw = 0; draw < 20; ++draw) {
    const PRMParams prm = random_prm(10, rng);
    std::vector<PrmExample> data;
    for (int i = 0; i < 5; ++i) {
      Eigen::VectorXd f(kPrm.size());
      for (Eigen::Index j = 0; j < f.size(); ++j) f[j] = rng.uniform();
      data.push_back({f, static_cast<int>(rng.below(11))});
    }
    Eigen::MatrixXd g;
    prm_loss(prm, data, &g);
    const Eigen::VectorXd flat = prm.weights.reshaped();
    auto f = [&](const Eigen::VectorXd& w) {
      PRMParams q = prm;
      q.weights = w.reshaped(prm.weights.rows(), prm.weights.cols());
      return prm_loss(q, data);
    };
    EXPECT_LT(check_gradient(f, flat, g.reshaped()), 1e-4);
  }
}

TEST(PrmTrain, ExpectedCountTracksTrueSuccessProbability) {
  // Records drawn as Binomial(10, q) with q the exact success probability of
  // the prefix under a fixed policy; held-out prefixes check the ranking.
  Rng rng(21);
  // Biased toward rule firing so that prefixes carry derivation progress.
  PolicyParams policy = random_policy(kPolicy, rng, 0.5);
  policy.weights[PolicyFeatureSpace::kApplyBias] += 1.5;
  struct Item {
    Eigen::VectorXd f;
    double q;
  };
  std::vector<Item> items;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const Instance inst = generate_instance(default_spec(2), seed);
    for (int s = 0; s < 4; ++s) {
      const Trajectory t = sample_trajectory(policy, inst, 1.0, rng);
      // Unfinished prefixes only: a final guess's correctness is not
      // visible to answer-blind features.
      for (int len = 0; len < t.length(); ++len) {
        const Trajectory p = prefix_of(t, len);
        const double q =
            static_cast<double>(enumerate_success(policy, inst, state_after(inst, p), p.length(), 1.0));
        items.push_back({prm_featurize(inst, p, false, kPrm), q});
      }
    }
  }
  const std::size_t n_train = items.size() * 3 / 4;
  std::vector<PrmExample> train;
  for (std::size_t i = 0; i < n_train; ++i) train.push_back({items[i].f, binomial(10, items[i].q, rng)});
  PrmHyper h;
  h.epochs = 40;
  const PRMParams prm = prm_train(train, 10, kPrm, h).params;
  std::vector<double> expected, truth;
  for (std::size_t i = n_train; i < items.size(); ++i) {
    const Eigen::VectorXd p = prm_forward(prm, items[i].f);
    double e = 0;
    for (Eigen::Index c = 0; c < p.size(); ++c) e += static_cast<double>(c) * p[c];
    expected.push_back(e);
    truth.push_back(items[i].q);
  }
  // A linear head over these features plateaus near 0.5; under no signal the
  // coefficient's standard error here is about 0.035.
  EXPECT_GT(spearman(expected, truth), 0.3);
}
