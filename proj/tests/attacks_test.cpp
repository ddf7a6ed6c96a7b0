#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "klid/attacks.hpp"
#include "test_support.hpp"

namespace {

klid::Dataset attack_dataset(int n, std::uint64_t seed, double noise = 0.6) {
  return klid::generate_synthetic(klid::SyntheticKind::two_gaussians, n, noise, seed);
}

// Rows outside the mask must be bit-identical to the input.
void expect_untouched_outside_mask(const klid::Dataset& before, const klid::Dataset& after,
                                   const std::vector<int>& mask) {
  const std::set<int> touched(mask.begin(), mask.end());
  ASSERT_GE(after.n(), before.n());
  for (int i = 0; i < before.n(); ++i) {
    if (touched.count(i)) continue;
    EXPECT_EQ(before.labels[static_cast<std::size_t>(i)], after.labels[static_cast<std::size_t>(i)]);
    EXPECT_EQ(before.ids[static_cast<std::size_t>(i)], after.ids[static_cast<std::size_t>(i)]);
    for (int j = 0; j < before.dim(); ++j) EXPECT_EQ(before.features(i, j), after.features(i, j));
  }
}

void expect_same_attack(const klid::AttackResult& a, const klid::AttackResult& b) {
  EXPECT_EQ(a.mask, b.mask);
  ASSERT_EQ(a.dataset.n(), b.dataset.n());
  for (int i = 0; i < a.dataset.n(); ++i) {
    EXPECT_EQ(a.dataset.labels[static_cast<std::size_t>(i)], b.dataset.labels[static_cast<std::size_t>(i)]);
    for (int j = 0; j < a.dataset.dim(); ++j)
      EXPECT_EQ(a.dataset.features(i, j), b.dataset.features(i, j));
  }
}

TEST(FlipRandom, BudgetMaskAndDeterminism) {
  const klid::Dataset ds = attack_dataset(100, 1);
  const klid::AttackResult res = klid::flip_random(ds, 0.20, 7);
  EXPECT_EQ(static_cast<int>(res.mask.size()), 20);
  EXPECT_TRUE(std::is_sorted(res.mask.begin(), res.mask.end()));
  EXPECT_EQ(std::set<int>(res.mask.begin(), res.mask.end()).size(), res.mask.size());
  expect_untouched_outside_mask(ds, res.dataset, res.mask);
  for (int r : res.mask)
    EXPECT_EQ(res.dataset.labels[static_cast<std::size_t>(r)], -ds.labels[static_cast<std::size_t>(r)]);
  expect_same_attack(res, klid::flip_random(ds, 0.20, 7));
  EXPECT_NE(res.mask, klid::flip_random(ds, 0.20, 8).mask);
  EXPECT_EQ(res.meta.name, "flip_random");
  EXPECT_EQ(res.meta.params.at("budget").get<int>(), 20);
}

TEST(FlipRandom, ZeroAndInvalidRates) {
  const klid::Dataset ds = attack_dataset(40, 2);
  const klid::AttackResult res = klid::flip_random(ds, 0.0, 9);
  EXPECT_TRUE(res.mask.empty());
  expect_untouched_outside_mask(ds, res.dataset, res.mask);
  EXPECT_THROW(klid::flip_random(ds, 0.6, 9), std::invalid_argument);
  EXPECT_THROW(klid::flip_random(ds, -0.1, 9), std::invalid_argument);
}

TEST(FlipNearest, PicksSmallestCleanMargins) {
  const klid::Dataset ds = attack_dataset(80, 3);
  klid::SvmConfig cfg;
  const klid::AttackResult res = klid::flip_nearest(ds, 0.15, cfg, 5);
  const int budget = 12;
  ASSERT_EQ(static_cast<int>(res.mask.size()), budget);

  // independent recomputation of the ranking from the clean model
  const klid::TrainedModel clean = klid::train_svm(ds, cfg);
  std::vector<std::pair<double, int>> ranked;
  for (int i = 0; i < ds.n(); ++i)
    ranked.emplace_back(std::abs(klid::decision_function(clean, ds.features.row(i).transpose())), i);
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return ds.ids[static_cast<std::size_t>(a.second)] < ds.ids[static_cast<std::size_t>(b.second)];
  });
  std::vector<int> expected;
  for (int s = 0; s < budget; ++s) expected.push_back(ranked[static_cast<std::size_t>(s)].second);
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(res.mask, expected);
  expect_untouched_outside_mask(ds, res.dataset, res.mask);
  expect_same_attack(res, klid::flip_nearest(ds, 0.15, cfg, 99));  // seed-independent ranking
}

TEST(FlipFarFirst, PicksLargestCleanMargins) {
  const klid::Dataset ds = attack_dataset(80, 4);
  klid::SvmConfig cfg;
  const klid::AttackResult res = klid::flip_farfirst(ds, 0.10, cfg, 5);
  const int budget = 8;
  ASSERT_EQ(static_cast<int>(res.mask.size()), budget);

  const klid::TrainedModel clean = klid::train_svm(ds, cfg);
  std::vector<std::pair<double, int>> ranked;
  for (int i = 0; i < ds.n(); ++i)
    ranked.emplace_back(std::abs(klid::decision_function(clean, ds.features.row(i).transpose())), i);
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return ds.ids[static_cast<std::size_t>(a.second)] < ds.ids[static_cast<std::size_t>(b.second)];
  });
  std::vector<int> expected;
  for (int s = 0; s < budget; ++s) expected.push_back(ranked[static_cast<std::size_t>(s)].second);
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(res.mask, expected);
  expect_untouched_outside_mask(ds, res.dataset, res.mask);
}

TEST(Alfa, TracksRisksAndKeepsBestRound) {
  const klid::Dataset ds = attack_dataset(60, 6);
  klid::SvmConfig cfg;
  const klid::AttackResult res = klid::alfa(ds, 0.20, cfg, 4, 11);
  EXPECT_EQ(static_cast<int>(res.mask.size()), 12);
  expect_untouched_outside_mask(ds, res.dataset, res.mask);
  for (int r : res.mask)
    EXPECT_EQ(res.dataset.labels[static_cast<std::size_t>(r)], -ds.labels[static_cast<std::size_t>(r)]);

  const auto risks = res.meta.params.at("risks").get<std::vector<double>>();
  ASSERT_GE(risks.size(), 2u);  // clean baseline plus at least one iterate
  const double best_risk = res.meta.params.at("best_risk").get<double>();
  double max_iterate = -1.0;
  for (std::size_t i = 1; i < risks.size(); ++i) max_iterate = std::max(max_iterate, risks[i]);
  EXPECT_DOUBLE_EQ(best_risk, max_iterate);
  // the kept flip set must actually achieve best_risk when retrained
  const klid::TrainedModel best_model = klid::train_svm(res.dataset, cfg);
  double risk = 0.0;
  for (int i = 0; i < ds.n(); ++i) {
    const double f = klid::decision_function(best_model, ds.features.row(i).transpose());
    risk += std::max(0.0, 1.0 - static_cast<double>(ds.labels[static_cast<std::size_t>(i)]) * f);
  }
  risk /= static_cast<double>(ds.n());
  EXPECT_NEAR(risk, best_risk, 1e-9);
  expect_same_attack(res, klid::alfa(ds, 0.20, cfg, 4, 11));
}

TEST(Alfa, ZeroBudgetReturnsInputUnchanged) {
  const klid::Dataset ds = attack_dataset(30, 7);
  klid::SvmConfig cfg;
  const klid::AttackResult res = klid::alfa(ds, 0.0, cfg, 3, 1);
  EXPECT_TRUE(res.mask.empty());
  expect_untouched_outside_mask(ds, res.dataset, res.mask);
  EXPECT_THROW(klid::alfa(ds, 0.1, cfg, 0, 1), std::invalid_argument);
}

TEST(MarginTilt, HandValues) {
  const std::vector<double> base{1.0, -1.0, 2.0, -2.0};
  EXPECT_NEAR(klid::margin_tilt(base, base), 0.0, 1e-12);
  std::vector<double> negated = base;
  for (double& v : negated) v = -v;
  EXPECT_NEAR(klid::margin_tilt(base, negated), 2.0, 1e-12);
  const std::vector<double> uncorrelated{1.0, 1.0, -1.0, -1.0};
  EXPECT_NEAR(klid::margin_tilt(base, uncorrelated), 1.0, 1e-9);
  const std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(klid::margin_tilt(base, flat), 1.0);
  EXPECT_THROW(klid::margin_tilt(base, {1.0}), std::invalid_argument);
}

TEST(AlfaTilt, SelectsMaxTiltCandidate) {
  const klid::Dataset ds = attack_dataset(60, 8);
  klid::SvmConfig cfg;
  const int trials = 5;
  const klid::AttackResult res = klid::alfa_tilt(ds, 0.20, cfg, trials, 21);
  EXPECT_EQ(static_cast<int>(res.mask.size()), 12);
  expect_untouched_outside_mask(ds, res.dataset, res.mask);

  const auto candidates = res.meta.params.at("candidates").get<std::vector<std::vector<int>>>();
  const auto tilts = res.meta.params.at("tilts").get<std::vector<double>>();
  ASSERT_EQ(candidates.size(), static_cast<std::size_t>(trials));
  ASSERT_EQ(tilts.size(), candidates.size());
  for (const auto& cand : candidates) EXPECT_EQ(cand.size(), 12u);
  // first candidate is the greedy flip set
  EXPECT_EQ(candidates.front(), klid::alfa(ds, 0.20, cfg, 5, klid::derive_seed(21, 1)).mask);

  const double best_tilt = res.meta.params.at("best_tilt").get<double>();
  std::size_t best_idx = 0;
  for (std::size_t i = 1; i < tilts.size(); ++i)
    if (tilts[i] > tilts[best_idx]) best_idx = i;
  EXPECT_DOUBLE_EQ(best_tilt, tilts[best_idx]);
  EXPECT_EQ(res.mask, candidates[best_idx]);
  expect_same_attack(res, klid::alfa_tilt(ds, 0.20, cfg, trials, 21));
}

TEST(PoisonPa, AppendsClimbingPointsInsideBox) {
  const klid::Dataset ds = attack_dataset(40, 9);
  const klid::Dataset validation = attack_dataset(30, 10);
  klid::SvmConfig cfg;
  klid::PoisonParams params;
  params.steps = 2;
  const int count = 2;
  const klid::AttackResult res = klid::poison_pa(ds, count, cfg, validation, params, 31);

  ASSERT_EQ(res.dataset.n(), ds.n() + count);
  ASSERT_EQ(static_cast<int>(res.mask.size()), count);
  for (int p = 0; p < count; ++p) {
    const int row = res.mask[static_cast<std::size_t>(p)];
    EXPECT_EQ(row, ds.n() + p);
    EXPECT_EQ(res.dataset.ids[static_cast<std::size_t>(row)], -(static_cast<std::int64_t>(p) + 1));
    const int label = res.dataset.labels[static_cast<std::size_t>(row)];
    EXPECT_TRUE(label == 1 || label == -1);
  }
  expect_untouched_outside_mask(ds, res.dataset, res.mask);

  // injected features stay inside the training bounding box
  const Eigen::VectorXd lo = ds.features.colwise().minCoeff().transpose();
  const Eigen::VectorXd hi = ds.features.colwise().maxCoeff().transpose();
  for (int r : res.mask)
    for (int j = 0; j < ds.dim(); ++j) {
      EXPECT_GE(res.dataset.features(r, j), lo[j] - 1e-12);
      EXPECT_LE(res.dataset.features(r, j), hi[j] + 1e-12);
    }

  // the ascent only records accepted (strictly improving) steps
  const auto traces = res.meta.params.at("loss_traces").get<std::vector<std::vector<double>>>();
  ASSERT_EQ(traces.size(), static_cast<std::size_t>(count));
  for (const auto& trace : traces) {
    ASSERT_FALSE(trace.empty());
    for (std::size_t s = 1; s < trace.size(); ++s) EXPECT_GT(trace[s], trace[s - 1]);
  }
  expect_same_attack(res, klid::poison_pa(ds, count, cfg, validation, params, 31));
}

TEST(PoisonPa, RejectsBadInputs) {
  const klid::Dataset ds = attack_dataset(40, 12);
  klid::SvmConfig cfg;
  klid::PoisonParams params;
  EXPECT_THROW(klid::poison_pa(ds, -1, cfg, ds, params, 1), std::invalid_argument);
  klid::Dataset empty_validation;
  EXPECT_THROW(klid::poison_pa(ds, 1, cfg, empty_validation, params, 1), std::invalid_argument);
  const klid::Dataset big = attack_dataset(1002, 13);
  EXPECT_THROW(klid::poison_pa(big, 1, cfg, ds, params, 1), std::invalid_argument);
  params.severity = 1.5;
  EXPECT_THROW(klid::validate(params), std::invalid_argument);
}

TEST(PoisonRa, MovesTowardNearestOppositeNeighbor) {
  const klid::Dataset ds = attack_dataset(60, 14);
  klid::PoisonParams params;
  params.severity = 0.5;
  params.discount_factor = 0.3;
  const int count = 6;
  const klid::AttackResult res = klid::poison_ra(ds, count, params, 41, -1);

  ASSERT_EQ(static_cast<int>(res.mask.size()), count);
  expect_untouched_outside_mask(ds, res.dataset, res.mask);
  const double move = params.severity * (1.0 - params.discount_factor);
  const std::vector<int> targets = klid::detail::class_indices(ds, +1);
  for (int i : res.mask) {
    EXPECT_EQ(ds.labels[static_cast<std::size_t>(i)], -1);  // malicious class only
    EXPECT_EQ(res.dataset.labels[static_cast<std::size_t>(i)], -1);  // label unchanged

    // recompute the nearest opposite-class neighbor independently
    const Eigen::VectorXd x = ds.features.row(i).transpose();
    int best_t = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int t : targets) {
      const double dist = (ds.features.row(t).transpose() - x).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best_t = t;
      }
    }
    const Eigen::VectorXd expected = x + move * (ds.features.row(best_t).transpose() - x);
    EXPECT_LT((res.dataset.features.row(i).transpose() - expected).lpNorm<Eigen::Infinity>(), 1e-12);
  }
  expect_same_attack(res, klid::poison_ra(ds, count, params, 41, -1));
  EXPECT_THROW(klid::poison_ra(ds, ds.n(), params, 41, -1), std::invalid_argument);
  EXPECT_THROW(klid::poison_ra(ds, 1, params, 41, 0), std::invalid_argument);
}

TEST(PoisonCg, GreedyCoordinateStepsImproveUtility) {
  const klid::Dataset ds = attack_dataset(50, 15);
  klid::SvmConfig cfg;
  const int count = 4;
  const klid::AttackResult res = klid::poison_cg(ds, count, cfg, 0.1, 40, 51, -1);

  ASSERT_EQ(static_cast<int>(res.mask.size()), count);
  expect_untouched_outside_mask(ds, res.dataset, res.mask);
  const Eigen::VectorXd lo = ds.features.colwise().minCoeff().transpose();
  const Eigen::VectorXd hi = ds.features.colwise().maxCoeff().transpose();
  const auto traces = res.meta.params.at("u_traces").get<std::vector<std::vector<double>>>();
  ASSERT_EQ(traces.size(), static_cast<std::size_t>(count));
  for (std::size_t p = 0; p < traces.size(); ++p) {
    const auto& trace = traces[p];
    ASSERT_FALSE(trace.empty());
    for (std::size_t s = 1; s < trace.size(); ++s) EXPECT_GT(trace[s], trace[s - 1]);
    const int i = res.mask[p];
    EXPECT_EQ(res.dataset.labels[static_cast<std::size_t>(i)], ds.labels[static_cast<std::size_t>(i)]);
    for (int j = 0; j < ds.dim(); ++j) {
      const double v = res.dataset.features(i, j);
      EXPECT_GE(v, lo[j] - 1e-12);
      EXPECT_LE(v, hi[j] + 1e-12);
      // a changed coordinate must sit on the 21-point search grid
      if (v != ds.features(i, j)) {
        const double rel = (v - lo[j]) / (hi[j] - lo[j]) * 20.0;
        EXPECT_NEAR(rel, std::round(rel), 1e-9);
      }
    }
  }
  expect_same_attack(res, klid::poison_cg(ds, count, cfg, 0.1, 40, 51, -1));
  EXPECT_THROW(klid::poison_cg(ds, 1, cfg, -0.5, 10, 1, -1), std::invalid_argument);
  EXPECT_THROW(klid::poison_cg(ds, 1, cfg, 0.1, -1, 1, -1), std::invalid_argument);
}

}  // namespace
