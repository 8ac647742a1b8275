#include <gtest/gtest.h>

#include <algorithm>

#include "support.hpp"
#include "tica/metrics.hpp"

namespace tica {
namespace {

// freshly initialized network: every pixel lands on the shadow side
constexpr ConfusionCounts kModelFixtureCounts{212, 556, 0, 0};
constexpr double kModelFixtureBer = 0.5;

ShadowMask mask2x2(double a, double b, double c, double d) {
  ShadowMask m(2, 2);
  m(0, 0) = a;
  m(0, 1) = b;
  m(1, 0) = c;
  m(1, 1) = d;
  return m;
}

// Straight pixel loop, written independently of accumulate().
ConfusionCounts tally(const ShadowMask& pred, const ShadowMask& gt, double threshold) {
  ConfusionCounts c;
  for (int r = 0; r < gt.rows(); ++r)
    for (int col = 0; col < gt.cols(); ++col) {
      const bool p = pred(r, col) >= threshold;
      const bool g = gt(r, col) == 1.0;
      if (p && g) ++c.tp;
      if (p && !g) ++c.fp;
      if (!p && !g) ++c.tn;
      if (!p && g) ++c.fn;
    }
  return c;
}

double ber_formula(const ConfusionCounts& c) {
  const double pos = c.tp + c.fn, neg = c.tn + c.fp;
  const double rp = pos > 0 ? c.tp / pos : 1.0;
  const double rn = neg > 0 ? c.tn / neg : 1.0;
  return 1.0 - 0.5 * (rp + rn);
}

TEST(Accumulate, HandTalliedTwoByTwo) {
  const auto c = accumulate(mask2x2(0.9, 0.2, 0.6, 0.4), mask2x2(1, 0, 0, 0));
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.tn, 2u);
  EXPECT_EQ(c.fn, 0u);
}

TEST(Accumulate, PerfectAndInverted) {
  Rng rng(3);
  const auto gt = test::random_binary(rng, 9, 7);
  ShadowMask inv = gt;
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - gt[i];
  const auto good = accumulate(gt, gt);
  EXPECT_EQ(good.fp + good.fn, 0u);
  const auto bad = accumulate(inv, gt);
  EXPECT_EQ(bad.tp + bad.tn, 0u);
}

TEST(Accumulate, ShapeMismatchThrows) {
  EXPECT_THROW(accumulate(ShadowMask(2, 3), ShadowMask(3, 2)), std::invalid_argument);
}

TEST(Accumulate, OrderOfPoolingIrrelevant) {
  Rng rng(4);
  std::vector<std::pair<ShadowMask, ShadowMask>> items;
  for (int i = 0; i < 6; ++i) items.emplace_back(test::random_mask(rng, 5, 5), test::random_binary(rng, 5, 5));
  ConfusionCounts forward, backward;
  for (const auto& [p, g] : items) forward = accumulate(p, g, 0.5, forward);
  for (auto it = items.rbegin(); it != items.rend(); ++it) backward = accumulate(it->first, it->second, 0.5, backward);
  EXPECT_EQ(forward, backward);
}

TEST(Ber, SpotValues) {
  EXPECT_DOUBLE_EQ(ber({.tp = 40, .fp = 20, .tn = 30, .fn = 10}).ber, 0.30);
  EXPECT_EQ(ber({.tp = 5, .fp = 0, .tn = 7, .fn = 0}).ber, 0.0);
  EXPECT_EQ(ber({.tp = 0, .fp = 7, .tn = 0, .fn = 5}).ber, 1.0);
}

TEST(Ber, ComponentsAverage) {
  const auto r = ber({.tp = 40, .fp = 20, .tn = 30, .fn = 10});
  EXPECT_NEAR(r.ber_shadow, 0.2, 1e-15);
  EXPECT_NEAR(r.ber_nonshadow, 0.4, 1e-15);
  EXPECT_NEAR(r.ber, 0.5 * (r.ber_shadow + r.ber_nonshadow), 1e-15);
}

TEST(Ber, DegenerateClassCountsAsRecallOne) {
  const auto r = ber({.tp = 0, .fp = 3, .tn = 9, .fn = 0});
  EXPECT_TRUE(r.shadow_degenerate);
  EXPECT_FALSE(r.nonshadow_degenerate);
  EXPECT_DOUBLE_EQ(r.ber, 0.5 * (3.0 / 12.0));
  EXPECT_THROW(ber(ConfusionCounts{}), std::invalid_argument);
}

TEST(Ber, MatchesBruteForceOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int rows = 1 + static_cast<int>(rng.uniform_int(0, 11));
    const int cols = 1 + static_cast<int>(rng.uniform_int(0, 11));
    const auto pred = test::random_mask(rng, rows, cols);
    const auto gt = test::random_binary(rng, rows, cols, rng.uniform());
    const auto expected = tally(pred, gt, 0.5);
    const auto got = accumulate(pred, gt);
    ASSERT_EQ(got, expected) << "trial " << trial;
    ASSERT_EQ(ber(got).ber, ber_formula(expected)) << "trial " << trial;
  }
}

TEST(Ber, InvariantUnderScalingAndClassSwap) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    ConfusionCounts c{static_cast<std::uint64_t>(rng.uniform_int(1, 50)), static_cast<std::uint64_t>(rng.uniform_int(0, 50)),
                      static_cast<std::uint64_t>(rng.uniform_int(1, 50)), static_cast<std::uint64_t>(rng.uniform_int(0, 50))};
    const double b = ber(c).ber;
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
    ConfusionCounts scaled{c.tp * 7, c.fp * 7, c.tn * 7, c.fn * 7};
    EXPECT_NEAR(ber(scaled).ber, b, 1e-15);
    ConfusionCounts swapped{c.tn, c.fn, c.tp, c.fp};
    EXPECT_NEAR(ber(swapped).ber, b, 1e-15);
  }
}

TEST(Evaluate, PooledCountsAreAdditive) {
  Rng rng(9);
  std::vector<SamplePair> a, b;
  std::vector<ShadowMask> pa, pb;
  for (int i = 0; i < 3; ++i) {
    a.push_back({test::random_image(rng, 6, 6), test::random_binary(rng, 6, 6), "a/" + std::to_string(i)});
    pa.push_back(test::random_mask(rng, 6, 6));
    b.push_back({test::random_image(rng, 6, 6), test::random_binary(rng, 6, 6), "b/" + std::to_string(i)});
    pb.push_back(test::random_mask(rng, 6, 6));
  }
  auto all = a;
  all.insert(all.end(), b.begin(), b.end());
  auto pall = pa;
  pall.insert(pall.end(), pb.begin(), pb.end());
  const auto ra = evaluate_predictions(pa, a), rb = evaluate_predictions(pb, b), rall = evaluate_predictions(pall, all);
  EXPECT_EQ(rall.counts, ra.counts + rb.counts);
  EXPECT_EQ(rall.per_image_ber.size(), 6u);
  EXPECT_EQ(rall.image_ids.front(), "a/0");
}

TEST(Evaluate, PerfectPredictionScoresZero) {
  Rng rng(10);
  std::vector<SamplePair> data{{test::random_image(rng, 4, 4), test::random_binary(rng, 4, 4), "x"}};
  std::vector<ShadowMask> preds{data[0].mask};
  EXPECT_EQ(evaluate_predictions(preds, data).ber, 0.0);
}

TEST(Evaluate, ModelFixtureIsStable) {
  Rng rng(11);
  Model model(test::tiny_model(16), rng);
  std::vector<SamplePair> data;
  for (int i = 0; i < 3; ++i) {
    data.push_back({test::random_image(rng, 16, 16), test::random_binary(rng, 16, 16, 0.3), std::to_string(i)});
  }
  const auto r = evaluate(model, data);
  const auto again = evaluate(model, data);
  EXPECT_EQ(r.counts, again.counts);
  EXPECT_EQ(r.counts, kModelFixtureCounts);
  EXPECT_NEAR(r.ber, kModelFixtureBer, 1e-12);
}

TEST(Report, JsonRoundTrip) {
  BerReport r = ber({.tp = 40, .fp = 20, .tn = 30, .fn = 10});
  r.method = "tica";
  r.config_hash = "abc";
  r.seed = 3;
  r.image_ids = {"test/0000"};
  r.per_image_ber = {0.25};
  const auto back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.counts, r.counts);
  EXPECT_EQ(back.ber, r.ber);
  EXPECT_EQ(back.method, "tica");
  EXPECT_EQ(back.config_hash, "abc");
  EXPECT_EQ(back.seed, 3u);
  EXPECT_EQ(back.image_ids, r.image_ids);
  EXPECT_EQ(back.per_image_ber, r.per_image_ber);
  EXPECT_THROW(report_from_json("{\"ber\": 1}"), std::exception);
}

}  // namespace
}  // namespace tica
