#include "tob/eval.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tob/common.hpp"

namespace {

TEST(Confusion, PerfectPredictions) {
  const std::vector<double> probs = {0.9, 0.1, 0.8, 0.2};
  const std::vector<double> labels = {1, 0, 1, 0};
  const auto c = tob::confusion(probs, labels);
  EXPECT_EQ(c.fp, 0);
  EXPECT_EQ(c.fn, 0);
  EXPECT_EQ(c.tp, 2);
  EXPECT_EQ(c.tn, 2);
  EXPECT_DOUBLE_EQ(tob::precision(c).value, 1.0);
  EXPECT_DOUBLE_EQ(tob::recall(c).value, 1.0);
  EXPECT_DOUBLE_EQ(tob::mcc(c).value, 1.0);
}

TEST(Confusion, AllPredictedPositive) {
  const std::vector<double> probs(10, 0.9);
  std::vector<double> labels(10, 0.0);
  for (int i = 0; i < 5; ++i) labels[static_cast<std::size_t>(i)] = 1.0;
  const auto c = tob::confusion(probs, labels);
  EXPECT_EQ(c.tn, 0);
  EXPECT_DOUBLE_EQ(tob::precision(c).value, 0.5);
}

TEST(Confusion, MismatchedLengthsRejected) {
  EXPECT_THROW(tob::confusion(std::vector<double>{0.5}, std::vector<double>{1, 0}), tob::Error);
}

// brute-force per-sample tally oracle
TEST(Confusion, MatchesBruteForceTally) {
  tob::Rng rng(3);
  std::vector<double> probs(1000), labels(1000);
  for (int i = 0; i < 1000; ++i) {
    probs[static_cast<std::size_t>(i)] = rng.uniform();
    labels[static_cast<std::size_t>(i)] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  }
  const auto c = tob::confusion(probs, labels, 0.5);
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (int i = 0; i < 1000; ++i) {
    const bool p = probs[static_cast<std::size_t>(i)] >= 0.5;
    const bool y = labels[static_cast<std::size_t>(i)] >= 0.5;
    tp += p && y;
    fp += p && !y;
    tn += !p && !y;
    fn += !p && y;
  }
  EXPECT_EQ(c.tp, tp);
  EXPECT_EQ(c.fp, fp);
  EXPECT_EQ(c.tn, tn);
  EXPECT_EQ(c.fn, fn);
}

TEST(Metrics, BalancedCountshave_ZeroMcc) {
  const tob::ConfusionCounts c{25, 25, 25, 25};
  EXPECT_DOUBLE_EQ(tob::mcc(c).value, 0.0);
  EXPECT_FALSE(tob::mcc(c).degenerate);
}

TEST(Metrics, DegenerateCountsFlagged) {
  const tob::ConfusionCounts c{0, 0, 10, 0};
  EXPECT_TRUE(tob::precision(c).degenerate);
  EXPECT_TRUE(tob::recall(c).degenerate);
  EXPECT_TRUE(tob::mcc(c).degenerate);
  EXPECT_DOUBLE_EQ(tob::mcc(c).value, 0.0);
}

// direct-formula oracle on random counts
TEST(Metrics, MatchFormulaOracle) {
  tob::Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const tob::ConfusionCounts c{static_cast<std::int64_t>(rng.below(200) + 1),
                                 static_cast<std::int64_t>(rng.below(200) + 1),
                                 static_cast<std::int64_t>(rng.below(200) + 1),
                                 static_cast<std::int64_t>(rng.below(200) + 1)};
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
    EXPECT_NEAR(tob::precision(c).value, tp / (tp + fp), 1e-12);
    EXPECT_NEAR(tob::recall(c).value, tp / (tp + fn), 1e-12);
    const double mcc_direct =
        (tp * tn - fp * fn) / std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    EXPECT_NEAR(tob::mcc(c).value, mcc_direct, 1e-12);
    EXPECT_GE(tob::mcc(c).value, -1.0 - 1e-12);
    EXPECT_LE(tob::mcc(c).value, 1.0 + 1e-12);
  }
}

TEST(TobErrorCalc, SignConvention) {
  tob::TobEstimate est;
  est.found = true;
  est.t_hat = 102.0;
  EXPECT_DOUBLE_EQ(tob::tob_error(est, 100.0).err, 2.0);  // late
  est.t_hat = 98.0;
  EXPECT_DOUBLE_EQ(tob::tob_error(est, 100.0).err, -2.0);  // early
  est.found = false;
  EXPECT_FALSE(tob::tob_error(est, 100.0).found);
}

TEST(ErrorStats, MedianOfThree) {
  std::vector<tob::TobError> errs = {{true, 1.0}, {true, -2.0}, {true, 3.0}};
  const auto s = tob::error_stats(errs);
  EXPECT_DOUBLE_EQ(s.q2, 2.0);
  EXPECT_DOUBLE_EQ(s.count_pct, 100.0);
}

// sort-and-interpolate oracle for the worked quartile example
TEST(ErrorStats, WorkedExample) {
  std::vector<tob::TobError> errs;
  for (double e : {1.0, 1.0, 2.0, 3.0, 4.0, 17.0}) errs.push_back({true, e});
  const auto s = tob::error_stats(errs);
  EXPECT_NEAR(s.mean_abs, 28.0 / 6.0, 1e-12);
  // type-7 on [1,1,2,3,4,17]: h = p*(n-1)
  EXPECT_NEAR(s.q1, 1.25, 1e-12);
  EXPECT_NEAR(s.q2, 2.5, 1e-12);
  EXPECT_NEAR(s.q3, 3.75, 1e-12);
}

TEST(ErrorStats, NotFoundCountsAgainstPct) {
  std::vector<tob::TobError> errs = {{true, 2.0}, {false, 0.0}, {true, -1.0}, {false, 0.0}};
  const auto s = tob::error_stats(errs);
  EXPECT_DOUBLE_EQ(s.count_pct, 50.0);
  EXPECT_EQ(s.found, 2);
  EXPECT_EQ(s.total, 4);
  EXPECT_EQ(s.signed_errors.size(), 2u);
}

TEST(ErrorStats, PermutationInvariant) {
  tob::Rng rng(11);
  std::vector<tob::TobError> errs;
  for (int i = 0; i < 20; ++i) errs.push_back({rng.uniform() < 0.8, rng.uniform(-20.0, 20.0)});
  errs[0].found = true;  // ensure at least one found
  auto shuffled = errs;
  for (std::size_t i = shuffled.size() - 1; i > 0; --i)
    std::swap(shuffled[i], shuffled[static_cast<std::size_t>(rng.below(i + 1))]);
  const auto a = tob::error_stats(errs);
  const auto b = tob::error_stats(shuffled);
  EXPECT_DOUBLE_EQ(a.q1, b.q1);
  EXPECT_DOUBLE_EQ(a.q2, b.q2);
  EXPECT_DOUBLE_EQ(a.q3, b.q3);
  EXPECT_DOUBLE_EQ(a.mean_abs, b.mean_abs);
  EXPECT_DOUBLE_EQ(a.count_pct, b.count_pct);
}

TEST(ErrorStats, EmptyCorpusRejected) {
  EXPECT_THROW(tob::error_stats({}), tob::Error);
}

// random quantile probes against an independent interpolation
TEST(QuantileType7, MatchesOracle) {
  tob::Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> xs(1 + rng.below(40));
    for (auto& x : xs) x = rng.uniform(-10.0, 10.0);
    std::sort(xs.begin(), xs.end());
    const double p = rng.uniform();
    const double h = p * static_cast<double>(xs.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    const double expected = xs[lo] + (h - std::floor(h)) * (xs[hi] - xs[lo]);
    EXPECT_NEAR(tob::quantile_type7(xs, p), expected, 1e-12);
  }
}

TEST(Report, ByteStableAcrossRewrites) {
  std::vector<tob::ClassificationRow> cls = {{"image_vnb", {90, 10, 85, 15}},
                                             {"two_stream", {95, 5, 92, 8}}};
  std::vector<tob::TobRow> rows;
  std::vector<tob::TobError> errs = {{true, 1.0}, {true, -2.0}, {false, 0.0}};
  rows.push_back({"threshold_first", tob::error_stats(errs)});
  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = dir / "tob_report_a.csv";
  const auto p2 = dir / "tob_report_b.csv";
  tob::write_report(p1, cls, rows);
  tob::write_report(p2, cls, rows);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(s1, s2);
  EXPECT_NE(s1.find("# classification"), std::string::npos);
  EXPECT_NE(s1.find("# tob_estimation"), std::string::npos);
}

}  // namespace
