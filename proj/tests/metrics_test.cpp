#include <adnad/metrics.hpp>
#include <adnad/random.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>

namespace adnad {
namespace {

constexpr Label N = Label::Normal;
constexpr Label A = Label::Abnormal;

std::vector<Label> labels(std::initializer_list<int> bits) {
  std::vector<Label> out;
  for (int b : bits) out.push_back(b ? A : N);
  return out;
}

template <class F>
void expect_error(Errc code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << errc_name(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

TEST(Confusion, PerfectAllNormalAndInverted) {
  const auto truth = labels({0, 1, 1, 0, 0, 1});
  const auto perfect = confusion(truth, truth);
  EXPECT_EQ(perfect, (ConfusionCounts{3, 0, 3, 0}));

  const std::vector<Label> all_normal(truth.size(), N);
  const auto c = confusion(all_normal, truth);
  EXPECT_EQ(c.tp, 0u);
  EXPECT_EQ(c.fp, 0u);

  std::vector<Label> inverted;
  for (auto l : truth) inverted.push_back(l == A ? N : A);
  const auto inv = confusion(inverted, truth);
  EXPECT_EQ(inv.tp, perfect.fn);
  EXPECT_EQ(inv.fn, perfect.tp);
  EXPECT_EQ(inv.tn, perfect.fp);
  EXPECT_EQ(inv.fp, perfect.tn);
  EXPECT_EQ(inv.total(), truth.size());
}

TEST(Confusion, LengthMismatch) {
  expect_error(Errc::LengthMismatch, [] { confusion(labels({0, 1}), labels({0})); });
}

TEST(Rates, Examples) {
  const ConfusionCounts darknet{66, 0, 7534, 0};
  EXPECT_EQ(far(darknet), 0.0);
  EXPECT_EQ(mdr(darknet), 0.0);
  EXPECT_EQ(far(ConfusionCounts{0, 10, 10, 0}), 0.5);
  expect_error(Errc::UndefinedRate, [] { mdr(ConfusionCounts{0, 3, 7, 0}); });
  expect_error(Errc::UndefinedRate, [] { far(ConfusionCounts{3, 0, 0, 2}); });
}

TEST(Rates, BoundsAndTrivialPredictors) {
  Rng rng(4);
  std::vector<Label> truth;
  for (int i = 0; i < 200; ++i) truth.push_back(rng.bernoulli(0.3) ? A : N);
  const std::vector<Label> normal(truth.size(), N), abnormal(truth.size(), A);
  EXPECT_EQ(far(confusion(normal, truth)), 0.0);
  EXPECT_EQ(mdr(confusion(abnormal, truth)), 0.0);
  for (int k = 0; k < 20; ++k) {
    std::vector<Label> pred;
    for (std::size_t i = 0; i < truth.size(); ++i) pred.push_back(rng.bernoulli(0.5) ? A : N);
    const auto c = confusion(pred, truth);
    EXPECT_GE(far(c), 0.0);
    EXPECT_LE(far(c), 1.0);
    EXPECT_GE(mdr(c), 0.0);
    EXPECT_LE(mdr(c), 1.0);
  }
}

TEST(MacroPrf, Examples) {
  const auto perfect = macro_prf(ConfusionCounts{5, 0, 5, 0});
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);

  // All-Normal predictor on balanced truth: recalls 1 (normal) and 0.
  EXPECT_DOUBLE_EQ(macro_prf(ConfusionCounts{0, 0, 5, 5}).recall, 0.5);

  // tp=3 fp=1 tn=4 fn=2, by hand:
  //   abnormal: P = 3/4, R = 3/5, F1 = 2/3
  //   normal:   P = 4/6, R = 4/5, F1 = 8/11
  const auto m = macro_prf(ConfusionCounts{3, 1, 4, 2});
  EXPECT_NEAR(m.precision, (3.0 / 4 + 4.0 / 6) / 2, 1e-15);
  EXPECT_NEAR(m.recall, (3.0 / 5 + 4.0 / 5) / 2, 1e-15);
  EXPECT_NEAR(m.f1, (2.0 / 3 + 8.0 / 11) / 2, 1e-15);
}

TEST(MacroPrf, F1LiesBetweenClassF1s) {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const ConfusionCounts c{rng.below(50), rng.below(50), rng.below(50), rng.below(50)};
    const auto pc = per_class_scores(c);
    const double f1 = macro_prf(c).f1;
    EXPECT_LE(f1, std::max(pc[0].f1, pc[1].f1) + 1e-15);
    EXPECT_GE(f1, std::min(pc[0].f1, pc[1].f1) - 1e-15);
  }
}

TEST(Roc, PerfectSeparationPassesThroughTopLeft) {
  const std::vector<double> s = {0.1, 0.9, 0.8, 0.2};
  const auto curve = roc(s, labels({0, 1, 1, 0}));
  EXPECT_NE(std::find(curve.points.begin(), curve.points.end(), RocPoint{0.0, 1.0}),
            curve.points.end());
  EXPECT_EQ(spauc(curve), 1.0);
}

TEST(Roc, AllTiedIsDiagonal) {
  const std::vector<double> s(6, 3.0);
  const auto curve = roc(s, labels({0, 1, 1, 0, 0, 0}));
  ASSERT_EQ(curve.points.size(), 2u);
  EXPECT_EQ(curve.points[0], (RocPoint{0.0, 0.0}));
  EXPECT_EQ(curve.points[1], (RocPoint{1.0, 1.0}));
  EXPECT_EQ(spauc(curve), 0.5);
  EXPECT_EQ(auc(curve), 0.5);
}

TEST(Roc, SingleClassAndNonFinite) {
  const std::vector<double> s = {1, 2};
  expect_error(Errc::SingleClass, [&] { roc(s, labels({1, 1})); });
  const std::vector<double> bad = {1, NAN};
  expect_error(Errc::NonFinite, [&] { roc(bad, labels({1, 0})); });
}

TEST(Roc, RandomScoresGiveChanceAuc) {
  Rng rng(6);
  std::vector<double> s;
  std::vector<Label> t;
  for (int i = 0; i < 1000; ++i) {
    s.push_back(rng.uniform());
    t.push_back(i % 2 ? A : N);
  }
  const double a = auc(roc(s, t));
  EXPECT_GE(a, 0.45);
  EXPECT_LE(a, 0.55);
}

TEST(Roc, MonotoneAndTieOrderIndependent) {
  Rng rng(7);
  std::vector<double> s;
  std::vector<Label> t;
  for (int i = 0; i < 300; ++i) {
    s.push_back(double(rng.below(20)));  // heavy ties
    t.push_back(rng.bernoulli(0.4) ? A : N);
  }
  const auto c = roc(s, t);
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    EXPECT_GE(c.points[i].fpr, c.points[i - 1].fpr);
    EXPECT_GE(c.points[i].tpr, c.points[i - 1].tpr);
  }
  EXPECT_EQ(c.points.back(), (RocPoint{1.0, 1.0}));
  // Reversing the input order leaves the grouped curve unchanged.
  std::vector<double> rs(s.rbegin(), s.rend());
  std::vector<Label> rt(t.rbegin(), t.rend());
  EXPECT_EQ(roc(rs, rt).points, c.points);
}

// Mann-Whitney U / (n+ n-), counting ties as one half.
double mann_whitney(std::span<const double> s, std::span<const Label> t) {
  double u = 0;
  double np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (t[i] != A) continue;
    ++np;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (t[j] != N) continue;
      u += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  for (auto l : t) nn += l == N;
  return u / (np * nn);
}

TEST(Roc, FullAucEqualsMannWhitney) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    std::vector<double> s;
    std::vector<Label> t;
    for (int i = 0; i < 400; ++i) {
      const bool abnormal = rng.bernoulli(0.2);
      s.push_back(rng.normal(abnormal ? 1.0 : 0.0, 1.0));
      t.push_back(abnormal ? A : N);
    }
    if (std::count(t.begin(), t.end(), A) == 0) continue;
    EXPECT_NEAR(auc(roc(s, t)), mann_whitney(s, t), 1e-9);
    // Also holds with ties since grouped moves trace the diagonal.
    for (auto& v : s) v = std::round(v * 2.0);
    EXPECT_NEAR(auc(roc(s, t)), mann_whitney(s, t), 1e-9);
  }
}

// Brute-force partial area: midpoint rule on a 1e-5 fpr grid, with the tpr at
// each grid point computed by counting positives ranked above the k-th
// highest negative. Tie-free scores and 500 negatives put every kink of the
// curve on the grid, so the midpoint rule is exact up to rounding.
double grid_partial_auc(std::span<const double> s, std::span<const Label> t, double fpr_max) {
  std::vector<double> neg, pos;
  for (std::size_t i = 0; i < s.size(); ++i) (t[i] == A ? pos : neg).push_back(s[i]);
  std::sort(neg.begin(), neg.end(), std::greater<>());
  const double n_neg = double(neg.size());
  const double step = 1e-5;
  const long steps = std::lround(fpr_max / step);
  double area = 0;
  for (long g = 0; g < steps; ++g) {
    const double f = (double(g) + 0.5) * step;
    const auto k = std::size_t(std::ceil(f * n_neg));  // k-th negative crossed
    const double cut = neg[k - 1];
    double above = 0;
    for (double p : pos) above += p > cut;
    area += step * above / double(pos.size());
  }
  return area;
}

TEST(Spauc, MatchesGridIntegration) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(200 + seed);
    std::vector<double> s;
    std::vector<Label> t;
    for (int i = 0; i < 500; ++i) {
      s.push_back(rng.normal(0.0, 1.0));
      t.push_back(N);
    }
    for (int i = 0; i < 60; ++i) {
      s.push_back(rng.normal(1.5, 1.0));
      t.push_back(A);
    }
    const auto curve = roc(s, t);
    const double grid = grid_partial_auc(s, t, 0.05);
    EXPECT_NEAR(partial_auc(curve, 0.05), grid, 1e-9);
    const double standardized = 0.5 * (1 + (grid - 0.00125) / (0.05 - 0.00125));
    EXPECT_NEAR(spauc(curve), standardized, 1e-6);
  }
}

TEST(Spauc, InterpolatesAtTheCut) {
  // Curve (0,0) -> (0.1, 1): at fpr 0.05 the tpr is 0.5.
  RocCurve c;
  c.points = {{0, 0}, {0.1, 1.0}, {1, 1}};
  EXPECT_DOUBLE_EQ(partial_auc(c, 0.05), 0.05 * 0.25);
}

TEST(Spauc, RankInvariant) {
  Rng rng(8);
  std::vector<double> s;
  std::vector<Label> t;
  for (int i = 0; i < 800; ++i) {
    const bool a = rng.bernoulli(0.1);
    s.push_back(rng.normal(a ? 2.0 : 0.0, 1.0));
    t.push_back(a ? A : N);
  }
  std::vector<double> transformed;
  for (double v : s) transformed.push_back(std::exp(3.0 * v) + 7.0);
  EXPECT_EQ(spauc(roc(s, t)), spauc(roc(transformed, t)));
}

TEST(Report, EvaluateAndSerialize) {
  const auto truth = labels({0, 0, 0, 1, 1});
  const std::vector<double> scores = {0.1, 0.2, 0.3, 0.8, 0.9};
  const auto r = evaluate(truth, scores, truth);
  EXPECT_EQ(r.far, 0.0);
  EXPECT_EQ(r.mdr, 0.0);
  EXPECT_EQ(r.spauc, 1.0);
  EXPECT_EQ(to_table_row(r), "100.00  100.00  100.00  100.00  0.00  0.00  100.00");
  const auto kv = to_key_value(r);
  EXPECT_NE(kv.find("spauc=1.000000\n"), std::string::npos);
  EXPECT_NE(kv.find("tp=2\n"), std::string::npos);
  EXPECT_EQ(to_csv_row("x", r), "x,1.000000,1.000000,1.000000,1.000000,0.000000,0.000000,1.000000,2,0,3,0");

  const std::vector<Label> all_normal(truth.size(), N);
  EXPECT_EQ(evaluate(all_normal, scores, truth).mdr, 1.0);

  const auto single = labels({0, 0});
  const std::vector<double> two = {1, 2};
  const auto rs = evaluate(single, two, single);
  EXPECT_TRUE(std::isnan(rs.mdr));
  EXPECT_TRUE(std::isnan(rs.spauc));
  EXPECT_NE(to_key_value(rs).find("mdr=nan"), std::string::npos);
}

}  // namespace
}  // namespace adnad
