#include <adnad/random_forest.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace adnad {
namespace {

TrainingSet two_blobs(int n, std::uint64_t seed, int extra_constant_features = 0) {
  Rng rng(seed);
  TrainingSet set;
  for (int i = 0; i < n; ++i) {
    const bool abnormal = i % 2 == 1;
    std::vector<double> x = {rng.normal(abnormal ? 3.0 : 0.0, 0.5),
                             rng.normal(abnormal ? -2.0 : 1.0, 0.5)};
    for (int k = 0; k < extra_constant_features; ++k) x.push_back(7.0);
    set.add(x, abnormal ? Label::Abnormal : Label::Normal);
  }
  return set;
}

double accuracy(const RandomForest& f, const TrainingSet& s) {
  int ok = 0;
  for (std::size_t i = 0; i < s.size(); ++i) ok += f.predict(s.row(i)).label == s.label(i);
  return double(ok) / double(s.size());
}

TEST(Gini, Examples) {
  EXPECT_DOUBLE_EQ(gini({10, 0}), 0.0);
  EXPECT_DOUBLE_EQ(gini({5, 5}), 0.5);
  EXPECT_DOUBLE_EQ(gini({3, 1}), 0.375);
  try {
    gini({0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyNode);
  }
}

TEST(BuildTree, SingleClassIsOneLeaf) {
  TrainingSet s;
  for (int i = 0; i < 5; ++i) s.add(std::vector<double>{double(i), 1.0}, Label::Normal);
  Rng rng(1);
  const auto tree = build_tree(s, ForestConfig{}, rng);
  ASSERT_EQ(tree.nodes().size(), 1u);
  EXPECT_TRUE(tree.nodes()[0].is_leaf());
  EXPECT_EQ(tree.predict(std::vector<double>{100.0, 0.0}), Label::Normal);
}

TEST(BuildTree, SeparableOneDimensionalSet) {
  TrainingSet s;
  s.add(std::vector<double>{0.0}, Label::Normal);
  s.add(std::vector<double>{1.0}, Label::Abnormal);
  ForestConfig cfg;
  cfg.max_features = MaxFeatures::All;
  Rng rng(2);
  const auto tree = build_tree(s, cfg, rng);
  EXPECT_EQ(tree.depth(), 1);
  EXPECT_EQ(tree.predict(std::vector<double>{0.0}), Label::Normal);
  EXPECT_EQ(tree.predict(std::vector<double>{1.0}), Label::Abnormal);
  // Threshold is the observed left value.
  EXPECT_EQ(tree.nodes()[0].threshold, 0.0);
}

// Brute-force splitter: every (feature, observed value) partition x <= v.
struct OracleSplit {
  double weighted_gini = HUGE_VAL;
  bool exists = false;
};

double partition_gini(const TrainingSet& s, std::span<const std::uint32_t> idx, int f, double v) {
  ClassCounts l{0, 0}, r{0, 0};
  for (auto i : idx) {
    auto& side = s.at(i, std::size_t(f)) <= v ? l : r;
    ++side[std::size_t(index_of(s.label(i)))];
  }
  if (l[0] + l[1] == 0 || r[0] + r[1] == 0) return HUGE_VAL;
  const double n = double(idx.size());
  return ((l[0] + l[1]) * gini(l) + (r[0] + r[1]) * gini(r)) / n;
}

OracleSplit exhaustive_split(const TrainingSet& s, std::span<const std::uint32_t> idx,
                             std::span<const int> features) {
  OracleSplit best;
  for (int f : features) {
    std::set<double> values;
    for (auto i : idx) values.insert(s.at(i, std::size_t(f)));
    for (double v : values) {
      const double w = partition_gini(s, idx, f, v);
      if (w < HUGE_VAL) best.exists = true;
      best.weighted_gini = std::min(best.weighted_gini, w);
    }
  }
  return best;
}

TEST(BuildTree, SplitsMatchExhaustiveOracleOnSmallInstances) {
  Rng gen(123);
  int nodes_checked = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const int n = 2 + int(gen.below(15));
    const int d = 1 + int(gen.below(4));
    TrainingSet s{std::size_t(d)};
    for (int i = 0; i < n; ++i) {
      std::vector<double> x(static_cast<std::size_t>(d));
      for (auto& v : x) v = double(gen.below(2));
      s.add(x, gen.bernoulli(0.5) ? Label::Abnormal : Label::Normal);
    }
    ForestConfig cfg;
    cfg.max_features = draw % 2 ? MaxFeatures::All : MaxFeatures::Sqrt;
    Rng rng(1000 + std::uint64_t(draw));
    const SplitObserver check = [&](const SplitEvent& e) {
      ++nodes_checked;
      if (e.candidates.empty()) return;  // stopped before searching
      const auto oracle = exhaustive_split(s, e.samples, e.candidates);
      if (e.feature < 0) {
        EXPECT_FALSE(oracle.exists);
        return;
      }
      EXPECT_TRUE(std::find(e.candidates.begin(), e.candidates.end(), e.feature) !=
                  e.candidates.end());
      EXPECT_NEAR(e.weighted_gini, oracle.weighted_gini, 1e-12);
      EXPECT_NEAR(partition_gini(s, e.samples, e.feature, e.threshold), oracle.weighted_gini,
                  1e-12);
    };
    build_tree(s, cfg, rng, check);
  }
  EXPECT_GT(nodes_checked, 100);
}

TEST(FitForest, DeterministicPerSeed) {
  const auto s = two_blobs(100, 5);
  const auto a = fit_forest(s, ForestConfig{}, 9);
  const auto b = fit_forest(s, ForestConfig{}, 9);
  EXPECT_EQ(a, b);
  ForestConfig threaded;
  threaded.threads = 4;
  EXPECT_EQ(fit_forest(s, threaded, 9).trees(), a.trees());
  EXPECT_NE(fit_forest(s, ForestConfig{}, 10).trees(), a.trees());
}

TEST(FitForest, SeparableSetAccuracy) {
  const auto train = two_blobs(100, 6);
  const auto test = two_blobs(200, 7);
  const auto f = fit_forest(train, ForestConfig{}, 1);
  EXPECT_EQ(f.trees().size(), 40u);
  EXPECT_GE(accuracy(f, train), 0.99);
  EXPECT_GE(accuracy(f, test), 0.95);
}

TEST(FitForest, SingleClassIsDegenerate) {
  TrainingSet s;
  for (int i = 0; i < 10; ++i) s.add(std::vector<double>{double(i)}, Label::Abnormal);
  try {
    fit_forest(s, ForestConfig{}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateTrainingSet);
  }
}

TEST(Predict, UnanimousAndTiedVotes) {
  auto leaf = [](Label l) {
    TreeNode n;
    n.counts = l == Label::Abnormal ? ClassCounts{0, 3} : ClassCounts{3, 0};
    return DecisionTree({n});
  };
  std::vector<DecisionTree> normal(40, leaf(Label::Normal));
  const RandomForest all_normal(ForestConfig{}, 1, normal);
  const auto p = all_normal.predict(std::vector<double>{0.0});
  EXPECT_EQ(p.label, Label::Normal);
  EXPECT_EQ(p.votes, (std::array<int, 2>{40, 0}));

  std::vector<DecisionTree> split(20, leaf(Label::Normal));
  split.insert(split.end(), 20, leaf(Label::Abnormal));
  const RandomForest tied(ForestConfig{}, 1, split);
  EXPECT_EQ(tied.predict(std::vector<double>{0.0}).label, Label::Abnormal);
  ForestConfig lenient;
  lenient.ties_to_abnormal = false;
  EXPECT_EQ(RandomForest(lenient, 1, split).predict(std::vector<double>{0.0}).label,
            Label::Normal);
}

TEST(Predict, VotesSumToTreeCountAndDepthIsBounded) {
  const auto s = two_blobs(300, 8);
  ForestConfig cfg;
  cfg.max_depth = 3;
  cfg.n_estimators = 25;
  const auto f = fit_forest(s, cfg, 2);
  for (const auto& t : f.trees()) EXPECT_LE(t.depth(), 3);
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const std::vector<double> x = {rng.uniform(-2, 5), rng.uniform(-4, 3)};
    const auto p = f.predict(x);
    EXPECT_EQ(p.votes[0] + p.votes[1], 25);
  }
}

TEST(FeatureImportances, OneHotForSingleSplitFeature) {
  // Only feature 1 separates the classes.
  TrainingSet s;
  for (int i = 0; i < 40; ++i)
    s.add(std::vector<double>{0.0, double(i % 2), 0.0},
          i % 2 ? Label::Abnormal : Label::Normal);
  const auto f = fit_forest(s, ForestConfig{}, 4);
  const auto imp = f.feature_importances();
  ASSERT_EQ(imp.size(), 3u);
  EXPECT_DOUBLE_EQ(imp[0], 0.0);
  EXPECT_DOUBLE_EQ(imp[1], 1.0);
  EXPECT_DOUBLE_EQ(imp[2], 0.0);
}

TEST(FeatureImportances, SumToOneAndIgnoreConstantFeature) {
  const auto s = two_blobs(200, 10, 1);
  const auto imp = fit_forest(s, ForestConfig{}, 5).feature_importances();
  EXPECT_NEAR(std::accumulate(imp.begin(), imp.end(), 0.0), 1.0, 1e-9);
  EXPECT_LT(imp[2], 0.01);
}

TEST(Properties, MonotoneTransformOfOneFeatureKeepsPredictions) {
  const auto s = two_blobs(150, 11);
  auto transform = [](double v) { return std::exp(v) * 3.0 - 1.0; };
  TrainingSet t;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::vector<double> x(s.row(i).begin(), s.row(i).end());
    x[0] = transform(x[0]);
    t.add(x, s.label(i));
  }
  const auto fa = fit_forest(s, ForestConfig{}, 12);
  const auto fb = fit_forest(t, ForestConfig{}, 12);
  Rng rng(13);
  for (int k = 0; k < 500; ++k) {
    std::vector<double> x = {rng.uniform(-2, 5), rng.uniform(-4, 3)};
    const auto pa = fa.predict(x);
    x[0] = transform(x[0]);
    const auto pb = fb.predict(x);
    EXPECT_EQ(pa.label, pb.label);
    EXPECT_EQ(pa.votes, pb.votes);
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto f = fit_forest(two_blobs(120, 14), ForestConfig{}, 15);
  std::stringstream ss;
  f.save(ss);
  const auto g = RandomForest::load(ss);
  EXPECT_EQ(f, g);
  std::stringstream bad("adnad-forest 9\n");
  EXPECT_THROW(RandomForest::load(bad), Error);
}

}  // namespace
}  // namespace adnad
