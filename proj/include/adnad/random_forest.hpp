#pragma once

// Random forest of CART trees for the second-stage normal/abnormal verdict.
//
// Splits minimise the weighted Gini impurity of the two children over a random
// subset of ceil(sqrt(D)) features per node. A split sends x[f] <= threshold to
// the left child, and the threshold is always a feature value observed in the
// node, so predictions depend only on the order of each feature's values.

#include <adnad/error.hpp>
#include <adnad/label.hpp>
#include <adnad/random.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adnad {

enum class MaxFeatures { Sqrt, All };

struct ForestConfig {
  int n_estimators = 40;
  int max_depth = 16;
  int min_samples_split = 2;
  MaxFeatures max_features = MaxFeatures::Sqrt;
  bool ties_to_abnormal = true;
  int threads = 1;

  bool operator==(const ForestConfig&) const = default;
};

/// Row-major feature matrix with one label per row.
class TrainingSet {
 public:
  explicit TrainingSet(std::size_t dims = 0) : dims_(dims) {}

  void add(std::span<const double> features, Label label) {
    if (dims_ == 0 && x_.empty()) dims_ = features.size();
    if (features.size() != dims_) fail(Errc::ShapeMismatch, "training row has wrong width");
    for (double v : features)
      if (!std::isfinite(v)) fail(Errc::NonFinite, "training features must be finite");
    x_.insert(x_.end(), features.begin(), features.end());
    y_.push_back(label);
  }

  void clear() {
    x_.clear();
    y_.clear();
  }

  std::size_t size() const { return y_.size(); }
  bool empty() const { return y_.empty(); }
  std::size_t dims() const { return dims_; }
  std::span<const double> row(std::size_t i) const { return {x_.data() + i * dims_, dims_}; }
  double at(std::size_t i, std::size_t f) const { return x_[i * dims_ + f]; }
  Label label(std::size_t i) const { return y_[i]; }
  std::span<const Label> labels() const { return y_; }

 private:
  std::size_t dims_;
  std::vector<double> x_;
  std::vector<Label> y_;
};

using ClassCounts = std::array<std::uint32_t, 2>;

inline double gini(const ClassCounts& counts) {
  const double total = static_cast<double>(counts[0]) + static_cast<double>(counts[1]);
  if (total <= 0.0) fail(Errc::EmptyNode, "Gini impurity of an empty node");
  const double p0 = counts[0] / total, p1 = counts[1] / total;
  return 1.0 - (p0 * p0 + p1 * p1);
}

struct TreeNode {
  int feature = -1;  // -1 for a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  ClassCounts counts{0, 0};

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

/// What the splitter saw and chose at one node; `feature` is -1 when the node
/// became a leaf.
struct SplitEvent {
  std::span<const std::uint32_t> samples;
  std::span<const int> candidates;
  int depth;
  int feature;
  double threshold;
  double weighted_gini;
};
using SplitObserver = std::function<void(const SplitEvent&)>;

class DecisionTree {
 public:
  DecisionTree() = default;
  explicit DecisionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }

  const TreeNode& leaf_for(std::span<const double> x) const {
    int k = 0;
    while (!nodes_[static_cast<std::size_t>(k)].is_leaf()) {
      const TreeNode& n = nodes_[static_cast<std::size_t>(k)];
      k = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes_[static_cast<std::size_t>(k)];
  }

  Label predict(std::span<const double> x, bool ties_to_abnormal = true) const {
    const auto& c = leaf_for(x).counts;
    if (c[1] != c[0]) return c[1] > c[0] ? Label::Abnormal : Label::Normal;
    return ties_to_abnormal ? Label::Abnormal : Label::Normal;
  }

  int depth() const { return nodes_.empty() ? 0 : depth_from(0); }

  bool operator==(const DecisionTree&) const = default;

 private:
  int depth_from(int k) const {
    const TreeNode& n = nodes_[static_cast<std::size_t>(k)];
    if (n.is_leaf()) return 0;
    return 1 + std::max(depth_from(n.left), depth_from(n.right));
  }

  std::vector<TreeNode> nodes_;
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const TrainingSet& data, const ForestConfig& config, Rng& rng,
              const SplitObserver* observer)
      : data_(data), config_(config), rng_(rng), observer_(observer) {}

  DecisionTree build(std::vector<std::uint32_t> samples) {
    if (samples.empty()) fail(Errc::EmptyNode, "cannot build a tree from zero samples");
    grow(std::move(samples), 0);
    return DecisionTree(std::move(nodes_));
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double weighted_gini = HUGE_VAL;
  };

  int grow(std::vector<std::uint32_t> samples, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    ClassCounts counts{0, 0};
    for (auto i : samples) ++counts[static_cast<std::size_t>(index_of(data_.label(i)))];
    nodes_[static_cast<std::size_t>(id)].counts = counts;

    const bool pure = counts[0] == 0 || counts[1] == 0;
    if (pure || depth >= config_.max_depth ||
        samples.size() < static_cast<std::size_t>(std::max(2, config_.min_samples_split))) {
      notify(samples, {}, depth, Split{});
      return id;
    }

    const std::vector<int> candidates = pick_features();
    const Split best = best_split(samples, candidates);
    notify(samples, candidates, depth, best);
    if (best.feature < 0) return id;

    std::vector<std::uint32_t> left, right;
    for (auto i : samples)
      (data_.at(i, static_cast<std::size_t>(best.feature)) <= best.threshold ? left : right)
          .push_back(i);
    samples.clear();
    samples.shrink_to_fit();

    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    TreeNode& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  std::vector<int> pick_features() {
    const auto D = static_cast<int>(data_.dims());
    std::vector<int> all(static_cast<std::size_t>(D));
    std::iota(all.begin(), all.end(), 0);
    if (config_.max_features == MaxFeatures::All) return all;
    const int k = std::min(D, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(D)))));
    for (int i = 0; i < k; ++i) {
      const auto j = i + static_cast<int>(rng_.below(static_cast<std::uint64_t>(D - i)));
      std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
    }
    all.resize(static_cast<std::size_t>(k));
    std::sort(all.begin(), all.end());
    return all;
  }

  // Exhaustive sweep over sorted values of each candidate; first minimum wins
  // (lowest feature index, then lowest threshold).
  Split best_split(const std::vector<std::uint32_t>& samples,
                   const std::vector<int>& candidates) const {
    Split best;
    const std::size_t n = samples.size();
    ClassCounts total{0, 0};
    for (auto i : samples) ++total[static_cast<std::size_t>(index_of(data_.label(i)))];

    std::vector<std::pair<double, int>> column(n);
    for (int f : candidates) {
      for (std::size_t k = 0; k < n; ++k)
        column[k] = {data_.at(samples[k], static_cast<std::size_t>(f)),
                     index_of(data_.label(samples[k]))};
      std::sort(column.begin(), column.end());
      ClassCounts left{0, 0};
      for (std::size_t k = 0; k + 1 < n; ++k) {
        ++left[static_cast<std::size_t>(column[k].second)];
        if (!(column[k].first < column[k + 1].first)) continue;
        const ClassCounts right{total[0] - left[0], total[1] - left[1]};
        const double nl = static_cast<double>(k + 1);
        const double nr = static_cast<double>(n - k - 1);
        const double w = (nl * gini(left) + nr * gini(right)) / static_cast<double>(n);
        if (w < best.weighted_gini) best = {f, column[k].first, w};
      }
    }
    return best;
  }

  void notify(const std::vector<std::uint32_t>& samples, const std::vector<int>& candidates,
              int depth, const Split& s) const {
    if (observer_ && *observer_)
      (*observer_)(SplitEvent{samples, candidates, depth, s.feature, s.threshold,
                              s.weighted_gini});
  }

  const TrainingSet& data_;
  const ForestConfig& config_;
  Rng& rng_;
  const SplitObserver* observer_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

/// Grows one CART tree on the given sample indices (duplicates allowed).
inline DecisionTree build_tree(const TrainingSet& data, std::vector<std::uint32_t> samples,
                               const ForestConfig& config, Rng& rng,
                               const SplitObserver& observer = {}) {
  detail::TreeBuilder builder(data, config, rng, &observer);
  return builder.build(std::move(samples));
}

inline DecisionTree build_tree(const TrainingSet& data, const ForestConfig& config, Rng& rng,
                               const SplitObserver& observer = {}) {
  std::vector<std::uint32_t> all(data.size());
  std::iota(all.begin(), all.end(), 0u);
  return build_tree(data, std::move(all), config, rng, observer);
}

struct Prediction {
  Label label;
  std::array<int, 2> votes;  // {normal, abnormal}

  double abnormal_fraction() const {
    return static_cast<double>(votes[1]) / static_cast<double>(votes[0] + votes[1]);
  }
};

class RandomForest {
 public:
  RandomForest() = default;
  RandomForest(ForestConfig config, std::size_t dims, std::vector<DecisionTree> trees)
      : config_(config), dims_(dims), trees_(std::move(trees)) {}

  const ForestConfig& config() const { return config_; }
  std::size_t dims() const { return dims_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  bool empty() const { return trees_.empty(); }

  /// Majority vote of the trees; an even split goes to Abnormal unless the
  /// config says otherwise.
  Prediction predict(std::span<const double> x) const {
    if (trees_.empty()) fail(Errc::NotBootstrapped, "predict on an empty forest");
    if (x.size() != dims_) fail(Errc::ShapeMismatch, "feature vector has wrong width");
    Prediction p{Label::Normal, {0, 0}};
    for (const auto& t : trees_) ++p.votes[static_cast<std::size_t>(
        index_of(t.predict(x, config_.ties_to_abnormal)))];
    if (p.votes[1] != p.votes[0])
      p.label = p.votes[1] > p.votes[0] ? Label::Abnormal : Label::Normal;
    else
      p.label = config_.ties_to_abnormal ? Label::Abnormal : Label::Normal;
    return p;
  }

  /// Mean decrease in Gini impurity per feature (weighted by node size,
  /// normalised per tree, averaged, then normalised to sum to one).
  std::vector<double> feature_importances() const {
    std::vector<double> total(dims_, 0.0);
    for (const auto& tree : trees_) {
      std::vector<double> imp(dims_, 0.0);
      const auto& nodes = tree.nodes();
      for (const auto& n : nodes) {
        if (n.is_leaf()) continue;
        const auto& l = nodes[static_cast<std::size_t>(n.left)];
        const auto& r = nodes[static_cast<std::size_t>(n.right)];
        auto weight = [](const ClassCounts& c) { return double(c[0]) + double(c[1]); };
        imp[static_cast<std::size_t>(n.feature)] += weight(n.counts) * gini(n.counts) -
                                                    weight(l.counts) * gini(l.counts) -
                                                    weight(r.counts) * gini(r.counts);
      }
      const double s = std::accumulate(imp.begin(), imp.end(), 0.0);
      if (s > 0.0)
        for (std::size_t f = 0; f < dims_; ++f) total[f] += imp[f] / s;
    }
    const double s = std::accumulate(total.begin(), total.end(), 0.0);
    if (s > 0.0)
      for (double& v : total) v /= s;
    return total;
  }

  // Checkpoint text format:
  //   adnad-forest 1
  //   config <n_estimators> <max_depth> <min_samples_split> <sqrt|all> <ties_to_abnormal> <dims>
  //   tree <node_count>
  //   <feature> <threshold hexfloat> <left> <right> <normal_count> <abnormal_count>   (per node)
  //   ...
  //   end
  void save(std::ostream& os) const {
    os << "adnad-forest 1\n";
    os << "config " << config_.n_estimators << ' ' << config_.max_depth << ' '
       << config_.min_samples_split << ' '
       << (config_.max_features == MaxFeatures::Sqrt ? "sqrt" : "all") << ' '
       << (config_.ties_to_abnormal ? 1 : 0) << ' ' << dims_ << '\n';
    for (const auto& t : trees_) {
      os << "tree " << t.nodes().size() << '\n';
      for (const auto& n : t.nodes()) {
        char buf[64];
        const auto r = std::to_chars(buf, buf + sizeof buf, n.threshold, std::chars_format::hex);
        os << n.feature << ' ' << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf))
           << ' ' << n.left << ' ' << n.right << ' ' << n.counts[0] << ' ' << n.counts[1] << '\n';
      }
    }
    os << "end\n";
  }

  static RandomForest load(std::istream& is) {
    std::string token, rule;
    int version = 0, ties = 0;
    if (!(is >> token >> version) || token != "adnad-forest" || version != 1)
      fail(Errc::SchemaMismatch, "not an adnad-forest v1 checkpoint");
    ForestConfig c;
    std::size_t dims = 0;
    if (!(is >> token) || token != "config" ||
        !(is >> c.n_estimators >> c.max_depth >> c.min_samples_split >> rule >> ties >> dims))
      fail(Errc::SchemaMismatch, "bad forest config line");
    c.max_features = rule == "all" ? MaxFeatures::All : MaxFeatures::Sqrt;
    c.ties_to_abnormal = ties != 0;
    std::vector<DecisionTree> trees;
    while (is >> token && token == "tree") {
      std::size_t count = 0;
      is >> count;
      std::vector<TreeNode> nodes(count);
      for (auto& n : nodes) {
        std::string thr;
        if (!(is >> n.feature >> thr >> n.left >> n.right >> n.counts[0] >> n.counts[1]))
          fail(Errc::SchemaMismatch, "truncated tree node");
        const auto r =
            std::from_chars(thr.data(), thr.data() + thr.size(), n.threshold, std::chars_format::hex);
        if (r.ec != std::errc{}) fail(Errc::SchemaMismatch, "bad threshold '" + thr + "'");
      }
      trees.emplace_back(std::move(nodes));
    }
    if (token != "end") fail(Errc::SchemaMismatch, "missing end marker");
    return RandomForest(c, dims, std::move(trees));
  }

  bool operator==(const RandomForest&) const = default;

 private:
  ForestConfig config_;
  std::size_t dims_ = 0;
  std::vector<DecisionTree> trees_;
};

/// Bagged forest: each tree grows on a same-size bootstrap resample drawn from
/// its own generator derived from `seed`, so the result does not depend on
/// how many threads build it.
inline RandomForest fit_forest(const TrainingSet& data, const ForestConfig& config,
                               std::uint64_t seed) {
  bool has[2] = {false, false};
  for (Label l : data.labels()) has[index_of(l)] = true;
  if (!has[0] || !has[1])
    fail(Errc::DegenerateTrainingSet, "forest needs at least one sample of each class");
  if (config.n_estimators < 1) fail(Errc::InvalidConfig, "n_estimators must be >= 1");

  Rng master(seed);
  std::vector<Rng> tree_rngs;
  for (int t = 0; t < config.n_estimators; ++t)
    tree_rngs.push_back(master.split(static_cast<std::uint64_t>(t)));

  const auto n = static_cast<std::uint64_t>(data.size());
  auto grow = [&](int t) {
    Rng& rng = tree_rngs[static_cast<std::size_t>(t)];
    std::vector<std::uint32_t> boot(static_cast<std::size_t>(n));
    for (auto& b : boot) b = static_cast<std::uint32_t>(rng.below(n));
    return build_tree(data, std::move(boot), config, rng);
  };

  std::vector<DecisionTree> trees(static_cast<std::size_t>(config.n_estimators));
  const int workers = std::clamp(config.threads, 1, config.n_estimators);
  if (workers == 1) {
    for (int t = 0; t < config.n_estimators; ++t) trees[static_cast<std::size_t>(t)] = grow(t);
  } else {
    std::vector<std::future<void>> jobs;
    for (int w = 0; w < workers; ++w)
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (int t = w; t < config.n_estimators; t += workers)
          trees[static_cast<std::size_t>(t)] = grow(t);
      }));
    for (auto& j : jobs) j.get();
  }
  return RandomForest(config, data.dims(), std::move(trees));
}

}  // namespace adnad
