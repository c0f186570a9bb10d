#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <queue>
#include <vector>

#include "emedge/classifier/model.hpp"

namespace emedge::classifier {

using ClassCounts = std::array<std::uint32_t, kMicroMomentClasses>;

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  ClassCounts counts{};

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct TreeOptions {
  int max_splits = 100;
};

class TreeModel : public Classifier {
 public:
  TreeModel() = default;
  TreeModel(std::vector<TreeNode> nodes, int max_splits, std::uint64_t seed)
      : nodes_(std::move(nodes)), max_splits_(max_splits), seed_(seed) {}

  int predict(const FeatureVector& x) const override {
    int i = 0;
    while (!nodes_[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes_[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return argmax_class(nodes_[static_cast<std::size_t>(i)].counts);
  }

  std::string kind() const override { return "tree"; }

  nlohmann::json to_json() const override {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : nodes_) {
      if (n.is_leaf())
        nodes.push_back({{"counts", n.counts}});
      else
        nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right},
                         {"counts", n.counts}});
    }
    return {{"kind", "tree"}, {"max_splits", max_splits_}, {"seed", seed_}, {"nodes", nodes}};
  }

  static TreeModel from_json(const nlohmann::json& j) {
    std::vector<TreeNode> nodes;
    for (const auto& n : j.at("nodes")) {
      TreeNode t;
      t.counts = n.at("counts").get<ClassCounts>();
      if (n.contains("feature")) {
        t.feature = n["feature"].get<int>();
        t.threshold = n.at("threshold").get<double>();
        t.left = n.at("left").get<int>();
        t.right = n.at("right").get<int>();
      }
      nodes.push_back(t);
    }
    TreeModel m(std::move(nodes), j.at("max_splits").get<int>(), j.at("seed").get<std::uint64_t>());
    m.check();
    return m;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int split_count() const {
    return static_cast<int>(std::count_if(nodes_.begin(), nodes_.end(), [](const auto& n) { return !n.is_leaf(); }));
  }
  int depth() const { return depth_from(0); }
  int max_splits() const { return max_splits_; }
  std::uint64_t seed() const { return seed_; }

  bool operator==(const TreeModel& o) const {
    return nodes_ == o.nodes_ && max_splits_ == o.max_splits_ && seed_ == o.seed_;
  }

 private:
  void check() const {
    if (nodes_.empty()) throw ValidationError("tree model has no nodes");
    const int n = static_cast<int>(nodes_.size());
    for (const auto& node : nodes_) {
      if (node.is_leaf()) continue;
      if (node.feature >= static_cast<int>(kFeatureCount) || node.left <= 0 || node.right <= 0 || node.left >= n ||
          node.right >= n || !std::isfinite(node.threshold))
        throw ValidationError("tree model has a malformed split node");
    }
  }

  int depth_from(int i) const {
    const auto& n = nodes_[static_cast<std::size_t>(i)];
    if (n.is_leaf()) return 0;
    return 1 + std::max(depth_from(n.left), depth_from(n.right));
  }

  std::vector<TreeNode> nodes_;
  int max_splits_ = 100;
  std::uint64_t seed_ = 0;
};

namespace detail {

inline double gini_sum(const ClassCounts& c, double n) {
  // n * gini = n - sum(c^2)/n
  if (n <= 0.0) return 0.0;
  double sq = 0.0;
  for (auto v : c) sq += static_cast<double>(v) * static_cast<double>(v);
  return n - sq / n;
}

struct Candidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

// Rows that reached one node, kept sorted by every feature so each split
// search is a linear scan.
struct NodeRows {
  std::array<std::vector<std::uint32_t>, kFeatureCount> by_feature;
  std::size_t size() const { return by_feature[0].size(); }
};

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<FeatureVector>& x, const std::vector<int>& y) : x_(x), y_(y), goes_left_(x.size(), 0) {}

  TreeModel build(const std::vector<std::uint32_t>& rows, const TreeOptions& options, std::uint64_t seed) {
    nodes_.clear();
    best_.clear();
    pending_.clear();
    NodeRows root;
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      auto& v = root.by_feature[f];
      v = rows;
      std::stable_sort(v.begin(), v.end(), [&](std::uint32_t a, std::uint32_t b) { return x_[a][f] < x_[b][f]; });
    }
    add_node(std::move(root));

    using Item = std::pair<double, int>;  // (gain, -node) so equal gains expand the older node first
    std::priority_queue<Item> queue;
    auto consider = [&](int node) {
      if (best_[static_cast<std::size_t>(node)].feature >= 0) queue.emplace(best_[static_cast<std::size_t>(node)].gain, -node);
    };
    consider(0);
    int splits = 0;
    while (splits < options.max_splits && !queue.empty()) {
      const int node = -queue.top().second;
      queue.pop();
      split(node);
      ++splits;
      consider(nodes_[static_cast<std::size_t>(node)].left);
      consider(nodes_[static_cast<std::size_t>(node)].right);
    }
    return TreeModel(std::move(nodes_), options.max_splits, seed);
  }

 private:
  ClassCounts count(const std::vector<std::uint32_t>& rows) const {
    ClassCounts c{};
    for (auto r : rows) ++c[static_cast<std::size_t>(y_[r])];
    return c;
  }

  int add_node(NodeRows rows) {
    TreeNode n;
    n.counts = count(rows.by_feature[0]);
    nodes_.push_back(n);
    best_.push_back(find_split(rows, n.counts));
    pending_.push_back(std::move(rows));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Candidate find_split(const NodeRows& rows, const ClassCounts& total) const {
    Candidate best;
    const double n = static_cast<double>(rows.size());
    const double parent = gini_sum(total, n);
    if (parent <= 1e-12) return best;  // pure
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      const auto& v = rows.by_feature[f];
      ClassCounts left{};
      for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        ++left[static_cast<std::size_t>(y_[v[i]])];
        const double a = x_[v[i]][f], b = x_[v[i + 1]][f];
        if (!(a < b)) continue;
        ClassCounts right;
        for (std::size_t c = 0; c < right.size(); ++c) right[c] = total[c] - left[c];
        const double nl = static_cast<double>(i + 1);
        const double gain = parent - gini_sum(left, nl) - gini_sum(right, n - nl);
        if (gain > best.gain + 1e-12) {
          double t = a + (b - a) / 2.0;
          if (!(t < b)) t = a;
          best = {gain, static_cast<int>(f), t};
        }
      }
    }
    return best;
  }

  void split(int node) {
    const auto idx = static_cast<std::size_t>(node);
    const Candidate c = best_[idx];
    NodeRows rows = std::move(pending_[idx]);
    const auto f = static_cast<std::size_t>(c.feature);
    for (auto r : rows.by_feature[f]) goes_left_[r] = x_[r][f] <= c.threshold ? 1 : 0;
    NodeRows left, right;
    for (std::size_t g = 0; g < kFeatureCount; ++g) {
      left.by_feature[g].reserve(rows.size());
      right.by_feature[g].reserve(rows.size());
      for (auto r : rows.by_feature[g]) (goes_left_[r] ? left : right).by_feature[g].push_back(r);
      std::vector<std::uint32_t>().swap(rows.by_feature[g]);
      left.by_feature[g].shrink_to_fit();
      right.by_feature[g].shrink_to_fit();
    }
    const int l = add_node(std::move(left));
    const int r = add_node(std::move(right));
    auto& n = nodes_[idx];
    n.feature = c.feature;
    n.threshold = c.threshold;
    n.left = l;
    n.right = r;
  }

  const std::vector<FeatureVector>& x_;
  const std::vector<int>& y_;
  std::vector<std::uint8_t> goes_left_;
  std::vector<TreeNode> nodes_;
  std::vector<Candidate> best_;
  std::vector<NodeRows> pending_;
};

}  // namespace detail

// Greedy best-first CART on Gini impurity. `rows` selects (possibly
// repeated) training rows; the default is all of them.
inline TreeModel train_tree_rows(const Dataset& data, const std::vector<std::uint32_t>& rows, const TreeOptions& options,
                                 std::uint64_t seed) {
  if (rows.empty()) throw ValidationError("cannot train a tree on an empty dataset");
  if (options.max_splits < 0) throw ValidationError("max_splits must be >= 0");
  detail::TreeBuilder builder(data.x, data.y);
  return builder.build(rows, options, seed);
}

inline TreeModel train_tree(const Dataset& data, const TreeOptions& options = {}, std::uint64_t seed = 0) {
  data.check();
  std::vector<std::uint32_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0u);
  return train_tree_rows(data, rows, options, seed);
}

}  // namespace emedge::classifier
