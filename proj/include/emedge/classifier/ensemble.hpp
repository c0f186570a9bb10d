#pragma once

#include <algorithm>
#include <atomic>
#include <random>
#include <thread>

#include "emedge/classifier/tree.hpp"

namespace emedge::classifier {

struct EnsembleOptions {
  int n_learners = 30;
  TreeOptions tree;
  unsigned threads = 0;  // 0 = hardware concurrency
};

inline std::uint64_t learner_seed(std::uint64_t seed, int i) {
  return sim::detail::splitmix64(seed + static_cast<std::uint64_t>(i));
}

// Bagged trees with a hard majority vote.
class EnsembleModel : public Classifier {
 public:
  EnsembleModel() = default;
  EnsembleModel(std::vector<TreeModel> trees, std::uint64_t seed) : trees_(std::move(trees)), seed_(seed) {}

  int predict(const FeatureVector& x) const override {
    std::array<int, kMicroMomentClasses> votes{};
    for (const auto& t : trees_) ++votes[static_cast<std::size_t>(t.predict(x))];
    return argmax_class(votes);
  }

  std::string kind() const override { return "ensemble"; }

  nlohmann::json to_json() const override {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : trees_) trees.push_back(t.to_json());
    return {{"kind", "ensemble"}, {"seed", seed_}, {"n_learners", trees_.size()}, {"trees", trees}};
  }

  static EnsembleModel from_json(const nlohmann::json& j) {
    std::vector<TreeModel> trees;
    for (const auto& t : j.at("trees")) trees.push_back(TreeModel::from_json(t));
    if (trees.empty()) throw ValidationError("ensemble model has no trees");
    return EnsembleModel(std::move(trees), j.at("seed").get<std::uint64_t>());
  }

  const std::vector<TreeModel>& trees() const { return trees_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::vector<TreeModel> trees_;
  std::uint64_t seed_ = 0;
};

// Bootstrap rows (size n, with replacement) for learner i.
inline std::vector<std::uint32_t> bootstrap_rows(std::size_t n, std::uint64_t learner_seed) {
  std::mt19937_64 rng(learner_seed);
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(n - 1));
  std::vector<std::uint32_t> rows(n);
  for (auto& r : rows) r = pick(rng);
  return rows;
}

inline EnsembleModel train_ensemble(const Dataset& data, const EnsembleOptions& options = {}, std::uint64_t seed = 0) {
  data.check();
  if (data.size() == 0) throw ValidationError("cannot train an ensemble on an empty dataset");
  if (options.n_learners < 1) throw ValidationError("n_learners must be >= 1");
  std::vector<TreeModel> trees(static_cast<std::size_t>(options.n_learners));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < options.n_learners; i = next++) {
      const auto s = learner_seed(seed, i);
      trees[static_cast<std::size_t>(i)] = train_tree_rows(data, bootstrap_rows(data.size(), s), options.tree, s);
    }
  };
  unsigned n_threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(options.n_learners));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  return EnsembleModel(std::move(trees), seed);
}

}  // namespace emedge::classifier
