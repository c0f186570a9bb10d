#pragma once

#include <algorithm>
#include <limits>

#include "emedge/classifier/model.hpp"

namespace emedge::classifier {

// Brute-force k-nearest-neighbours with Euclidean distance. Equal distances
// prefer the earlier training row; the k labels are combined by majority
// vote with ties going to the lowest class.
class KnnModel : public Classifier {
 public:
  KnnModel(Dataset train, int k = 1) : train_(std::move(train)), k_(k) {
    train_.check();
    if (train_.size() == 0) throw ValidationError("KNN needs a non-empty training set");
    if (k_ < 1) throw ValidationError("k must be >= 1");
    if (static_cast<std::size_t>(k_) > train_.size())
      throw ValidationError("k = " + std::to_string(k_) + " exceeds the " + std::to_string(train_.size()) +
                            " training rows");
  }

  int predict(const FeatureVector& q) const override {
    if (k_ == 1) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t at = 0;
      for (std::size_t i = 0; i < train_.x.size(); ++i) {
        const double d = squared_distance(train_.x[i], q, best);
        if (d < best) {
          best = d;
          at = i;
        }
      }
      return train_.y[at];
    }
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(train_.size());
    for (std::size_t i = 0; i < train_.x.size(); ++i)
      d.emplace_back(squared_distance(train_.x[i], q, std::numeric_limits<double>::infinity()), i);
    std::partial_sort(d.begin(), d.begin() + k_, d.end());
    std::array<int, kMicroMomentClasses> votes{};
    for (int i = 0; i < k_; ++i) ++votes[static_cast<std::size_t>(train_.y[d[static_cast<std::size_t>(i)].second])];
    return argmax_class(votes);
  }

  std::string kind() const override { return "knn"; }

  nlohmann::json to_json() const override {
    return {{"kind", "knn"}, {"k", k_}, {"x", train_.x}, {"y", train_.y}, {"dataset", train_.id}};
  }

  static KnnModel from_json(const nlohmann::json& j) {
    Dataset d;
    d.id = j.value("dataset", "");
    d.x = j.at("x").get<std::vector<FeatureVector>>();
    d.y = j.at("y").get<std::vector<int>>();
    return KnnModel(std::move(d), j.at("k").get<int>());
  }

  int k() const { return k_; }

 private:
  // Stops early once the partial sum can no longer beat `bound`.
  static double squared_distance(const FeatureVector& a, const FeatureVector& b, double bound) {
    double s = 0.0;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      const double d = a[i] - b[i];
      s += d * d;
      if (s > bound) break;
    }
    return s;
  }

  Dataset train_;
  int k_ = 1;
};

}  // namespace emedge::classifier
