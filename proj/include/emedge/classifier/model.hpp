#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "emedge/classifier/dataset.hpp"

namespace emedge::classifier {

// Anything that maps a feature vector to a micro-moment class. The
// evaluation harness only depends on this interface, so other model
// families can be added without touching it.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual int predict(const FeatureVector& x) const = 0;
  virtual std::string kind() const = 0;
  virtual nlohmann::json to_json() const = 0;

  std::vector<int> predict_all(const std::vector<FeatureVector>& xs) const {
    std::vector<int> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(predict(x));
    return out;
  }
};

// Most frequent class; ties go to the lowest class index.
template <typename Counts>
int argmax_class(const Counts& counts) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(counts.size()); ++c)
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  return best;
}

}  // namespace emedge::classifier
