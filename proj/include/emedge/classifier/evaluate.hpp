#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/format.h>

#include "emedge/classifier/ensemble.hpp"
#include "emedge/classifier/knn.hpp"
#include "emedge/classifier/tree.hpp"

namespace emedge::classifier {

inline constexpr std::size_t kClasses = kMicroMomentClasses;

struct EvalReport {
  std::string dataset_id;
  std::uint64_t seed = 0;
  std::string model;
  std::size_t total = 0;
  double accuracy = 0.0;
  std::array<double, kClasses> precision{};
  std::array<double, kClasses> recall{};
  std::array<double, kClasses> f1{};
  std::array<std::size_t, kClasses> support{};  // truth counts
  double macro_f1 = 0.0;
  std::array<std::array<std::size_t, kClasses>, kClasses> confusion{};  // [truth][predicted]

  bool operator==(const EvalReport&) const = default;

  nlohmann::json to_json() const {
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < kClasses; ++c)
      per_class.push_back({{"class", c},
                           {"label", to_string(micro_moment_from_int(static_cast<int>(c)))},
                           {"support", support[c]},
                           {"precision", precision[c]},
                           {"recall", recall[c]},
                           {"f1", f1[c]}});
    return {{"dataset", dataset_id}, {"seed", seed},          {"model", model},         {"total", total},
            {"accuracy", accuracy},  {"macro_f1", macro_f1}, {"per_class", per_class}, {"confusion", confusion}};
  }

  std::string table() const {
    std::ostringstream o;
    o << fmt::format("model {}  dataset {}  seed {}  n={}\n", model, dataset_id, seed, total);
    o << fmt::format("accuracy {:.4f}  macro-F1 {:.4f}\n\n", accuracy, macro_f1);
    o << fmt::format("{:<14}{:>9}{:>11}{:>9}{:>9}\n", "class", "support", "precision", "recall", "f1");
    for (std::size_t c = 0; c < kClasses; ++c)
      o << fmt::format("{:<14}{:>9}{:>11.4f}{:>9.4f}{:>9.4f}\n", to_string(micro_moment_from_int(static_cast<int>(c))),
                       support[c], precision[c], recall[c], f1[c]);
    o << "\nconfusion (rows = truth, cols = predicted)\n";
    for (const auto& row : confusion) {
      for (auto v : row) o << fmt::format("{:>8}", v);
      o << "\n";
    }
    return o.str();
  }
};

// Macro-F1 averages only over classes that occur in the truth.
inline EvalReport score(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size())
    throw ValidationError(fmt::format("truth has {} labels but predictions {}", truth.size(), predicted.size()));
  if (truth.empty()) throw ValidationError("cannot evaluate on an empty test set");
  EvalReport r;
  r.total = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= kMicroMomentClasses || predicted[i] < 0 || predicted[i] >= kMicroMomentClasses)
      throw ValidationError("label out of range");
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  std::size_t correct = 0, present = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < kClasses; ++c) {
    std::size_t predicted_c = 0;
    for (std::size_t t = 0; t < kClasses; ++t) predicted_c += r.confusion[t][c];
    for (std::size_t p = 0; p < kClasses; ++p) r.support[c] += r.confusion[c][p];
    const double tp = static_cast<double>(r.confusion[c][c]);
    correct += r.confusion[c][c];
    r.precision[c] = predicted_c ? tp / static_cast<double>(predicted_c) : 0.0;
    r.recall[c] = r.support[c] ? tp / static_cast<double>(r.support[c]) : 0.0;
    const double pr = r.precision[c] + r.recall[c];
    r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
    if (r.support[c]) {
      f1_sum += r.f1[c];
      ++present;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  r.macro_f1 = f1_sum / static_cast<double>(present);
  return r;
}

inline EvalReport evaluate(const Classifier& model, const Dataset& test, std::uint64_t seed = 0) {
  test.check();
  auto r = score(test.y, model.predict_all(test.x));
  r.dataset_id = test.id;
  r.seed = seed;
  r.model = model.kind();
  return r;
}

inline std::unique_ptr<Classifier> model_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "tree") return std::make_unique<TreeModel>(TreeModel::from_json(j));
  if (kind == "ensemble") return std::make_unique<EnsembleModel>(EnsembleModel::from_json(j));
  if (kind == "knn") return std::make_unique<KnnModel>(KnnModel::from_json(j));
  throw ValidationError("unknown model kind '" + kind + "'");
}

inline void save_model(const Classifier& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError("cannot write model file '" + path.string() + "'");
  out << model.to_json().dump() << "\n";
}

inline std::unique_ptr<Classifier> load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("model file '" + path.string() + "' not found");
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("model file '" + path.string() + "' is not valid JSON");
  return model_from_json(j);
}

enum class ModelKind { tree, ensemble, knn };

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "tree" || s == "dt") return ModelKind::tree;
  if (s == "ensemble" || s == "ebt") return ModelKind::ensemble;
  if (s == "knn") return ModelKind::knn;
  throw ValidationError("unknown model kind '" + std::string(s) + "' (expected tree, ensemble or knn)");
}

struct TrainOptions {
  ModelKind kind = ModelKind::ensemble;
  int max_splits = 100;
  int n_learners = 30;
  int k = 1;
  unsigned threads = 0;
};

inline std::unique_ptr<Classifier> train(const Dataset& data, const TrainOptions& o, std::uint64_t seed) {
  switch (o.kind) {
    case ModelKind::tree: return std::make_unique<TreeModel>(train_tree(data, {o.max_splits}, seed));
    case ModelKind::ensemble:
      return std::make_unique<EnsembleModel>(train_ensemble(data, {o.n_learners, {o.max_splits}, o.threads}, seed));
    case ModelKind::knn: return std::make_unique<KnnModel>(data, o.k);
  }
  throw ValidationError("unknown model kind");
}

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct ComparisonRow {
  std::string model;
  std::vector<EvalReport> reports;  // one per seed
  Summary accuracy;
  Summary macro_f1;
};

// Stratified 70/30 split per seed; every model sees the same split.
inline std::vector<ComparisonRow> compare(const Dataset& data, const std::vector<std::pair<std::string, TrainOptions>>& models,
                                          const std::vector<std::uint64_t>& seeds, double train_fraction = 0.7) {
  data.check();
  std::vector<ComparisonRow> rows;
  for (const auto& [name, opts] : models) rows.push_back({name, {}, {}, {}});
  for (auto seed : seeds) {
    const auto split = stratified_split(data.y, train_fraction, seed);
    const auto train_set = data.subset(split.train);
    const auto test_set = data.subset(split.test);
    for (std::size_t m = 0; m < models.size(); ++m) {
      auto model = train(train_set, models[m].second, seed);
      auto r = evaluate(*model, test_set, seed);
      r.model = models[m].first;
      rows[m].reports.push_back(r);
    }
  }
  for (auto& row : rows) {
    std::vector<double> acc, f1;
    for (const auto& r : row.reports) {
      acc.push_back(r.accuracy);
      f1.push_back(r.macro_f1);
    }
    row.accuracy = summarize(acc);
    row.macro_f1 = summarize(f1);
  }
  return rows;
}

}  // namespace emedge::classifier
