#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <set>

#include "emedge/classifier/evaluate.hpp"
#include "test_support.hpp"

namespace emedge::classifier {
namespace {

using emedge::testing::TempDir;

FeatureVector fv(double a, double b = 0.0) {
  FeatureVector x{};
  x[0] = a;
  x[1] = b;
  return x;
}

Dataset make(std::vector<FeatureVector> x, std::vector<int> y) { return Dataset{"t", std::move(x), std::move(y)}; }

Dataset random_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> cls(0, 4);
  Dataset d;
  d.id = "random";
  for (std::size_t i = 0; i < n; ++i) {
    FeatureVector x;
    for (auto& v : x) v = std::round(u(rng) * 20) / 20;  // plenty of ties
    d.x.push_back(x);
    d.y.push_back(x[0] > 0.5 ? (x[1] > 0.3 ? 3 : 0) : cls(rng));
  }
  return d;
}

std::size_t reachable(const TreeModel& t) {
  std::set<int> seen;
  std::function<void(int)> walk = [&](int i) {
    seen.insert(i);
    const auto& n = t.nodes()[static_cast<std::size_t>(i)];
    if (!n.is_leaf()) {
      walk(n.left);
      walk(n.right);
    }
  };
  walk(0);
  return seen.size();
}

TEST(Tree, PureInputIsOneLeaf) {
  auto t = train_tree(make({fv(0), fv(1), fv(2)}, {3, 3, 3}));
  ASSERT_EQ(t.nodes().size(), 1u);
  EXPECT_EQ(t.predict(fv(100)), 3);
}

TEST(Tree, SeparableOnOneFeature) {
  // Class 1 below 0.5, class 4 above; the only useful cut is between 0.4 and 0.6.
  auto d = make({fv(0.1, 9), fv(0.2, 1), fv(0.4, 5), fv(0.6, 5), fv(0.7, 1), fv(0.9, 9)}, {1, 1, 1, 4, 4, 4});
  auto t = train_tree(d);
  EXPECT_EQ(t.depth(), 1);
  EXPECT_EQ(t.nodes()[0].feature, 0);
  EXPECT_DOUBLE_EQ(t.nodes()[0].threshold, 0.5);
  EXPECT_EQ(evaluate(t, d).accuracy, 1.0);
}

TEST(Tree, GiniChoosesHandComputedSplit) {
  // Feature 0 separates {0,0,0 | 1,1,2}: weighted Gini 0 + 3*(1-(4+1)/9) = 4/3.
  // Feature 1 separates {0,0 | 0,1,1,2}: 0 + 4*(1-(1+4+1)/16) = 2.5. Feature 0 wins.
  auto d = make({fv(1, 1), fv(2, 2), fv(3, 5), fv(4, 6), fv(5, 7), fv(6, 8)}, {0, 0, 0, 1, 1, 2});
  auto t = train_tree(d, {1});
  ASSERT_EQ(t.split_count(), 1);
  EXPECT_EQ(t.nodes()[0].feature, 0);
  EXPECT_DOUBLE_EQ(t.nodes()[0].threshold, 3.5);
}

TEST(Tree, DeterministicSerialization) {
  auto d = random_dataset(500, 2);
  EXPECT_EQ(train_tree(d, {}, 9).to_json().dump(), train_tree(d, {}, 9).to_json().dump());
}

TEST(Tree, EmptyInputIsAnError) { EXPECT_THROW(train_tree(make({}, {})), ValidationError); }

TEST(Tree, BadLabelsAreAnError) { EXPECT_THROW(train_tree(make({fv(0)}, {7})), ValidationError); }

TEST(Tree, SplitCapAndReachabilityProperty) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto d = random_dataset(400, s);
    for (int cap : {0, 1, 5, 37, 100}) {
      auto t = train_tree(d, {cap});
      EXPECT_LE(t.split_count(), cap);
      EXPECT_EQ(reachable(t), t.nodes().size());
      EXPECT_EQ(t.nodes().size(), 2u * static_cast<std::size_t>(t.split_count()) + 1);
      for (const auto& n : t.nodes()) EXPECT_TRUE(std::isfinite(n.threshold));
    }
  }
}

TEST(Tree, JsonRoundTrip) {
  auto d = random_dataset(300, 4);
  auto t = train_tree(d);
  auto back = TreeModel::from_json(nlohmann::json::parse(t.to_json().dump()));
  EXPECT_EQ(back, t);
  nlohmann::json bad = t.to_json();
  bad["nodes"][0]["left"] = 99999;
  if (!t.nodes()[0].is_leaf()) EXPECT_THROW(TreeModel::from_json(bad), ValidationError);
}

TreeModel leaf(int cls) {
  TreeNode n;
  n.counts[static_cast<std::size_t>(cls)] = 1;
  return TreeModel({n}, 100, 0);
}

TEST(Ensemble, MajorityVote) {
  EnsembleModel m({leaf(3), leaf(3), leaf(0)}, 0);
  EXPECT_EQ(m.predict(fv(0)), 3);
}

TEST(Ensemble, TieGoesToLowestClass) {
  EXPECT_EQ(EnsembleModel({leaf(4), leaf(0)}, 0).predict(fv(0)), 0);
  EXPECT_EQ(EnsembleModel({leaf(2), leaf(1)}, 0).predict(fv(0)), 1);
}

TEST(Ensemble, SingleLearnerIsOneBootstrapTree) {
  auto d = random_dataset(300, 5);
  auto e = train_ensemble(d, {1, {100}, 1}, 42);
  ASSERT_EQ(e.trees().size(), 1u);
  const auto s = learner_seed(42, 0);
  EXPECT_EQ(e.trees()[0], train_tree_rows(d, bootstrap_rows(d.size(), s), {100}, s));
}

TEST(Ensemble, BootstrapHasReplacement) {
  auto rows = bootstrap_rows(1000, 3);
  EXPECT_EQ(rows.size(), 1000u);
  std::set<std::uint32_t> uniq(rows.begin(), rows.end());
  // About 63.2 % of rows appear in a bootstrap resample.
  EXPECT_NEAR(static_cast<double>(uniq.size()) / 1000.0, 0.632, 0.05);
  EXPECT_LT(*std::max_element(rows.begin(), rows.end()), 1000u);
}

TEST(Ensemble, ThreadCountDoesNotChangeTheModel) {
  auto d = random_dataset(400, 6);
  auto one = train_ensemble(d, {30, {100}, 1}, 7);
  auto many = train_ensemble(d, {30, {100}, 4}, 7);
  EXPECT_EQ(one.trees().size(), 30u);
  EXPECT_EQ(one.to_json().dump(), many.to_json().dump());
  EXPECT_NE(one.trees()[0], one.trees()[1]);
}

TEST(Ensemble, RejectsBadOptions) {
  EXPECT_THROW(train_ensemble(make({}, {})), ValidationError);
  EXPECT_THROW(train_ensemble(random_dataset(10, 1), {0}), ValidationError);
}

TEST(Knn, ExactMatchReturnsItsLabel) {
  auto d = random_dataset(50, 8);
  KnnModel m(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    // Duplicated feature vectors resolve to their first occurrence.
    std::size_t first = i;
    for (std::size_t j = 0; j < i; ++j)
      if (d.x[j] == d.x[i]) {
        first = j;
        break;
      }
    EXPECT_EQ(m.predict(d.x[i]), d.y[first]);
  }
}

TEST(Knn, HandComputedDistances) {
  // Points at (0,0), (1,1), (3,0). Query (1.8, 0.4):
  //   d0^2 = 3.24 + 0.16 = 3.40, d1^2 = 0.64 + 0.36 = 1.00, d2^2 = 1.44 + 0.16 = 1.60.
  KnnModel m(make({fv(0, 0), fv(1, 1), fv(3, 0)}, {0, 2, 4}));
  EXPECT_EQ(m.predict(fv(1.8, 0.4)), 2);
  // Midway between (0,0) and (3,0) at equal distance from both; (1,1) is
  // further. The earlier training row wins.
  KnnModel m2(make({fv(0, 0), fv(3, 0), fv(1.5, 5)}, {4, 1, 2}));
  EXPECT_EQ(m2.predict(fv(1.5, 0)), 4);
}

TEST(Knn, Errors) {
  EXPECT_THROW(KnnModel(make({}, {})), ValidationError);
  EXPECT_THROW(KnnModel(make({fv(0), fv(1)}, {0, 1}), 3), ValidationError);
  EXPECT_THROW(KnnModel(make({fv(0)}, {0}), 0), ValidationError);
}

TEST(Knn, LargerKVotes) {
  KnnModel m(make({fv(0), fv(0.1), fv(0.2), fv(5)}, {1, 3, 3, 1}), 3);
  EXPECT_EQ(m.predict(fv(0.05)), 3);
}

TEST(Score, HandComputedExample) {
  const auto r = score({0, 0, 3, 3, 4, 4}, {0, 3, 3, 3, 4, 0});
  EXPECT_DOUBLE_EQ(r.accuracy, 4.0 / 6.0);
  // class 0: tp 1, predicted 2, actual 2 -> P = R = 0.5
  // class 3: tp 2, predicted 3, actual 2 -> P = 2/3, R = 1 -> F1 = 0.8
  // class 4: tp 1, predicted 1, actual 2 -> P = 1, R = 0.5 -> F1 = 2/3
  EXPECT_NEAR(r.f1[0], 0.5, 1e-12);
  EXPECT_NEAR(r.f1[3], 0.8, 1e-12);
  EXPECT_NEAR(r.f1[4], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.macro_f1, (0.5 + 0.8 + 2.0 / 3.0) / 3.0, 1e-12);
  EXPECT_NEAR(r.macro_f1, 0.6556, 1e-4);
  EXPECT_EQ(r.f1[1], 0.0);
  EXPECT_EQ(r.confusion[0][3], 1u);
  EXPECT_EQ(r.confusion[4][0], 1u);
}

TEST(Score, PerfectAndDegenerate) {
  const auto p = score({0, 1, 2, 3, 4}, {0, 1, 2, 3, 4});
  EXPECT_EQ(p.accuracy, 1.0);
  EXPECT_EQ(p.macro_f1, 1.0);
  const auto d = score({0, 0, 3, 3}, {3, 3, 3, 3});
  EXPECT_EQ(d.accuracy, 0.5);
  EXPECT_THROW(score({0}, {0, 1}), ValidationError);
  EXPECT_THROW(score({}, {}), ValidationError);
}

TEST(Score, ConfusionAccountingProperty) {
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> c(0, 4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> t(200), p(200);
    for (auto& v : t) v = c(rng);
    for (auto& v : p) v = c(rng);
    const auto r = score(t, p);
    std::size_t trace = 0, total = 0;
    for (std::size_t i = 0; i < kClasses; ++i) {
      std::size_t row = 0;
      for (auto v : r.confusion[i]) row += v;
      EXPECT_EQ(row, static_cast<std::size_t>(std::count(t.begin(), t.end(), static_cast<int>(i))));
      trace += r.confusion[i][i];
      total += row;
    }
    EXPECT_EQ(total, 200u);
    EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(trace) / 200.0);
  }
}

TEST(Split, StratifiedSeventyThirty) {
  std::vector<int> y;
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < (c + 1) * 100; ++i) y.push_back(c);
  const auto s = stratified_split(y, 0.7, 1);
  EXPECT_EQ(s.train.size() + s.test.size(), y.size());
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (auto i : s.test) EXPECT_FALSE(all.count(i));
  for (int c = 0; c < 5; ++c) {
    const auto n = std::count_if(s.train.begin(), s.train.end(), [&](auto i) { return y[i] == c; });
    EXPECT_EQ(n, (c + 1) * 70);
  }
  EXPECT_EQ(s.train, stratified_split(y, 0.7, 1).train);
  EXPECT_NE(s.train, stratified_split(y, 0.7, 2).train);
}

TEST(Features, HandComputedVector) {
  auto spec = catalog_spec("Air conditioner", "ac1", "living");
  const Timestamp six_am = 1700438400 + 6 * 3600;
  const auto x = make_features(spec, 900, 850, true, six_am, 5580);
  EXPECT_DOUBLE_EQ(x[kPower], 0.9);
  EXPECT_DOUBLE_EQ(x[kPrevPower], 0.85);
  EXPECT_NEAR(x[kDeltaPower], 0.05, 1e-12);
  EXPECT_EQ(x[kOccupied], 1.0);
  EXPECT_NEAR(x[kHourSin], 1.0, 1e-12);
  EXPECT_NEAR(x[kHourCos], 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(x[kOnTimeRatio], 0.1);
  EXPECT_EQ(x[kNeedsPresence], 1.0);
}

TEST(Features, DatasetFromTraceUsesRuleLabels) {
  auto trace = sim::generate(sim::default_household(3, kSecondsPerDay));
  const auto d = dataset_from_trace(trace);
  ASSERT_EQ(d.size(), trace.timestamps.size() * trace.appliances.size());
  std::size_t row = 0;
  for (const auto& a : trace.appliances)
    for (std::size_t i = 0; i < trace.timestamps.size(); ++i, ++row) {
      ASSERT_EQ(d.y[row], to_int(a.labels[i]));
      ASSERT_DOUBLE_EQ(d.x[row][kPower] * a.spec.dacr_max_w, a.measured_w[i]);
    }
}

TEST(Harness, CleanDataIsLearnable) {
  auto trace = sim::generate(sim::benchmark_household(1, 2 * kSecondsPerDay, 60));
  const auto d = dataset_from_trace(trace, "clean");
  const auto split = stratified_split(d.y, 0.7, 1);
  auto model = train_ensemble(d.subset(split.train), {10}, 1);
  EXPECT_GE(evaluate(model, d.subset(split.test)).accuracy, 0.99);
}

TEST(Harness, ModelFilesRoundTrip) {
  TempDir dir;
  auto d = random_dataset(300, 9);
  for (auto kind : {ModelKind::tree, ModelKind::ensemble, ModelKind::knn}) {
    TrainOptions o;
    o.kind = kind;
    o.n_learners = 5;
    auto m = train(d, o, 3);
    save_model(*m, dir / "m.json");
    auto back = load_model(dir / "m.json");
    EXPECT_EQ(back->kind(), m->kind());
    EXPECT_EQ(back->predict_all(d.x), m->predict_all(d.x));
    EXPECT_EQ(evaluate(*back, d, 3), evaluate(*m, d, 3));
    save_model(*back, dir / "again.json");
    EXPECT_EQ(emedge::testing::slurp(dir / "m.json"), emedge::testing::slurp(dir / "again.json"));
  }
  EXPECT_THROW(load_model(dir / "missing.json"), StorageError);
  EXPECT_THROW(model_from_json({{"kind", "svm"}}), ValidationError);
}

TEST(Harness, CompareIsDeterministic) {
  auto d = random_dataset(400, 10);
  TrainOptions dt{ModelKind::tree};
  TrainOptions ebt{ModelKind::ensemble, 100, 5};
  const auto a = compare(d, {{"DT", dt}, {"EBT", ebt}}, {1, 2});
  const auto b = compare(d, {{"DT", dt}, {"EBT", ebt}}, {1, 2});
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].reports, b[i].reports);
  EXPECT_EQ(a[0].reports.size(), 2u);
}

}  // namespace
}  // namespace emedge::classifier
