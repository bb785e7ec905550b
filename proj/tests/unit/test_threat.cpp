#include <gtest/gtest.h>

#include <map>

#include "helpers.hpp"
#include "puregen/checkpoint.hpp"
#include "puregen/threat.hpp"

using namespace puregen;

namespace {

Dataset separable(std::size_t per_class, std::uint64_t seed) {
  Dataset d{"separable", {1, 4, 4}, 2, {}, {}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 0.2f);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int y = static_cast<int>(i % 2);
    Tensor x({1, 4, 4});
    for (float& v : x.data()) v = (y == 0 ? 0.1f : 0.7f) + u(rng);
    d.images.push_back(std::move(x));
    d.labels.push_back(static_cast<std::uint8_t>(y));
  }
  return d;
}

// Test images marked by their first pixel; the lookup classifier reads a
// label per marker.
Dataset marked(const std::vector<int>& labels, int classes) {
  Dataset d{"marked", {1, 2, 2}, classes, {}, {}};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Tensor x({1, 2, 2}, 0.5f);
    x[0] = static_cast<float>(i) / 64.0f;
    d.images.push_back(std::move(x));
    d.labels.push_back(static_cast<std::uint8_t>(labels[i]));
  }
  return d;
}

}  // namespace

TEST(Poison, AlphaZeroIsIdentity) {
  const Dataset d = test::random_dataset(20, {3, 4, 4}, 2, 1);
  threat::PoisonSpec s;
  s.alpha = 0.0;
  for (auto kind : {threat::PoisonKind::kTriggered, threat::PoisonKind::kTriggerless}) {
    s.kind = kind;
    const auto r = threat::inject(d, s);
    EXPECT_EQ(r.data, d);
    EXPECT_TRUE(r.poisoned.empty());
    EXPECT_TRUE(r.warnings.empty());
  }
}

TEST(Poison, BudgetAndCount) {
  const Dataset d = test::random_dataset(50, {3, 4, 4}, 2, 1);
  for (auto kind : {threat::PoisonKind::kTriggered, threat::PoisonKind::kTriggerless}) {
    threat::PoisonSpec s;
    s.kind = kind;
    s.alpha = 0.3;
    s.xi = 8.0f / 255.0f;
    s.target_class = 1;
    const auto r = threat::inject(d, s);
    EXPECT_EQ(r.poisoned.size(), 15u);
    EXPECT_LE(r.poisoned.size(), static_cast<std::size_t>(s.alpha * 50));
    EXPECT_EQ(r.data.labels, d.labels);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const bool hit = std::binary_search(r.poisoned.begin(), r.poisoned.end(), i);
      if (hit) EXPECT_EQ(d.labels[i], 1);
      if (!hit) EXPECT_EQ(r.data.images[i], d.images[i]);
      EXPECT_LE(linf_distance(r.data.images[i], d.images[i]), 8.0 / 255.0 + 1e-7);
    }
  }
}

TEST(Poison, TinyAlphaWarns) {
  const Dataset d = test::random_dataset(5, {3, 4, 4}, 2, 1);
  threat::PoisonSpec s;
  s.alpha = 0.1;
  const auto r = threat::inject(d, s);
  EXPECT_TRUE(r.poisoned.empty());
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Poison, NotEnoughTargetImages) {
  const Dataset d = test::random_dataset(10, {3, 4, 4}, 2, 1);
  threat::PoisonSpec s;
  s.alpha = 0.9;
  EXPECT_THROW(threat::inject(d, s), ConfigError);
  s.alpha = 0.1;
  s.target_class = 5;
  EXPECT_THROW(threat::inject(d, s), ConfigError);
}

TEST(Poison, CheckerboardPattern) {
  const Tensor t = threat::checkerboard_trigger({2, 2, 2}, 0.25f);
  EXPECT_EQ(t.storage(), (std::vector<float>{0.25f, -0.25f, -0.25f, 0.25f, -0.25f, 0.25f, 0.25f, -0.25f}));
  const Tensor y = threat::apply_trigger(Tensor({2, 2, 2}, 0.9f), t);
  EXPECT_FLOAT_EQ(y[0], 1.0f);
  EXPECT_FLOAT_EQ(y[1], 0.65f);
}

TEST(Poison, Deterministic) {
  const Dataset d = test::random_dataset(40, {3, 4, 4}, 2, 1);
  threat::PoisonSpec s;
  s.kind = threat::PoisonKind::kTriggerless;
  s.seed = 3;
  EXPECT_EQ(threat::inject(d, s).data, threat::inject(d, s).data);
}

TEST(Psr, ConstantClassifiers) {
  const Dataset test = marked({0, 1, 2, 1, 0}, 3);
  const Tensor trig = threat::checkerboard_trigger(test.image_shape, 0.01f);
  EXPECT_DOUBLE_EQ(threat::psr_triggered([](const Tensor&, std::size_t) { return 2; }, test, trig, 2), 1.0);
  EXPECT_DOUBLE_EQ(threat::psr_triggered([](const Tensor&, std::size_t) { return 1; }, test, trig, 2), 0.0);
}

TEST(Psr, LookupTableMatchesCount) {
  const std::vector<int> truth = {0, 1, 2, 1, 0, 2, 2, 1, 0, 1};
  const std::vector<int> table = {0, 0, 2, 0, 1, 0, 2, 0, 0, 2};
  const Dataset test = marked(truth, 3);
  auto lookup = [&](const Tensor&, std::size_t i) { return table[i]; };
  const Tensor trig = threat::checkerboard_trigger(test.image_shape, 0.01f);
  // Non-target (y != 0) indices: 1,2,3,5,6,7,9; predicted 0 at 1,3,5,7.
  EXPECT_DOUBLE_EQ(threat::psr_triggered(lookup, test, trig, 0), 4.0 / 7.0);
}

TEST(Psr, SeesTriggeredImages) {
  const Dataset test = marked({0, 1}, 2);
  const Tensor trig = threat::checkerboard_trigger(test.image_shape, 0.1f);
  auto detector = [&](const Tensor& x, std::size_t i) { return x == test.images[i] ? 1 : 0; };
  EXPECT_DOUBLE_EQ(threat::psr_triggered(detector, test, trig, 0), 1.0);
}

TEST(Psr, AllTargetClassIsDataError) {
  const Dataset test = marked({0, 0}, 2);
  EXPECT_THROW(threat::psr_triggered([](const Tensor&, std::size_t) { return 0; }, test,
                                     threat::checkerboard_trigger(test.image_shape, 0.1f), 0),
               DataError);
}

TEST(PsrTriggerless, Examples) {
  const std::vector<Tensor> one = {Tensor({1, 1, 1})};
  EXPECT_DOUBLE_EQ(threat::psr_triggerless([](const Tensor&, std::size_t) { return 3; }, one, {3}), 1.0);
  EXPECT_DOUBLE_EQ(threat::psr_triggerless([](const Tensor&, std::size_t) { return 2; }, one, {3}), 0.0);
  const std::vector<Tensor> five(5, Tensor({1, 1, 1}));
  const std::vector<int> table = {1, 2, 3, 1, 0};
  auto lookup = [&](const Tensor&, std::size_t i) { return table[i]; };
  EXPECT_DOUBLE_EQ(threat::psr_triggerless(lookup, five, {1, 1, 3, 1, 1}), 3.0 / 5.0);
  EXPECT_THROW(threat::psr_triggerless(lookup, five, {1}), ConfigError);
}

TEST(NaturalAccuracy, Examples) {
  const std::vector<int> truth = {0, 1, 2, 3, 0, 1, 2, 3};
  const Dataset test = marked(truth, 4);
  EXPECT_DOUBLE_EQ(threat::natural_accuracy([&](const Tensor&, std::size_t i) { return truth[i]; }, test), 1.0);
  EXPECT_DOUBLE_EQ(threat::natural_accuracy([](const Tensor&, std::size_t) { return 2; }, test), 0.25);
  const std::vector<int> table = {0, 0, 2, 3, 1, 1, 0, 3};
  EXPECT_DOUBLE_EQ(threat::natural_accuracy([&](const Tensor&, std::size_t i) { return table[i]; }, test), 5.0 / 8);
}

TEST(Classifier, ArgmaxTieBreak) {
  const std::vector<float> s = {0.5f, 2.0f, 2.0f, 1.0f};
  EXPECT_EQ(threat::argmax(s), 1);
}

TEST(Classifier, ZeroEpochsIsInitialization) {
  const Dataset d = separable(8, 1);
  threat::ClassifierTrainConfig c;
  c.epochs = 0;
  c.seed = 4;
  const auto m = threat::train_classifier(d, c);
  EXPECT_EQ(m.graph.parameters(), threat::initial_classifier(d, c).graph.parameters());
  c.seed = 5;
  EXPECT_NE(m.graph.parameters(), threat::initial_classifier(d, c).graph.parameters());
}

TEST(Classifier, SeparableReachesHighAccuracy) {
  const Dataset d = separable(32, 2);
  threat::ClassifierTrainConfig c;
  c.epochs = 20;
  c.batch = 8;
  c.width = 8;
  const auto m = threat::train_classifier(d, c);
  EXPECT_GE(threat::natural_accuracy(m, d), 0.95);
}

TEST(Classifier, SeedReproducibleAcrossWorkers) {
  const Dataset d = separable(16, 3);
  threat::ClassifierTrainConfig c;
  c.epochs = 2;
  c.width = 8;
  c.seed = 9;
  c.workers = 1;
  const auto a = threat::train_classifier(d, c);
  c.workers = 3;
  const auto b = threat::train_classifier(d, c);
  EXPECT_EQ(encode_checkpoint(a.graph.parameters()), encode_checkpoint(b.graph.parameters()));
}

TEST(Classifier, ParallelMetricsMatchLabelFn) {
  const Dataset d = test::random_dataset(30, {1, 4, 4}, 3, 5);
  const auto m = threat::make_classifier(d.image_shape, 3, 1, 4);
  threat::ClassifierEvaluator eval(m);
  auto label = [&](const Tensor& x, std::size_t) { return eval.predict(x); };
  const Tensor trig = threat::checkerboard_trigger(d.image_shape, 0.1f);
  EXPECT_DOUBLE_EQ(threat::natural_accuracy(m, d, 3), threat::natural_accuracy(label, d));
  EXPECT_DOUBLE_EQ(threat::psr_triggered(m, d, trig, 1, 3), threat::psr_triggered(label, d, trig, 1));
}
