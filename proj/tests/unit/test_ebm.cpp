#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "puregen/ebm.hpp"
#include "puregen/synthetic.hpp"

using namespace puregen;

TEST(Energy, QuadraticExamples) {
  auto q = ebm::make_quadratic_energy({1, 2, 2});
  EXPECT_DOUBLE_EQ(ebm::energy(q, Tensor({1, 2, 2})), 0.0);
  Tensor x({1, 2, 2});
  x[2] = 2.0f;
  EXPECT_DOUBLE_EQ(ebm::energy(q, x), 2.0);
}

TEST(Energy, DeterministicAndFinite) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = test::random_image({3, 8, 8}, s);
    const double e = ebm::energy(m, x);
    EXPECT_TRUE(std::isfinite(e));
    EXPECT_EQ(e, ebm::energy(m, x));
  }
  EXPECT_TRUE(std::isfinite(ebm::energy(m, Tensor::zeros({3, 8, 8}))));
  EXPECT_TRUE(std::isfinite(ebm::energy(m, Tensor::ones({3, 8, 8}))));
}

TEST(Energy, ShapeMismatchIsConfigError) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1);
  EXPECT_THROW(ebm::energy(m, Tensor({3, 4, 4})), ConfigError);
}

TEST(Langevin, ZeroStepsIsIdentity) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1);
  const Tensor x = test::random_image({3, 8, 8}, 2);
  ebm::LangevinOptions o;
  o.steps = 0;
  EXPECT_EQ(ebm::langevin_purify(m, x, o, 5).image, x);
}

TEST(Langevin, DefaultsMatchPurificationSetting) {
  ebm::LangevinOptions o;
  EXPECT_EQ(o.steps, 150);
  EXPECT_FLOAT_EQ(o.step_size, 0.01f);
  EXPECT_FLOAT_EQ(o.noise_scale, 1.0f);
}

TEST(Langevin, SameSeedIsBitwiseEqual) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1);
  const Tensor x = test::random_image({3, 8, 8}, 2);
  ebm::LangevinOptions o;
  o.steps = 20;
  EXPECT_EQ(ebm::langevin_purify(m, x, o, 9).image, ebm::langevin_purify(m, x, o, 9).image);
  EXPECT_NE(ebm::langevin_purify(m, x, o, 9).image, ebm::langevin_purify(m, x, o, 10).image);
}

TEST(Langevin, OneNoiseDrawPerStep) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1);
  test::RecordingNoise noise(3);
  ebm::LangevinOptions o;
  o.steps = 12;
  ebm::langevin_purify(m, test::random_image({3, 8, 8}, 2), o, noise);
  EXPECT_EQ(noise.sizes, std::vector<std::size_t>(12, 3 * 8 * 8));
}

TEST(Langevin, ClampKeepsImagesInBox) {
  auto q = ebm::make_quadratic_energy({1, 4, 4});
  ebm::LangevinOptions o;
  o.steps = 50;
  o.noise_scale = 5.0f;
  const Tensor y = ebm::langevin_purify(q, test::random_image({1, 4, 4}, 1), o, 1).image;
  for (float v : y.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Langevin, NoiselessQuadraticContracts) {
  // x_{k+1} = (1 - dtau) x_k exactly when eta = 0.
  auto q = ebm::make_quadratic_energy({1, 1, 2});
  ebm::LangevinOptions o;
  o.steps = 3;
  o.noise_scale = 0.0f;
  o.clamp = false;
  const Tensor x({1, 1, 2}, std::vector<float>{0.5f, 1.0f});
  const Tensor y = ebm::langevin_purify(q, x, o, 1).image;
  const float f = 0.99f * 0.99f * 0.99f;
  EXPECT_NEAR(y[0], 0.5f * f, 1e-6);
  EXPECT_NEAR(y[1], f, 1e-6);
}

TEST(Langevin, RecordsDistancesFromReferences) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1);
  const Tensor clean = test::random_image({3, 8, 8}, 2);
  ebm::LangevinOptions o;
  o.steps = 5;
  o.record = true;
  o.clean_reference = &clean;
  const auto r = ebm::langevin_purify(m, clean, o, 4);
  ASSERT_EQ(r.log.size(), 6u);
  EXPECT_EQ(r.log.records[0].l2_clean, 0.0);
  EXPECT_EQ(r.log.records[0].l2_poisoned, 0.0);
  EXPECT_NEAR(r.log.records[5].l2_clean, l2_distance(r.image, clean), 1e-6);
}

TEST(Bank, InitializedSlotsAndDistinctDraws) {
  ebm::PersistentBank bank(20, {1, 2, 2}, 3);
  EXPECT_EQ(bank.size(), 20u);
  EXPECT_EQ(bank.initialized_count(), 20u);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    auto slots = bank.draw(8, rng);
    std::sort(slots.begin(), slots.end());
    EXPECT_EQ(std::adjacent_find(slots.begin(), slots.end()), slots.end());
    EXPECT_LT(slots.back(), 20u);
  }
  EXPECT_THROW(bank.draw(21, rng), std::exception);
  bank.store(3, Tensor({1, 2, 2}, 0.5f));
  EXPECT_EQ(bank.size(), 20u);
  EXPECT_EQ(bank.read(3), Tensor({1, 2, 2}, 0.5f));
}

TEST(TrainEbm, PaperDefaults) {
  ebm::EbmTrainConfig c;
  EXPECT_FLOAT_EQ(c.data_noise, 0.02f);
  EXPECT_FLOAT_EQ(c.step_size, 0.01f);
  EXPECT_EQ(c.langevin_steps, 100);
  EXPECT_FLOAT_EQ(c.learning_rate, 5e-5f);
}

TEST(TrainEbm, ZeroLearningRateLeavesParameters) {
  Dataset d = test::random_dataset(1, {3, 8, 8}, 1, 4);
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1, 8);
  ebm::EbmTrainConfig c;
  c.steps = 1;
  c.langevin_steps = 3;
  c.batch = 1;
  c.learning_rate = 0.0f;
  const auto result = ebm::train_ebm(d, c, m);
  EXPECT_EQ(result.model.graph.parameters(), m.graph.parameters());
  EXPECT_EQ(result.history.size(), 1u);
}

TEST(TrainEbm, RejectsInvalidConfig) {
  Dataset d = test::random_dataset(4, {3, 8, 8}, 2, 4);
  ebm::EbmTrainConfig c;
  c.batch = 0;
  EXPECT_THROW(ebm::train_ebm(d, c, ebm::make_convnet_energy({3, 8, 8}, 1, 8)), ConfigError);
}

TEST(TrainEbm, DivergenceGuardTrips) {
  Dataset d = test::random_dataset(16, {3, 8, 8}, 2, 4);
  ebm::EbmTrainConfig c;
  c.steps = 50;
  c.langevin_steps = 2;
  c.batch = 4;
  c.learning_rate = 50.0f;
  c.divergence_bound = 1.0;
  EXPECT_THROW(ebm::train_ebm(d, c, ebm::make_convnet_energy({3, 8, 8}, 1, 8)), DivergenceError);
}

TEST(TrainEbm, ToyRunLowersDataEnergyBelowNoise) {
  io::TextureConfig tc;
  tc.classes = 2;
  tc.per_class = 64;
  tc.seed = 1;
  const Dataset train = io::make_textures(tc);
  tc.seed = 2;
  tc.per_class = 16;
  const Dataset held_out = io::make_textures(tc);
  ebm::EbmTrainConfig c;
  c.steps = 150;
  c.langevin_steps = 20;
  c.step_size = 5e-5f;
  c.learning_rate = 5e-4f;
  c.optimizer = OptimizerKind::kAdam;
  c.seed = 3;
  const auto m = ebm::train_ebm(train, c, ebm::make_convnet_energy(train.image_shape, 4, 8)).model;
  std::vector<Tensor> noise;
  for (std::uint64_t s = 0; s < 32; ++s) noise.push_back(test::random_image(train.image_shape, 100 + s));
  const auto ed = ebm::energies(m, held_out.images);
  const auto en = ebm::energies(m, noise);
  const double md = std::accumulate(ed.begin(), ed.end(), 0.0) / static_cast<double>(ed.size());
  const double mn = std::accumulate(en.begin(), en.end(), 0.0) / static_cast<double>(en.size());
  EXPECT_LT(md, mn);
}

TEST(TrainEbm, SameSeedSameModel) {
  Dataset d = test::random_dataset(16, {3, 8, 8}, 2, 4);
  ebm::EbmTrainConfig c;
  c.steps = 3;
  c.langevin_steps = 2;
  c.batch = 4;
  c.seed = 8;
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1, 8);
  c.workers = 1;
  const auto a = ebm::train_ebm(d, c, m).model;
  c.workers = 3;
  const auto b = ebm::train_ebm(d, c, m).model;
  EXPECT_EQ(a.graph.parameters(), b.graph.parameters());
}

TEST(EnergyRank, QuadraticOrdersByEnergy) {
  auto q = ebm::make_quadratic_energy({1, 2, 2});
  EXPECT_EQ(ebm::energy_rank(q, {Tensor::zeros({1, 2, 2}), Tensor::ones({1, 2, 2})}),
            (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(ebm::energy_rank(q, {Tensor::zeros({1, 2, 2})}), (std::vector<std::size_t>{0}));
}

TEST(EnergyRank, TiesByAscendingIndex) {
  auto q = ebm::make_quadratic_energy({1, 1, 1});
  std::vector<Tensor> xs(4, Tensor({1, 1, 1}, 0.5f));
  xs[2] = Tensor({1, 1, 1}, 0.9f);
  EXPECT_EQ(ebm::energy_rank(q, xs), (std::vector<std::size_t>{2, 0, 1, 3}));
}

TEST(EnergyRank, IsAPermutation) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 5);
  const Dataset d = test::random_dataset(37, {3, 8, 8}, 2, 6);
  auto order = ebm::energy_rank(m, d.images, 3);
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> expect(37);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(order, expect);
}
