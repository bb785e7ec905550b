#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "puregen/ddpm.hpp"
#include "puregen/synthetic.hpp"

using namespace puregen;

namespace {

// Knows x0 and returns the noise implied by x_t, i.e. the exact injected eps.
class OraclePredictor final : public ddpm::NoisePredictor {
 public:
  OraclePredictor(const ddpm::NoiseSchedule& s, const Tensor& x0) : s_(s), x0_(ddpm::to_model_space(x0)) {}
  void predict(const Tensor& x_t, int t, Tensor& eps) override {
    const double ab = s_.alpha_bar(t);
    eps = Tensor(x_t.shape());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
      eps[i] = static_cast<float>((x_t[i] - std::sqrt(ab) * x0_[i]) / std::sqrt(1.0 - ab));
    }
  }

 private:
  const ddpm::NoiseSchedule& s_;
  Tensor x0_;
};

}  // namespace

TEST(Schedule, SingleStep) {
  const auto s = ddpm::make_schedule(1, 0.5, 0.5);
  EXPECT_EQ(s.betas(), std::vector<double>{0.5});
  EXPECT_EQ(s.alpha_bars(), std::vector<double>{0.5});
}

TEST(Schedule, AlphaBarIsProduct) {
  const auto s = ddpm::make_schedule();
  ASSERT_EQ(s.steps(), 1000);
  double prod = 1.0;
  for (int t = 1; t <= 250; ++t) prod *= 1.0 - s.beta(t);
  EXPECT_NEAR(s.alpha_bar(250), prod, 1e-12);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), s.alpha(1));
}

TEST(Schedule, ValidRangeAndMonotone) {
  const auto s = ddpm::make_schedule(1000, 1e-4, 0.02);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_NEAR(s.beta(1000), 0.02, 1e-15);
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_GT(s.beta(t), 0.0);
    EXPECT_LT(s.beta(t), 1.0);
    if (t > 1) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  EXPECT_THROW(s.beta(0), std::exception);
  EXPECT_THROW(s.beta(1001), std::exception);
}

TEST(Schedule, RejectsInvalid) {
  EXPECT_THROW(ddpm::make_schedule(0, 1e-4, 0.02), ConfigError);
  EXPECT_THROW(ddpm::make_schedule(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(ddpm::make_schedule(10, 0.1, 1.0), ConfigError);
  EXPECT_THROW(ddpm::make_schedule(10, 0.2, 0.1), ConfigError);
}

TEST(QSample, ZeroNoiseScalesX0) {
  const auto s = ddpm::make_schedule();
  const Tensor x0 = test::random_image({3, 4, 4}, 1);
  const Tensor y = ddpm::q_sample(s, x0, 100, Tensor(x0.shape()));
  for (std::size_t i = 0; i < x0.size(); ++i) {
    EXPECT_EQ(y[i], static_cast<float>(std::sqrt(s.alpha_bar(100)) * x0[i]));
  }
}

TEST(QSample, FirstStepIsClose) {
  // |x1 - x0| <= (1 - sqrt(ab1)) |x0| + sqrt(1 - ab1) |eps| for x0, eps in [0,1].
  const auto s = ddpm::make_schedule();
  const double bound = (1.0 - std::sqrt(s.alpha_bar(1))) + std::sqrt(1.0 - s.alpha_bar(1));
  EXPECT_LT(bound, 1.01e-2);
  const Tensor x0 = test::random_image({3, 4, 4}, 1);
  const Tensor eps = test::random_image({3, 4, 4}, 2);
  EXPECT_LE(linf_distance(ddpm::q_sample(s, x0, 1, eps), x0), bound + 1e-7);
  EXPECT_LT(linf_distance(ddpm::q_sample(s, x0, 1, Tensor(x0.shape())), x0), 1e-4);
}

TEST(Embedding, SinCosHalves) {
  const auto e = ddpm::timestep_embedding(0, 8);
  ASSERT_EQ(e.size(), 8u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_FLOAT_EQ(e[static_cast<std::size_t>(i)], 0.0f);
    EXPECT_FLOAT_EQ(e[static_cast<std::size_t>(i + 4)], 1.0f);
  }
  EXPECT_NE(ddpm::timestep_embedding(5, 8), ddpm::timestep_embedding(6, 8));
  EXPECT_THROW(ddpm::timestep_embedding(1, 7), ConfigError);
}

TEST(ModelSpace, RoundTrip) {
  const Tensor x = test::random_image({3, 4, 4}, 3);
  const Tensor m = ddpm::to_model_space(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(m[i], 2.0f * x[i] - 1.0f);
  EXPECT_LT(linf_distance(ddpm::from_model_space(m), x), 1e-7);
}

TEST(TrainDdpm, DefaultPrefix) {
  EXPECT_EQ(ddpm::DdpmTrainConfig{}.train_prefix_steps, 250);
}

TEST(TrainDdpm, ZeroEpochsLeavesModel) {
  const auto s = ddpm::make_schedule();
  const Dataset d = test::random_dataset(8, {3, 8, 8}, 2, 1);
  auto m = ddpm::make_unet({3, 8, 8}, 2, 8, 16);
  ddpm::DdpmTrainConfig c;
  c.epochs = 0;
  EXPECT_EQ(ddpm::train_ddpm(d, s, c, m).model.graph.parameters(), m.graph.parameters());
}

TEST(TrainDdpm, PrefixMustFitSchedule) {
  const auto s = ddpm::make_schedule(100, 1e-4, 0.02);
  ddpm::DdpmTrainConfig c;
  EXPECT_THROW(c.validate(s), ConfigError);
  c.train_prefix_steps = 100;
  EXPECT_NO_THROW(c.validate(s));
}

TEST(TrainDdpm, ToyLossDecreases) {
  io::TextureConfig tc;
  tc.classes = 2;
  tc.per_class = 64;
  tc.seed = 5;
  const Dataset d = io::make_textures(tc);
  const auto s = ddpm::make_schedule();
  auto m = ddpm::make_unet(d.image_shape, 6, 8, 16);
  const double before = ddpm::ddpm_loss(m, s, d, 250, 7);
  ddpm::DdpmTrainConfig c;
  c.epochs = 5;
  c.seed = 8;
  const auto trained = ddpm::train_ddpm(d, s, c, m).model;
  EXPECT_LT(ddpm::ddpm_loss(trained, s, d, 250, 7), before);
}

TEST(Purify, ZeroStepsIsIdentity) {
  const auto s = ddpm::make_schedule();
  auto m = ddpm::make_unet({3, 8, 8}, 2, 8, 16);
  const Tensor x = test::random_image({3, 8, 8}, 3);
  EXPECT_EQ(ddpm::ddpm_purify(m, s, x, 0, {}, 4).image, x);
}

TEST(Purify, OracleReconstructsWithoutReverseNoise) {
  const auto s = ddpm::make_schedule();
  const Tensor x0({1, 1, 1}, std::vector<float>{0.3f});
  OraclePredictor oracle(s, x0);
  ddpm::DdpmPurifyOptions o;
  o.reverse_noise = false;
  for (int steps : {1, 10, 75, 250}) {
    GaussianNoise noise(static_cast<std::uint64_t>(steps));
    EXPECT_NEAR(ddpm::ddpm_purify(oracle, s, x0, steps, o, noise).image[0], 0.3f, 1e-4) << steps;
  }
}

TEST(Purify, NoiseDrawsAndDeterminism) {
  const auto s = ddpm::make_schedule();
  auto m = ddpm::make_unet({3, 8, 8}, 2, 8, 16);
  const Tensor x = test::random_image({3, 8, 8}, 3);
  ddpm::NetworkPredictor p(m);
  test::RecordingNoise noise(1);
  ddpm::ddpm_purify(p, s, x, 6, {}, noise);
  // One forward draw, then reverse noise for t = 6..2 (none at t = 1).
  EXPECT_EQ(noise.sizes, std::vector<std::size_t>(6, 3 * 8 * 8));
  EXPECT_EQ(ddpm::ddpm_purify(m, s, x, 6, {}, 4).image, ddpm::ddpm_purify(m, s, x, 6, {}, 4).image);
}

TEST(Purify, OutputInUnitBoxAndLogged) {
  const auto s = ddpm::make_schedule();
  auto m = ddpm::make_unet({3, 8, 8}, 2, 8, 16);
  const Tensor x = test::random_image({3, 8, 8}, 3);
  ddpm::DdpmPurifyOptions o;
  o.record = true;
  const auto r = ddpm::ddpm_purify(m, s, x, 10, o, 4);
  for (float v : r.image.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  ASSERT_EQ(r.log.size(), 11u);
  EXPECT_EQ(r.log.records.front().step, 0);
  EXPECT_EQ(r.log.records.back().step, 10);
}

TEST(Purify, StepsBeyondScheduleRejected) {
  const auto s = ddpm::make_schedule(50, 1e-4, 0.02);
  auto m = ddpm::make_unet({3, 8, 8}, 2, 8, 16);
  EXPECT_THROW(ddpm::ddpm_purify(m, s, test::random_image({3, 8, 8}, 3), 51, {}, 4), ConfigError);
}
