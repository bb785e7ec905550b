#include <gtest/gtest.h>

#include <algorithm>

#include "helpers.hpp"
#include "puregen/pipeline.hpp"

using namespace puregen;

namespace {

struct Fixture {
  ebm::EnergyModel ebm = ebm::make_convnet_energy({3, 8, 8}, 1, 8);
  ddpm::DdpmModel ddpm = ddpm::make_unet({3, 8, 8}, 2, 8, 16);
  ddpm::NoiseSchedule schedule = ddpm::make_schedule();
  pipeline::Models models() const { return {&ebm, &ddpm, &schedule}; }
};

pipeline::PurifyConfig cfg(int e, int d, int r, double k = 1.0) {
  pipeline::PurifyConfig c;
  c.ebm_steps = e;
  c.ddpm_steps = d;
  c.reps = r;
  c.k = k;
  c.seed = 17;
  return c;
}

}  // namespace

TEST(PurifyConfig, Presets) {
  using P = pipeline::PurifyConfig;
  EXPECT_EQ(P::ebm().label(), "T=[150,0,1],k=1");
  EXPECT_EQ(P::ddpm().label(), "T=[0,75,1],k=1");
  EXPECT_EQ(P::naive().label(), "T=[150,75,1],k=1");
  EXPECT_EQ(P::reps_combo().label(), "T=[10,50,5],k=1");
  EXPECT_EQ(P::filt().label(), "T=[0,125,1],k=0.5");
}

TEST(PurifyConfig, Validation) {
  EXPECT_THROW(cfg(-1, 0, 1).validate(), ConfigError);
  EXPECT_THROW(cfg(0, 0, 0).validate(), ConfigError);
  EXPECT_THROW(cfg(0, 0, 1, 1.5).validate(), ConfigError);
  EXPECT_THROW(cfg(0, 0, 1, -0.1).validate(), ConfigError);
}

TEST(Psi, ZeroStepsIsBitExactIdentity) {
  const Tensor x = test::random_image({3, 8, 8}, 3);
  EXPECT_EQ(pipeline::psi(x, cfg(0, 0, 1), {}), x);
  EXPECT_EQ(pipeline::psi(x, cfg(0, 0, 4), {}), x);
}

TEST(Psi, MissingModelIsConfigError) {
  const Tensor x = test::random_image({3, 8, 8}, 3);
  EXPECT_THROW(pipeline::psi(x, cfg(5, 0, 1), {}), ConfigError);
  EXPECT_THROW(pipeline::psi(x, cfg(0, 5, 1), {}), ConfigError);
}

TEST(Psi, RepsEqualManualComposition) {
  Fixture f;
  const auto c = cfg(3, 4, 3);
  const Tensor x = test::random_image({3, 8, 8}, 4);
  const std::uint64_t image = 11;
  Tensor manual = x;
  for (int rep = 0; rep < 3; ++rep) {
    ebm::LangevinOptions lo;
    lo.steps = 3;
    manual = ebm::langevin_purify(f.ebm, manual, lo, pipeline::stage_seed(c.seed, image, rep, pipeline::Stage::kEbm))
                 .image;
    manual = ddpm::ddpm_purify(f.ddpm, f.schedule, manual, 4, {},
                               pipeline::stage_seed(c.seed, image, rep, pipeline::Stage::kDdpm))
                 .image;
  }
  EXPECT_EQ(pipeline::psi(x, c, f.models(), image), manual);
}

TEST(Psi, DeterministicPerImageKey) {
  Fixture f;
  const Tensor x = test::random_image({3, 8, 8}, 4);
  const auto c = cfg(5, 3, 1);
  EXPECT_EQ(pipeline::psi(x, c, f.models(), 2), pipeline::psi(x, c, f.models(), 2));
  EXPECT_NE(pipeline::psi(x, c, f.models(), 2), pipeline::psi(x, c, f.models(), 3));
}

TEST(PsiDataset, KZeroIsIdentity) {
  Fixture f;
  const Dataset d = test::random_dataset(9, {3, 8, 8}, 3, 5);
  const auto out = pipeline::psi_dataset(d, cfg(10, 10, 1, 0.0), f.models());
  EXPECT_TRUE(out.purified.empty());
  EXPECT_EQ(out.data, d);
  // No models are needed when nothing is purified.
  EXPECT_EQ(pipeline::psi_dataset(d, cfg(10, 10, 1, 0.0), {}).data, d);
}

TEST(PsiDataset, KOneTouchesEveryImage) {
  Fixture f;
  const Dataset d = test::random_dataset(9, {3, 8, 8}, 3, 5);
  const auto out = pipeline::psi_dataset(d, cfg(2, 0, 1, 1.0), f.models());
  ASSERT_EQ(out.purified.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(out.purified[i], i);
    EXPECT_NE(out.data.images[i], d.images[i]);
  }
  EXPECT_EQ(out.data.labels, d.labels);
}

TEST(PsiDataset, HalfPartitionOrdersEnergies) {
  Fixture f;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Dataset d = test::random_dataset(10 + s, {3, 8, 8}, 2, 100 + s);
    const auto chosen = pipeline::filter_selection(d, 0.5, f.models());
    EXPECT_EQ(chosen.size(), (d.size() + 1) / 2);
    const auto e = ebm::energies(f.ebm, d.images);
    double min_high = 1e300, max_low = -1e300;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (std::binary_search(chosen.begin(), chosen.end(), i)) {
        min_high = std::min(min_high, e[i]);
      } else {
        max_low = std::max(max_low, e[i]);
      }
    }
    EXPECT_GE(min_high, max_low);
  }
}

TEST(PsiDataset, FilterNeedsEnergyModel) {
  const Dataset d = test::random_dataset(4, {3, 8, 8}, 2, 5);
  EXPECT_THROW(pipeline::filter_selection(d, 0.5, {}), ConfigError);
}

TEST(PsiDataset, WorkerCountDoesNotChangeOutput) {
  Fixture f;
  const Dataset d = test::random_dataset(7, {3, 8, 8}, 2, 5);
  const auto c = cfg(3, 3, 1, 1.0);
  EXPECT_EQ(pipeline::psi_dataset(d, c, f.models(), 1).data, pipeline::psi_dataset(d, c, f.models(), 4).data);
}

TEST(PsiDataset, LabelsDoNotAffectImages) {
  Fixture f;
  Dataset d = test::random_dataset(6, {3, 8, 8}, 3, 5);
  const auto c = cfg(3, 0, 1, 0.5);
  const auto a = pipeline::psi_dataset(d, c, f.models());
  std::reverse(d.labels.begin(), d.labels.end());
  const auto b = pipeline::psi_dataset(d, c, f.models());
  EXPECT_EQ(a.data.images, b.data.images);
  EXPECT_EQ(a.purified, b.purified);
}

TEST(ClassifyWithPsi, IdentityMatchesClassifier) {
  const auto model = threat::make_classifier({3, 8, 8}, 4, 3);
  threat::ClassifierEvaluator eval(model);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = test::random_image({3, 8, 8}, s);
    const int direct = eval.predict(x);
    EXPECT_EQ(pipeline::classify_with_psi(eval, x, cfg(0, 0, 1), {}), direct);
  }
}
