#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "puregen/diagnostics.hpp"

using namespace puregen;

namespace {

TrajectoryLog make_log(std::initializer_list<std::pair<double, double>> rows) {
  TrajectoryLog log;
  int step = 0;
  for (auto [c, p] : rows) log.records.push_back({step++, 0.0, c, p});
  return log;
}

pipeline::PurifyConfig ebm_only(int steps) {
  pipeline::PurifyConfig c;
  c.ebm_steps = steps;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Crossover, HandBuiltLogs) {
  EXPECT_EQ(diagnostics::crossover_step(make_log({{1, 0}, {1, 0.5}, {1, 0.9}, {1, 1.2}, {1, 2}})), 3);
  EXPECT_EQ(diagnostics::crossover_step(make_log({{1, 1}, {2, 2}})), std::nullopt);
  EXPECT_EQ(diagnostics::crossover_step(TrajectoryLog{}), std::nullopt);
}

TEST(L2Trajectory, ZeroPerturbationCoincides) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1, 8);
  const Tensor x = test::random_image({3, 8, 8}, 2);
  const auto t = diagnostics::l2_trajectory({&m, nullptr, nullptr}, ebm_only(10), x, x);
  ASSERT_EQ(t.clean.size(), 11u);
  for (std::size_t i = 0; i < t.clean.size(); ++i) {
    EXPECT_EQ(t.clean.records[i].l2_clean, t.poisoned.records[i].l2_clean);
    EXPECT_EQ(t.poisoned.records[i].l2_clean, t.poisoned.records[i].l2_poisoned);
  }
  EXPECT_EQ(t.clean.records[0].l2_clean, 0.0);
  EXPECT_EQ(diagnostics::crossover_step(t.poisoned), std::nullopt);
}

TEST(L2Trajectory, StepZeroDistances) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1, 8);
  const Tensor x = test::random_image({3, 8, 8}, 2);
  const Tensor xp = threat::apply_trigger(x, threat::checkerboard_trigger(x.shape(), 0.05f));
  const auto t = diagnostics::l2_trajectory({&m, nullptr, nullptr}, ebm_only(4), x, xp);
  EXPECT_EQ(t.poisoned.records[0].l2_poisoned, 0.0);
  EXPECT_NEAR(t.poisoned.records[0].l2_clean, l2_distance(x, xp), 1e-9);
  EXPECT_EQ(t.clean.records[0].l2_clean, 0.0);
}

TEST(L2Trajectory, DdpmGrid) {
  auto d = ddpm::make_unet({3, 8, 8}, 1, 8, 16);
  const auto s = ddpm::make_schedule();
  const Tensor x = test::random_image({3, 8, 8}, 2);
  pipeline::PurifyConfig c;
  c.ebm_steps = 0;
  c.ddpm_steps = 12;
  const auto t = diagnostics::l2_trajectory({nullptr, &d, &s}, c, x, x, 5);
  std::vector<int> steps;
  for (const auto& r : t.poisoned.records) steps.push_back(r.step);
  EXPECT_EQ(steps, (std::vector<int>{0, 5, 10, 12}));
}

TEST(L2Trajectory, RejectsMixedConfigs) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1, 8);
  const Tensor x = test::random_image({3, 8, 8}, 2);
  EXPECT_THROW(diagnostics::l2_trajectory({&m, nullptr, nullptr}, pipeline::PurifyConfig::naive(), x, x), ConfigError);
}

TEST(Histogram, IdenticalSetsIdenticalCounts) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1, 8);
  const auto d = test::random_dataset(25, {3, 8, 8}, 2, 3);
  const auto h = diagnostics::energy_histogram(m, d.images, d.images, d.images, 7);
  EXPECT_EQ(h.edges.size(), 8u);
  EXPECT_EQ(h.clean, h.poisoned);
  EXPECT_EQ(h.clean, h.purified);
  std::size_t total = 0;
  for (auto c : h.clean) total += c;
  EXPECT_EQ(total, 25u);
  EXPECT_EQ(h.mean_clean, h.mean_poisoned);
}

TEST(Histogram, CsvHeader) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1, 8);
  const auto d = test::random_dataset(5, {3, 8, 8}, 2, 3);
  std::ostringstream out;
  diagnostics::write_histogram_csv(out, diagnostics::energy_histogram(m, d.images, d.images, d.images, 3));
  const std::string s = out.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "bin_lo,bin_hi,count_clean,count_poisoned,count_purified");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}

TEST(Lyapunov, QuadraticMatchesLinearRate) {
  diagnostics::LyapunovOptions o;
  o.steps = 500;
  for (double c : {0.5, 1.0, 5.0}) {
    auto q = ebm::make_quadratic_energy({1, 4, 4}, static_cast<float>(c));
    const double expect = std::log(std::abs(1.0 - o.step_size * c));
    for (double eta : {0.1, 1.0, 2.0}) {
      const auto est = diagnostics::lyapunov(q, test::random_image({1, 4, 4}, 1), eta, o, 3);
      EXPECT_NEAR(est.lambda, expect, 1e-3) << "c=" << c << " eta=" << eta;
      EXPECT_FALSE(est.flagged);
    }
  }
}

TEST(Lyapunov, DegenerateContractionHitsFloor) {
  diagnostics::LyapunovOptions o;
  o.steps = 100;
  auto q = ebm::make_quadratic_energy({1, 2, 2}, 100.0f);  // dtau * c = 1
  const auto est = diagnostics::lyapunov(q, test::random_image({1, 2, 2}, 1), 1.0, o, 3);
  EXPECT_LE(est.lambda, diagnostics::kLogGrowthFloor / o.renorm_interval + 1e-9);
  EXPECT_TRUE(est.flagged);
}

TEST(Lyapunov, SharedNoiseOneDrawPerStep) {
  diagnostics::LyapunovOptions o;
  o.steps = 40;
  o.directions = 3;
  auto q = ebm::make_quadratic_energy({1, 2, 3});
  test::RecordingNoise noise(1);
  diagnostics::lyapunov(q, test::random_image({1, 2, 3}, 1), 1.0, o, noise, 7);
  EXPECT_EQ(noise.sizes, std::vector<std::size_t>(40, 6));
}

TEST(Lyapunov, RejectsBadOptions) {
  auto q = ebm::make_quadratic_energy({1, 2, 2});
  diagnostics::LyapunovOptions o;
  o.steps = 5;
  EXPECT_THROW(diagnostics::lyapunov(q, Tensor({1, 2, 2}), 1.0, o, 1), ConfigError);
  o.steps = 100;
  EXPECT_THROW(diagnostics::lyapunov(q, Tensor({1, 2, 2}), -1.0, o, 1), ConfigError);
}

TEST(LyapunovSweep, SinglePointAndConstantOnQuadratic) {
  auto q = ebm::make_quadratic_energy({1, 3, 3}, 2.0f);
  diagnostics::LyapunovOptions o;
  o.steps = 300;
  const Tensor x = test::random_image({1, 3, 3}, 4);
  const auto one = diagnostics::lyapunov_sweep(q, x, {1.0}, o, 9);
  EXPECT_EQ(one.estimates.size(), 1u);
  EXPECT_EQ(one.eta.size(), 1u);
  const auto sweep = diagnostics::lyapunov_sweep(q, x, {0.1, 0.5, 1.0, 2.0}, o, 9, 2);
  for (const auto& e : sweep.estimates) EXPECT_NEAR(e.lambda, sweep.estimates[0].lambda, 1e-3);
  EXPECT_FALSE(sweep.transition.has_value());
  std::ostringstream out;
  diagnostics::write_lyapunov_csv(out, sweep);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "eta,lambda,stderr");
}

TEST(LyapunovSweep, WorkersDoNotChangeResults) {
  auto m = ebm::make_convnet_energy({3, 8, 8}, 1, 8);
  diagnostics::LyapunovOptions o;
  o.steps = 60;
  const Tensor x = test::random_image({3, 8, 8}, 4);
  const auto a = diagnostics::lyapunov_sweep(m, x, {0.5, 1.0, 2.0}, o, 9, 1);
  const auto b = diagnostics::lyapunov_sweep(m, x, {0.5, 1.0, 2.0}, o, 9, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.estimates[i].lambda, b.estimates[i].lambda);
}
