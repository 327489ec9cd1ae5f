#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "test_support.hpp"

using namespace stochattn;
using namespace testing_support;

namespace {

std::vector<double> frequencies(const std::vector<double>& scores, std::size_t draws, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<double> counts(scores.size(), 0.0);
  for (std::size_t i = 0; i < draws; ++i) counts[sample_categorical(scores, rng)] += 1.0;
  for (double& c : counts) c /= static_cast<double>(draws);
  return counts;
}

double entropy(const Tensor& p) {
  double h = 0.0;
  for (double v : p.data())
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace

TEST(Rng, SameSeedSameSequence) {
  RngStream a(17), b(17), c(18);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, SplitDoesNotAdvanceParentAndIsKeyed) {
  RngStream parent(5);
  RngStream untouched(5);
  RngStream c1 = parent.split(1);
  RngStream c1_again = parent.split(1);
  RngStream c2 = parent.split(2);
  EXPECT_EQ(parent.next_u64(), untouched.next_u64());
  const auto v = c1.next_u64();
  EXPECT_EQ(v, c1_again.next_u64());
  EXPECT_NE(v, c2.next_u64());
}

TEST(Rng, ComponentStreamsDiffer) {
  auto a = RngStream::for_component(0, "init");
  auto b = RngStream::for_component(0, "train");
  auto a2 = RngStream::for_component(0, "init");
  const auto x = a.next_u64();
  EXPECT_NE(x, b.next_u64());
  EXPECT_EQ(x, a2.next_u64());
}

TEST(Rng, UniformInOpenIntervalAndBelowInRange) {
  RngStream rng(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GT(u, 0.0);
    EXPECT_LT(u, 1.0);
    const auto k = rng.below(7);
    EXPECT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Rng, NormalHasUnitMoments) {
  RngStream rng(4);
  double m = 0.0, s = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    m += x;
    s += x * x;
  }
  m /= n;
  s = s / n - m * m;
  EXPECT_NEAR(m, 0.0, 0.01);
  EXPECT_NEAR(s, 1.0, 0.02);
}

TEST(Gumbel, FixedPoints) {
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-1.0)), 0.0, 1e-12);
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-std::exp(1.0))), -1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(0.0)));
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(1.0)));
}

TEST(Gumbel, MeanIsEulerMascheroni) {
  RngStream rng(9);
  const Tensor g = gumbel_noise({1000000}, rng);
  const double mean = std::accumulate(g.data().begin(), g.data().end(), 0.0) / 1e6;
  EXPECT_NEAR(mean, 0.5772156649, 0.01);
  EXPECT_FALSE(g.requires_grad());
}

TEST(GumbelSoftmax, ZeroNoiseEqualsTemperedSoftmax) {
  const Tensor scores = random_tensor({3, 5}, 2);
  auto noise = NoiseSource::zero();
  for (double tau : {0.3, 1.0, 4.0}) {
    const Tensor a = gumbel_softmax(scores, tau, noise, 1);
    const Tensor b = softmax(scores, 1, tau);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  }
}

TEST(GumbelSoftmax, HugeTemperatureIsNearlyUniform) {
  RngStream rng(1);
  const Tensor scores = random_tensor({6}, 3);
  const Tensor p = gumbel_softmax(scores, 1e6, rng, 0);
  for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-3);
}

TEST(GumbelSoftmax, RowsSumToOne) {
  RngStream rng(2);
  const Tensor p = gumbel_softmax(random_tensor({4, 7}, 4, 3.0), 0.5, rng, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) total += p[r * 7 + j];
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(GumbelSoftmax, RejectsBadTemperature) {
  RngStream rng(1);
  const Tensor s({2}, {0, 1});
  EXPECT_THROW(gumbel_softmax(s, 0.0, rng, 0), ParameterError);
  EXPECT_THROW(gumbel_softmax(s, -2.0, rng, 0), ParameterError);
  EXPECT_THROW(gumbel_softmax(s, std::numeric_limits<double>::infinity(), rng, 0), ParameterError);
}

TEST(GumbelSoftmax, ReplayReproducesRecordedNoise) {
  const Tensor scores = random_tensor({3, 4}, 8);
  auto rec = NoiseSource::recording(RngStream(7));
  const Tensor a = gumbel_softmax(scores, 0.8, rec, 1);
  auto replay = rec.replay();
  const Tensor b = gumbel_softmax(scores, 0.8, replay, 1);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_THROW(gumbel_softmax(scores, 0.8, replay, 1), ContractError);
}

TEST(GumbelSoftmax, GradientFlowsToScoresOnly) {
  Tensor scores = random_tensor({2, 5}, 6, 1.0, true);
  const Tensor w = random_tensor({2, 5}, 7);
  auto rec = NoiseSource::recording(RngStream(3));
  rec.draw(Shape{2, 5});
  const auto loss = [&] {
    auto noise = rec.replay();
    return sum(mul(gumbel_softmax(scores, 0.7, noise, 1), w));
  };
  EXPECT_LT(max_gradient_error({scores}, loss), 1e-4);
}

TEST(GumbelSoftmax, EntropyGrowsWithTemperatureUnderSharedNoise) {
  const Tensor scores = random_tensor({16}, 12, 2.0);
  auto rec = NoiseSource::recording(RngStream(1));
  rec.draw(Shape{16});
  double previous = -1.0;
  for (double tau : {0.1, 0.5, 1.0, 2.0, 5.0, 50.0}) {
    auto noise = rec.replay();
    const double h = entropy(gumbel_softmax(scores, tau, noise, 0));
    EXPECT_GE(h, previous - 1e-12) << "tau " << tau;
    previous = h;
  }
  EXPECT_NEAR(previous, std::log(16.0), 0.05);
}

TEST(SampleCategorical, DominantScoreAlwaysWins) {
  const auto f = frequencies({1e6, 0.0}, 10000, 1);
  EXPECT_EQ(f[0], 1.0);
}

TEST(SampleCategorical, EqualScoresAreFair) {
  const auto f = frequencies({0.0, 0.0}, 100000, 2);
  EXPECT_NEAR(f[0], 0.5, 0.01);
}

TEST(SampleCategorical, LogWeightsGiveProportionalFrequencies) {
  const auto f = frequencies({std::log(1.0), std::log(2.0), std::log(3.0)}, 100000, 3);
  EXPECT_NEAR(f[0], 1.0 / 6.0, 0.01);
  EXPECT_NEAR(f[1], 2.0 / 6.0, 0.01);
  EXPECT_NEAR(f[2], 3.0 / 6.0, 0.01);
  const auto g = frequencies({std::log(2.0), 0.0}, 100000, 4);
  EXPECT_NEAR(g[0], 2.0 / 3.0, 0.01);
}

TEST(SampleCategorical, EmptyScoresIsAnError) {
  RngStream rng(1);
  EXPECT_THROW(sample_categorical(std::vector<double>{}, rng), ContractError);
}

TEST(SampleCategorical, AgreesWithGumbelSoftmaxAtLowTemperature) {
  // at small tau the relaxed sample concentrates on the Gumbel-max winner
  const std::vector<double> scores{0.2, -0.4, 1.1, 0.0};
  RngStream a(21), b(21);
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = sample_categorical(scores, a);
    auto noise = NoiseSource::live(b.split(static_cast<std::uint64_t>(i)));
    std::vector<double> perturbed(scores);
    RngStream c = b.split(static_cast<std::uint64_t>(i));
    for (double& s : perturbed) s += gumbel_from_uniform(c.uniform());
    const auto it = std::max_element(perturbed.begin(), perturbed.end());
    const Tensor p = gumbel_softmax(Tensor({4}, scores), 1e-3, noise, 0);
    EXPECT_GT(p[static_cast<std::size_t>(it - perturbed.begin())], 0.99);
    EXPECT_LT(k, 4u);
  }
}
