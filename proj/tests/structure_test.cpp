#include <gtest/gtest.h>

#include <cmath>

#include "jhgrf/grad_check.hpp"
#include "jhgrf/structure.hpp"

using namespace jhgrf;

namespace {

EmbeddingBank bank_of(Shape ns, std::vector<double> nv, Shape es, std::vector<double> ev) {
  return {Tensor::parameter(std::move(ns), std::move(nv)),
          Tensor::parameter(std::move(es), std::move(ev))};
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Similarity, ParallelAndOrthogonal) {
  auto bank = bank_of({1, 2}, {1, 0}, {2, 2}, {1, 0, 0, 1});
  auto s = pairwise_similarity(bank);
  EXPECT_DOUBLE_EQ(s.at({0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(s.at({0, 1}), 0.5);
  auto p = pairwise_probabilities(bank);
  ASSERT_EQ(p.shape(), (Shape{1, 2, 2}));
  EXPECT_NEAR(p.at({0, 1, 0}), 0.622459, 1e-6);
  EXPECT_NEAR(p.at({0, 1, 1}), 0.622459, 1e-6);
  EXPECT_NEAR(p.at({0, 0, 0}), logistic(1.0), 1e-15);
  EXPECT_NEAR(p.at({0, 0, 1}), 0.5, 1e-15);
}

TEST(Similarity, ZeroNormRejected) {
  auto bank = bank_of({1, 2}, {0, 0}, {1, 2}, {1, 0});
  EXPECT_THROW(pairwise_probabilities(bank), ZeroNormEmbedding);
}

TEST(Similarity, SymmetricAndScaleInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<double> a(3), b(3);
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    const double k1 = rng.uniform(0.01, 100), k2 = rng.uniform(0.01, 100);
    auto ab = pairwise_similarity(bank_of({1, 3}, a, {1, 3}, b)).item();
    auto ba = pairwise_similarity(bank_of({1, 3}, b, {1, 3}, a)).item();
    std::vector<double> as = a, bs = b;
    for (auto& v : as) v *= k1;
    for (auto& v : bs) v *= k2;
    auto scaled = pairwise_similarity(bank_of({1, 3}, as, {1, 3}, bs)).item();
    EXPECT_NEAR(ab, ba, 1e-15);
    EXPECT_NEAR(ab, scaled, 1e-12);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(EmbeddingBank, InitRangeAndNonZero) {
  ParameterSet params;
  Rng rng(5);
  auto bank = EmbeddingBank::create(params, "s.", 6, 3, 16, rng);
  EXPECT_EQ(bank.node_embeddings.shape(), (Shape{6, 16}));
  EXPECT_EQ(bank.edge_embeddings.shape(), (Shape{3, 16}));
  EXPECT_EQ(params.size(), 2u);
  for (double v : bank.node_embeddings.to_vector()) EXPECT_LE(std::abs(v), 0.25);
  EXPECT_NO_THROW(pairwise_similarity(bank));
}

TEST(SampleIncidence, FixedNoiseExamples) {
  auto zero_noise = Tensor::zeros({1, 1, 2});
  auto equal = build_tensor({1, 1, 2}, {0.7, 0.7});
  EXPECT_DOUBLE_EQ(gumbel_softmax_incidence(equal, zero_noise, 0.05).weights.item(), 0.5);
  auto gap = build_tensor({1, 1, 2}, {1.0, 0.0});
  const double w = gumbel_softmax_incidence(gap, zero_noise, 0.05).weights.item();
  // softmax(20, 0)_0 = 1 / (1 + e^-20)
  EXPECT_NEAR(w, 1.0 / (1.0 + std::exp(-20.0)), 1e-15);
  EXPECT_NEAR(1.0 - w, 2.06e-9, 0.01e-9);
  Rng rng(1);
  EXPECT_THROW(sample_incidence(gap, -1.0, 1e-8, rng), InvalidTemperature);
  EXPECT_THROW(sample_incidence(gap, 0.0, 1e-8, rng), InvalidTemperature);
}

TEST(SampleIncidence, EmpiricalFrequencyMatchesLogitSoftmax) {
  auto probs = build_tensor({1, 2, 2}, {0.9, 0.2, 0.55, 0.6});
  Rng rng(42);
  const int draws = 10000;
  std::vector<double> hits(2, 0.0);
  for (int k = 0; k < draws; ++k) {
    auto inc = sample_incidence(probs, 1.0, 1e-8, rng);
    for (std::size_t j = 0; j < 2; ++j) hits[j] += inc.weights.at({0, j}) >= 0.5 ? 1 : 0;
  }
  for (std::size_t j = 0; j < 2; ++j) {
    const double a = probs.at({0, j, 0}), b = probs.at({0, j, 1});
    const double expected = std::exp(a) / (std::exp(a) + std::exp(b));
    EXPECT_NEAR(hits[j] / draws, expected, 0.02) << "edge " << j;
  }
}

TEST(SampleIncidence, LowTemperatureSaturates) {
  // At gamma = 1e-3 an entry is within 1e-6 of {0, 1} once the perturbed
  // logits differ by more than gamma * ln(1e6) ~ 0.0138.
  Rng rng(9);
  auto probs = build_tensor({2, 3, 2}, {0.7, 0.6, 0.62, 0.61, 0.5, 0.55, 0.7, 0.72, 0.66, 0.6,
                                        0.51, 0.5});
  std::size_t checked = 0;
  for (int k = 0; k < 50; ++k) {
    auto noise = sample_gumbel_noise(2, 3, rng);
    auto inc = gumbel_softmax_incidence(probs, noise, 1e-3);
    for (std::size_t e = 0; e < 6; ++e) {
      const double gap = (noise.values()[2 * e] + probs.values()[2 * e]) -
                         (noise.values()[2 * e + 1] + probs.values()[2 * e + 1]);
      if (std::abs(gap) < 0.02) continue;
      const double v = inc.weights.values()[e];
      EXPECT_LT(std::min(v, 1.0 - v), 1e-6);
      ++checked;
    }
  }
  EXPECT_GT(checked, 250u);
}

TEST(SampleIncidence, GradientWrtEmbeddings) {
  ParameterSet params;
  Rng rng(17);
  auto bank = EmbeddingBank::create(params, "", 4, 2, 5, rng);
  auto noise = sample_gumbel_noise(4, 2, rng);
  auto weights = Tensor::from({4, 2}, {0.3, -1.2, 0.8, 0.1, -0.5, 0.9, 1.1, -0.7});
  auto loss = [&] {
    auto inc = gumbel_softmax_incidence(pairwise_probabilities(bank), noise, 0.5);
    return sum(inc.weights * weights);
  };
  auto report = grad_check_parameters(loss, params.entries(), 1e-5);
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_EQ(report.checked, 4u * 5 + 2u * 5);
}

TEST(DeterministicIncidence, Reproducible) {
  ParameterSet params;
  Rng rng(2);
  auto bank = EmbeddingBank::create(params, "", 5, 3, 4, rng);
  auto a = deterministic_incidence(pairwise_probabilities(bank), 0.05);
  auto b = deterministic_incidence(pairwise_probabilities(bank), 0.05);
  EXPECT_EQ(a.weights.to_vector(), b.weights.to_vector());
  for (double v : a.weights.to_vector()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(HardenIncidence, Examples) {
  IncidenceMatrix hi{Tensor::full({2, 2}, 0.9)};
  IncidenceMatrix lo{Tensor::full({2, 2}, 0.1)};
  IncidenceMatrix straddle{build_tensor({1, 2}, {0.4, 0.6})};
  auto h = harden_incidence(hi);
  EXPECT_EQ(h.mode, IncidenceMode::hard);
  EXPECT_EQ(h.weights.to_vector(), std::vector<double>(4, 1.0));
  EXPECT_EQ(harden_incidence(lo).weights.to_vector(), std::vector<double>(4, 0.0));
  EXPECT_EQ(harden_incidence(straddle, 0.5).weights.to_vector(), (std::vector<double>{0, 1}));
  EXPECT_DOUBLE_EQ(harden_incidence(straddle).density(), 0.5);
}
