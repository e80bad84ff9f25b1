#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <set>

#include "grn/numerics.hpp"

using namespace grn;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitIgnoresParentConsumption) {
  Rng a(7), b(7);
  for (int i = 0; i < 17; ++i) b.next_u64();
  Rng ca = a.split(3), cb = b.split(3);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(ca.next_u64(), cb.next_u64());
  EXPECT_NE(a.split(3).next_u64(), a.split(4).next_u64());
}

TEST(Rng, UniformAndBelowRanges) {
  Rng r(1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.below(7);
    ASSERT_LT(k, 7u);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_THROW(r.below(0), ParameterError);
}

TEST(Rng, UniformMeanNearHalf) {
  Rng r(9);
  double s = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) s += r.uniform();
  // sd of the mean is sqrt(1/12/n) ~ 6.5e-4
  EXPECT_NEAR(s / n, 0.5, 4e-3);
}

TEST(Tensor, ShapeAndSize) {
  Tensor t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.extent(1), 3u);
  EXPECT_EQ(t.last_extent(), 4u);
  EXPECT_TRUE(t.all_finite());
  t[5] = std::nanf("");
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), ParameterError);
}

TEST(Softmax, RowsSumToOneAndMatchOracle) {
  Rng r(3);
  TensorD logits({5, 7});
  for (auto& v : logits.values()) v = 6.0 * r.uniform() - 3.0;
  for (double tau : {0.5, 1.0, 1.7}) {
    const TensorD p = softmax(logits, tau);
    for (std::size_t row = 0; row < 5; ++row) {
      long double z = 0;
      for (std::size_t j = 0; j < 7; ++j) z += std::exp(static_cast<long double>(logits[row * 7 + j]) / tau);
      double sum = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        const double want = static_cast<double>(std::exp(static_cast<long double>(logits[row * 7 + j]) / tau) / z);
        EXPECT_NEAR(p[row * 7 + j], want, 1e-14);
        sum += p[row * 7 + j];
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  Tensor logits({1, 3}, std::vector<float>{1000.f, 999.f, -1000.f});
  const Tensor p = softmax(logits);
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-6);
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  Tensor logits({1, 2});
  EXPECT_THROW(softmax(logits, 0.0), ParameterError);
  EXPECT_THROW(softmax(logits, -1.0), ParameterError);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  TensorD logits({10, 4}, 0.0);
  std::vector<std::uint32_t> t(10, 2);
  EXPECT_NEAR(cross_entropy(logits, t), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, MatchesHandComputedValue) {
  TensorD logits({1, 3}, std::vector<double>{1.0, 2.0, 3.0});
  std::vector<std::uint32_t> t{0};
  const double want = -1.0 + std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(cross_entropy(logits, t), want, 1e-12);
}

TEST(CrossEntropy, RejectsBadTargets) {
  TensorD logits({2, 3});
  std::vector<std::uint32_t> t{0, 3};
  EXPECT_THROW(cross_entropy(logits, t), IndexError);
  std::vector<std::uint32_t> short_t{0};
  EXPECT_THROW(cross_entropy(logits, short_t), ParameterError);
}

TEST(GradCheck, ExactGradientPasses) {
  GradFunction f = [](std::span<const double> x, std::span<double> g) {
    double v = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      v += (i + 1) * x[i] * x[i] + std::sin(x[i]);
      if (!g.empty()) g[i] = 2.0 * (i + 1) * x[i] + std::cos(x[i]);
    }
    return v;
  };
  std::vector<double> x{0.3, -1.2, 2.0, 0.01};
  EXPECT_LT(grad_check(f, x, 1e-5), 1e-7);
}

TEST(GradCheck, WrongGradientIsCaught) {
  GradFunction f = [](std::span<const double> x, std::span<double> g) {
    if (!g.empty()) g[0] = 3.0 * x[0];  // should be 2x
    return x[0] * x[0];
  };
  std::vector<double> x{1.0};
  const auto rep = grad_check_report(f, x, 1e-5);
  EXPECT_GT(rep.max_relative_error, 0.1);
  EXPECT_EQ(rep.worst_index, 0u);
}

TEST(GradCheck, EpsilonRangeEnforced) {
  GradFunction f = [](std::span<const double> x, std::span<double> g) {
    if (!g.empty()) g[0] = 1.0;
    return x[0];
  };
  std::vector<double> x{0.0};
  EXPECT_THROW(grad_check(f, x, 1e-8), ParameterError);
  EXPECT_THROW(grad_check(f, x, 1e-2), ParameterError);
}

TEST(GradCheck, NonFiniteObjectiveThrows) {
  GradFunction f = [](std::span<const double> x, std::span<double> g) {
    if (!g.empty()) g[0] = 0.0;
    return std::log(x[0]);
  };
  std::vector<double> x{-1.0};
  EXPECT_THROW(grad_check(f, x, 1e-4), NumericError);
}

TEST(ParallelFor, EachIndexExactlyOnce) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(ParallelFor, RethrowsBodyException) {
  EXPECT_THROW(parallel_for(50, 3,
                            [](std::size_t i) {
                              if (i == 17) throw NumericError("boom");
                            }),
               NumericError);
}
