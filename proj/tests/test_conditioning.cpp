#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "coaction/conditioning.hpp"

using namespace coaction;

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return std::sqrt(s);
}

double norm(const std::vector<double>& a) { return distance(a, std::vector<double>(a.size(), 0.0)); }

}  // namespace

TEST(Embedding, FirstTaskValues)
{
    const auto e = embed_task(1, 6);
    // frequencies 1, 50^(1/3), 50^(2/3)
    const double f1 = std::cbrt(50.0);
    const double f2 = f1 * f1;
    const std::vector<double> expect = {std::sin(1.0), std::cos(1.0), std::sin(1.0 / f1),
                                        std::cos(1.0 / f1), std::sin(1.0 / f2), std::cos(1.0 / f2)};
    const std::vector<double> rounded = {0.84147, 0.54030, 0.26812, 0.96339, 0.07361, 0.99729};
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_NEAR(e[i], expect[i], 1e-14);
        EXPECT_NEAR(e[i], rounded[i], 1e-5);
    }
}

TEST(Embedding, ZeroIndex)
{
    EXPECT_EQ(embed_task(0, 6), (std::vector<double>{0, 1, 0, 1, 0, 1}));
}

TEST(Embedding, OddDimensionRejected)
{
    EXPECT_THROW(embed_task(1, 5), std::invalid_argument);
    EXPECT_THROW(embed_task(1, 0), std::invalid_argument);
}

TEST(Embedding, NeighbouringTasksDiffer)
{
    EXPECT_GT(distance(embed_task(1), embed_task(2)), 0.5);
}

TEST(Embedding, InjectiveOverHundredTasks)
{
    double smallest = 1e9;
    for (std::size_t a = 1; a <= 100; ++a) {
        for (std::size_t b = a + 1; b <= 100; ++b) {
            smallest = std::min(smallest, distance(embed_task(a), embed_task(b)));
        }
    }
    EXPECT_GT(smallest, 1e-6);
}

TEST(Embedding, NearbyIndicesAreCloser)
{
    for (std::size_t t = 1; t <= 50; ++t) {
        EXPECT_LT(distance(embed_task(t), embed_task(t + 1)), distance(embed_task(t), embed_task(t + 10))) << t;
    }
}

TEST(Preferences, PolarMapExamples)
{
    const double pi = std::numbers::pi;
    auto a = lambda_from_theta({pi / 4});
    EXPECT_NEAR(a[0], std::sqrt(0.5), 1e-15);
    EXPECT_NEAR(a[1], std::sqrt(0.5), 1e-15);
    auto b = lambda_from_theta({0.0});
    EXPECT_EQ(b, (std::vector<double>{0.0, 1.0}));
    auto c = lambda_from_theta({pi / 4, pi / 4});
    EXPECT_NEAR(c[0], 0.5, 1e-15);
    EXPECT_NEAR(c[1], 0.5, 1e-15);
    EXPECT_NEAR(c[2], 0.70711, 1e-5);
    EXPECT_NEAR(norm(c), 1.0, 1e-12);
    EXPECT_THROW(lambda_from_theta({0.1, 0.2, 0.3}), std::invalid_argument);
}

TEST(Preferences, SampledLambdasAreUnitAndInRange)
{
    for (std::size_t m : {2u, 3u}) {
        CounterRng rng(m);
        auto batch = sample_preferences(m, 500, rng);
        ASSERT_EQ(batch.size(), 500u);
        for (const auto& p : batch) {
            ASSERT_EQ(p.theta.size(), m - 1);
            for (double t : p.theta) {
                EXPECT_GE(t, 0.0);
                EXPECT_LE(t, std::numbers::pi / 2);
            }
            EXPECT_NEAR(norm(p.lambda), 1.0, 1e-12);
            for (double l : p.lambda_trunc) {
                EXPECT_GE(l, 0.01);
                EXPECT_LE(l, 0.99);
            }
        }
    }
}

TEST(Preferences, SamplingIsReproducible)
{
    CounterRng a(42);
    CounterRng b(42);
    auto x = sample_preferences(3, 64, a);
    auto y = sample_preferences(3, 64, b);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(x[i].theta, y[i].theta);
        EXPECT_EQ(x[i].lambda, y[i].lambda);
    }
}

TEST(Preferences, TruncationClampsWithoutRenormalizing)
{
    EXPECT_EQ(truncate_preference({1.0, 0.0}), (std::vector<double>{0.99, 0.01}));
    EXPECT_EQ(truncate_preference({0.6, 0.8}), (std::vector<double>{0.6, 0.8}));
}

TEST(Preferences, ExtremeVectorsAppended)
{
    CounterRng rng(1);
    auto batch = apply_extreme_and_truncate(sample_preferences(2, 4, rng), 2, true);
    ASSERT_EQ(batch.size(), 6u);
    EXPECT_EQ(batch[4].lambda_trunc, (std::vector<double>{0.99, 0.01}));
    EXPECT_EQ(batch[5].lambda_trunc, (std::vector<double>{0.01, 0.99}));
    EXPECT_EQ(apply_extreme_and_truncate(sample_preferences(3, 4, rng), 3, false).size(), 4u);
    EXPECT_EQ(apply_extreme_and_truncate(sample_preferences(3, 4, rng), 3, true).size(), 7u);
}

TEST(Preferences, ExtremeAnglesReproduceBasisVectors)
{
    for (std::size_t m : {2u, 3u}) {
        for (std::size_t j = 0; j < m; ++j) {
            auto p = extreme_preference(j, m);
            auto l = lambda_from_theta(p.theta);
            for (std::size_t k = 0; k < m; ++k) {
                EXPECT_NEAR(l[k], p.lambda[k], 1e-15);
            }
        }
    }
}

TEST(Input, PaddedForBiObjectiveTask)
{
    auto e = embed_task(3);
    auto p = make_preference({0.3});
    auto v = assemble_input(e, p, 2, 3);
    ASSERT_EQ(v.size(), 9u);
    EXPECT_EQ(v[8], 0.0);
    EXPECT_EQ(std::vector<double>(v.begin(), v.begin() + 6), e);
    EXPECT_EQ(std::vector<double>(v.begin() + 6, v.begin() + 8), p.lambda_trunc);
}

TEST(Input, NoPaddingWhenTaskHasMostObjectives)
{
    auto p = make_preference({0.3, 1.2});
    auto v = assemble_input(embed_task(7), p, 3, 3);
    ASSERT_EQ(v.size(), 9u);
    EXPECT_EQ(std::vector<double>(v.begin() + 6, v.end()), p.lambda_trunc);
}

TEST(Input, TooManyObjectivesRejected)
{
    auto p = make_preference({0.3, 1.2});
    EXPECT_THROW(assemble_input(embed_task(1), p, 3, 2), std::invalid_argument);
}

TEST(Input, BatchRowsMatchSingleAssembly)
{
    CounterRng rng(5);
    auto batch = apply_extreme_and_truncate(sample_preferences(2, 3, rng), 2, true);
    auto e = embed_task(2);
    Tensor x = assemble_batch(e, batch, 2, 3);
    ASSERT_EQ(x.shape(), (Shape{5, 9}));
    for (std::size_t b = 0; b < 5; ++b) {
        EXPECT_EQ(x.row(b), assemble_input(e, batch[b], 2, 3));
    }
    Tensor l = lambda_matrix(batch);
    EXPECT_EQ(l.row(3), (std::vector<double>{0.99, 0.01}));
    EXPECT_EQ(l.row(4), (std::vector<double>{0.01, 0.99}));
}
