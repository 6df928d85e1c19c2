#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "coaction/gradcheck.hpp"
#include "coaction/hv_loss.hpp"
#include "coaction/optimizer.hpp"

using namespace coaction;
using namespace coaction::ad;

namespace {

// Scalar reference for the surrogate loss.
double reference_loss(const std::vector<std::vector<double>>& f, const std::vector<std::vector<double>>& lambda,
                      double r)
{
    const std::size_t m = f.front().size();
    const double c = m == 2 ? std::numbers::pi / 4.0 : std::numbers::pi / 6.0;
    double total = 0.0;
    for (std::size_t b = 0; b < f.size(); ++b) {
        double rho = 1e300;
        for (std::size_t j = 0; j < m; ++j) {
            rho = std::min(rho, (r - f[b][j]) / lambda[b][j]);
        }
        total += rho >= 0.0 ? std::pow(rho, static_cast<double>(m)) : rho;
    }
    return -c * total / static_cast<double>(f.size());
}

Tensor to_tensor(const std::vector<std::vector<double>>& rows)
{
    Tensor t(Shape{rows.size(), rows.front().size()});
    for (std::size_t b = 0; b < rows.size(); ++b) {
        for (std::size_t j = 0; j < rows[b].size(); ++j) {
            t[b * rows[b].size() + j] = rows[b][j];
        }
    }
    return t;
}

}  // namespace

TEST(HvConstant, MatchesClosedForms)
{
    EXPECT_NEAR(hv_constant(2), std::numbers::pi / 4.0, 1e-15);
    EXPECT_NEAR(hv_constant(3), std::numbers::pi / 6.0, 1e-15);
    EXPECT_NEAR(hv_constant(2), 0.78540, 1e-5);
    EXPECT_NEAR(hv_constant(3), 0.52360, 1e-5);
}

TEST(HvLoss, ReferencePointMustDominateNadir)
{
    EXPECT_THROW(make_loss_context(std::vector<double>{0.5, 3.5}), std::invalid_argument);
    EXPECT_NO_THROW(make_loss_context(2));
}

TEST(ProjectedDistance, Examples)
{
    auto ctx = make_loss_context(2);
    Graph g;
    auto pd = projected_distance(g.constant(Tensor::matrix(1, 2, {0.5, 1.5})), Tensor::matrix(1, 2, {0.6, 0.8}), ctx);
    EXPECT_NEAR(pd.rho.value()[0], 2.5, 1e-15);
    EXPECT_EQ(pd.argmin[0], 1u);

    auto at_r = projected_distance(g.constant(Tensor::matrix(1, 2, {3.5, 3.5})), Tensor::matrix(1, 2, {0.6, 0.8}), ctx);
    EXPECT_EQ(at_r.rho.value()[0], 0.0);

    const double s = std::sqrt(0.5);
    auto tie = projected_distance(g.constant(Tensor::matrix(1, 2, {0.5, 0.5})), Tensor::matrix(1, 2, {s, s}), ctx);
    EXPECT_NEAR(tie.rho.value()[0], 4.24264, 1e-5);
    EXPECT_EQ(tie.argmin[0], 0u);
}

TEST(ProjectedDistance, TinyPreferenceRejected)
{
    auto ctx = make_loss_context(2);
    Graph g;
    EXPECT_THROW(projected_distance(g.constant(Tensor::matrix(1, 2, {0.5, 0.5})), Tensor::matrix(1, 2, {1.0, 0.0}), ctx),
                 DomainError);
}

TEST(HvLoss, SingleSampleValues)
{
    auto ctx = make_loss_context(2);
    Graph g;
    auto pos = psl_hv1_loss(g.constant(Tensor::matrix(1, 2, {0.5, 1.5})), Tensor::matrix(1, 2, {0.6, 0.8}), ctx);
    EXPECT_NEAR(pos.loss.value().item(), -std::numbers::pi / 4.0 * 6.25, 1e-13);
    EXPECT_NEAR(pos.loss.value().item(), -4.90874, 1e-5);

    // rho = -0.5: f2 = 3.5 + 0.5 * 0.8
    auto neg = psl_hv1_loss(g.constant(Tensor::matrix(1, 2, {0.5, 3.9})), Tensor::matrix(1, 2, {0.6, 0.8}), ctx);
    EXPECT_NEAR(neg.distance.rho.value()[0], -0.5, 1e-14);
    EXPECT_NEAR(neg.loss.value().item(), 0.39270, 1e-5);
}

TEST(HvLoss, MatchesScalarReferenceOnRandomBatches)
{
    CounterRng rng(3);
    for (std::size_t m : {2u, 3u}) {
        auto ctx = make_loss_context(m);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::vector<double>> f(16, std::vector<double>(m));
            std::vector<std::vector<double>> l(16, std::vector<double>(m));
            for (auto& row : f) for (auto& v : row) v = rng.uniform(-0.5, 4.5);
            for (auto& row : l) for (auto& v : row) v = rng.uniform(0.01, 0.99);
            Graph g;
            auto out = psl_hv1_loss(g.constant(to_tensor(f)), to_tensor(l), ctx);
            EXPECT_NEAR(out.loss.value().item(), reference_loss(f, l, 3.5), 1e-12);
        }
    }
}

TEST(HvLoss, RhoBoundsEveryCoordinate)
{
    CounterRng rng(4);
    auto ctx = make_loss_context(3);
    Tensor f(Shape{50, 3});
    Tensor l(Shape{50, 3});
    for (auto& v : f.values()) v = rng.uniform(0.0, 1.0);
    for (auto& v : l.values()) v = rng.uniform(0.01, 0.99);
    Graph g;
    auto pd = projected_distance(g.constant(f), l, ctx);
    for (std::size_t b = 0; b < 50; ++b) {
        for (std::size_t j = 0; j < 3; ++j) {
            const double q = (3.5 - f[b * 3 + j]) / l[b * 3 + j];
            EXPECT_LE(pd.rho.value()[b], q);
            if (j == pd.argmin[b]) {
                EXPECT_EQ(pd.rho.value()[b], q);
            }
        }
    }
}

TEST(HvLoss, WorseObjectivesNeverLowerLoss)
{
    CounterRng rng(5);
    auto ctx = make_loss_context(2);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor f(Shape{1, 2}, {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
        Tensor l(Shape{1, 2}, {rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)});
        Graph g;
        const double base = psl_hv1_loss(g.constant(f), l, ctx).loss.value().item();
        for (std::size_t j = 0; j < 2; ++j) {
            Tensor worse = f;
            worse[j] += 1e-3;
            const double after = psl_hv1_loss(g.constant(worse), l, ctx).loss.value().item();
            EXPECT_GE(after, base);
        }
    }
}

TEST(HvLoss, ContinuousAcrossZero)
{
    auto ctx = make_loss_context(2);
    Graph g;
    const Tensor l = Tensor::matrix(1, 2, {0.5, 0.5});
    const double below = psl_hv1_loss(g.constant(Tensor::matrix(1, 2, {3.5 + 1e-9, 0.0})), l, ctx).loss.value().item();
    const double above = psl_hv1_loss(g.constant(Tensor::matrix(1, 2, {3.5 - 1e-9, 0.0})), l, ctx).loss.value().item();
    EXPECT_NEAR(below, 0.0, 1e-8);
    EXPECT_NEAR(above, 0.0, 1e-8);
}

TEST(HvLoss, GradientOnlyAtArgminAndMatchesFiniteDifferences)
{
    CounterRng rng(6);
    auto ctx = make_loss_context(3);
    int checked = 0;
    while (checked < 100) {
        Tensor f(Shape{4, 3});
        Tensor l(Shape{4, 3});
        for (auto& v : f.values()) v = rng.uniform(-0.2, 4.0);
        for (auto& v : l.values()) v = rng.uniform(0.01, 0.99);
        // stay away from ties and the branch point
        bool ok = true;
        for (std::size_t b = 0; b < 4; ++b) {
            std::vector<double> q(3);
            for (std::size_t j = 0; j < 3; ++j) q[j] = (3.5 - f[b * 3 + j]) / l[b * 3 + j];
            std::sort(q.begin(), q.end());
            ok = ok && q[1] - q[0] > 1e-3 && std::abs(q[0]) > 1e-3;
        }
        if (!ok) continue;
        ++checked;
        auto fn = [&](Graph&, Var x) { return psl_hv1_loss(x, l, ctx).loss; };
        EXPECT_LT(finite_diff_check(fn, f), 1e-4);

        Graph g;
        auto x = g.variable(f);
        auto out = psl_hv1_loss(x, l, ctx);
        g.backward(out.loss);
        for (std::size_t b = 0; b < 4; ++b) {
            for (std::size_t j = 0; j < 3; ++j) {
                if (j != out.distance.argmin[b]) {
                    EXPECT_EQ(g.grad(x)[b * 3 + j], 0.0);
                }
            }
        }
    }
}

TEST(AdamW, ZeroGradientNoDecayLeavesParams)
{
    Parameter p("w", Tensor::vector({0.3, -1.2}));
    AdamW opt({&p}, AdamWConfig{.lr = 1e-2, .weight_decay = 0.0});
    opt.step();
    EXPECT_EQ(p.value, Tensor::vector({0.3, -1.2}));
}

TEST(AdamW, FirstStepMagnitude)
{
    Parameter p("w", Tensor::scalar(0.0));
    p.grad = Tensor::scalar(1.0);
    AdamW opt({&p}, AdamWConfig{.lr = 1e-3, .weight_decay = 0.0});
    opt.step();
    EXPECT_NEAR(p.value.item(), -1e-3 / (1.0 + 1e-8), 1e-18);
}

TEST(AdamW, DecoupledDecayShrinks)
{
    Parameter p("w", Tensor::scalar(2.0));
    AdamW opt({&p}, AdamWConfig{.lr = 0.1, .weight_decay = 0.5});
    opt.step();
    EXPECT_NEAR(p.value.item(), 2.0 * (1.0 - 0.1 * 0.5), 1e-15);
}

TEST(AdamW, MatchesReferenceRecurrence)
{
    Parameter p("w", Tensor::scalar(0.5));
    AdamWConfig cfg;
    AdamW opt({&p}, cfg);
    double w = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 20; ++t) {
        const double g = std::sin(t * 0.7) + 0.3 * w;
        p.grad = Tensor::scalar(g);
        opt.step();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        w -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * w);
        EXPECT_NEAR(p.value.item(), w, 1e-15);
    }
}

TEST(ScheduleFree, MinimizesQuadratic)
{
    Parameter p("w", Tensor::vector({3.0, -2.0}));
    ScheduleFreeAdamW opt({&p}, AdamWConfig{.lr = 0.05, .weight_decay = 0.0});
    for (int t = 0; t < 2000; ++t) {
        p.grad = Tensor::vector({2.0 * p.value[0], 2.0 * p.value[1]});
        opt.step();
    }
    opt.finalize();
    EXPECT_LT(std::abs(p.value[0]), 0.05);
    EXPECT_LT(std::abs(p.value[1]), 0.05);
}

TEST(Clip, ScalesDownLargeGradients)
{
    Parameter a("a", Tensor::vector({0.0, 0.0}));
    Parameter b("b", Tensor::scalar(0.0));
    a.grad = Tensor::vector({1.2, 0.0});
    b.grad = Tensor::scalar(1.6);
    const double s = clip_gradients({&a, &b}, 1.0);
    EXPECT_DOUBLE_EQ(s, 0.5);
    EXPECT_NEAR(global_grad_norm({&a, &b}), 1.0, 1e-15);
    // direction preserved
    EXPECT_NEAR(a.grad[0] / b.grad.item(), 1.2 / 1.6, 1e-15);
}

TEST(Clip, LeavesSmallGradients)
{
    Parameter a("a", Tensor::vector({0.0}));
    a.grad = Tensor::vector({0.5});
    EXPECT_EQ(clip_gradients({&a}, 1.0), 1.0);
    EXPECT_EQ(a.grad[0], 0.5);
    EXPECT_THROW(clip_gradients({&a}, 0.0), std::invalid_argument);
}
