#include "sgdlab/shadowing.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace sgdlab;

namespace {

Vector v2(double a, double b)
{
    Vector x(2);
    x << a, b;
    return x;
}

PseudoOrbit exact_orbit(const GradientLikeSystem& sys, const Vector& x0, int K, double mu)
{
    PseudoOrbit po;
    po.mu = mu;
    std::vector<double> times;
    for (int k = 0; k <= K; ++k) times.push_back(k);
    po.xi = flow_path(sys, x0, times);
    return po;
}

// ξ_k = Φ_k(x0) + d·e_k with fixed unit directions e_k.
PseudoOrbit perturbed_orbit(const GradientLikeSystem& sys, const Vector& x0, int K, double mu, double d,
                            std::uint64_t seed)
{
    PseudoOrbit po = exact_orbit(sys, x0, K, mu);
    Rng rng(seed);
    for (std::size_t k = 1; k < po.xi.size(); ++k) {
        Vector e = Vector::NullaryExpr(x0.size(), [&](Eigen::Index) { return rng.normal(); });
        po.xi[k] += d * e.normalized();
    }
    return po;
}

} // namespace

TEST(RNorm, Examples)
{
    const PointList ones = {Vector::Ones(1), Vector::Ones(1), Vector::Ones(1)};
    EXPECT_DOUBLE_EQ(r_norm(ones, 2.0), 7.0);
    EXPECT_DOUBLE_EQ(r_norm(ones, 1.0), 3.0);
    EXPECT_DOUBLE_EQ(r_norm({v2(3, 4)}, 5.0), 5.0);
    EXPECT_EQ(r_norm({}, 2.0), 0.0);
    EXPECT_THROW(r_norm(ones, 0.0), InvalidArgument);
    EXPECT_THROW(r_norm(ones, INFINITY), InvalidArgument);
}

TEST(RNorm, Overflow)
{
    PointList seq(400, Vector::Ones(1));
    EXPECT_THROW(r_norm(seq, 1e10), NumericalFailure);
}

TEST(RNorm, NormAxioms)
{
    Rng rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        PointList a, b, s, c;
        for (int k = 0; k < 12; ++k) {
            a.push_back(v2(rng.normal(), rng.normal()));
            b.push_back(v2(rng.normal(), rng.normal()));
            s.push_back(a.back() + b.back());
            c.push_back(-2.5 * a.back());
        }
        const double r = rng.uniform(1.0, 2.0);
        EXPECT_LE(r_norm(s, r), r_norm(a, r) + r_norm(b, r) + 1e-12);
        EXPECT_NEAR(r_norm(c, r), 2.5 * r_norm(a, r), 1e-12 * r_norm(c, r));
        EXPECT_GT(r_norm(a, r), 0.0);
    }
}

TEST(PseudoOrbit, Validation)
{
    PseudoOrbit po;
    po.xi = {Vector::Zero(1), Vector::Zero(1)};
    po.mu = 0.0;
    EXPECT_THROW(po.validate(), InvalidArgument);
    po.mu = -0.25;
    EXPECT_NO_THROW(po.validate());
    EXPECT_DOUBLE_EQ(po.r(), std::exp(0.25));
    EXPECT_EQ(po.K(), 1u);
    po.xi.resize(1);
    EXPECT_THROW(po.validate(), InvalidArgument);
}

TEST(PseudoOrbit, SamplesPathAtUnitSteps)
{
    const InterpolatedPath X({0.0, 10.0}, {Vector::Zero(1), Vector::Constant(1, 10.0)});
    const auto po = make_pseudo_orbit(X, 2.5, 4, -0.2);
    ASSERT_EQ(po.xi.size(), 5u);
    for (int k = 0; k <= 4; ++k) EXPECT_DOUBLE_EQ(po.xi[k][0], 2.5 + k);
    EXPECT_THROW(make_pseudo_orbit(X, 2.5, 0, -0.2), InvalidArgument);
}

TEST(Shadow, TrueOrbitHasVanishingSequences)
{
    for (const char* name : {"quadratic", "double_well", "circle"}) {
        const auto sys = catalog_system(name);
        const Vector x0 = sys.dimension() == 1 ? Vector::Constant(1, 0.8) : v2(0.4, 0.6);
        const auto po = exact_orbit(sys, x0, 10, -0.25);
        for (const auto& g : defect_sequence(sys, po)) EXPECT_LT(g.norm(), 1e-8) << name;
        for (const auto& h : shadow_sequence(sys, x0, po)) EXPECT_EQ(h.norm(), 0.0) << name;
    }
}

TEST(Shadow, RecoversExactOrbitInitialCondition)
{
    const auto sys = catalog_system("quadratic", {1.0});
    for (double x0 : {0.7, -1.3}) {
        const auto po = exact_orbit(sys, Vector::Constant(1, x0), 10, -0.25);
        const auto res = find_shadow(sys, po, Vector::Constant(1, x0 + 0.05));
        EXPECT_LT(std::abs(res.x_star[0] - x0), 1e-4);
        EXPECT_LT(res.h_norm, 1e-4);
    }
    const auto dw = catalog_system("double_well");
    const auto po = exact_orbit(dw, v2(0.3, 0.5), 8, -0.25);
    EXPECT_LT((find_shadow(dw, po).x_star - v2(0.3, 0.5)).norm(), 1e-4);
}

TEST(Shadow, LinearInPerturbationSize)
{
    const auto sys = catalog_system("quadratic", {1.0});
    const Vector x0 = Vector::Constant(1, 1.0);
    std::vector<double> ratio, gratio;
    for (double d : {1e-3, 1e-2}) {
        const auto po = perturbed_orbit(sys, x0, 10, -0.25, d, 52);
        const auto res = find_shadow(sys, po);
        ASSERT_TRUE(std::isfinite(res.h_norm));
        ratio.push_back(res.h_norm / d);
        gratio.push_back(res.g_norm / d);
    }
    EXPECT_LT(std::max(ratio[0], ratio[1]) / std::min(ratio[0], ratio[1]), 2.0);
    EXPECT_NEAR(gratio[0], gratio[1], 1e-6 * gratio[0]);
}

TEST(Shadow, DeterministicAcrossThreads)
{
    const auto sys = catalog_system("double_well");
    const auto po = perturbed_orbit(sys, v2(0.3, 0.5), 8, -0.25, 1e-2, 53);
    ShadowOptions a, b;
    b.threads = 4;
    const auto ra = find_shadow(sys, po, {}, a);
    const auto rb = find_shadow(sys, po, {}, b);
    EXPECT_EQ(ra.x_star, rb.x_star);
    EXPECT_EQ(ra.h_norm, rb.h_norm);
    EXPECT_EQ(ra.restart, rb.restart);
}

TEST(ShadowDecay, ExponentialForQuadratic)
{
    // X is the exact flow from 1; the shadow candidate is off by 0.1, so the
    // distance is 0.1 e^{-k}.
    const auto sys = catalog_system("quadratic", {1.0});
    std::vector<double> t;
    PointList p;
    for (int i = 0; i <= 4000; ++i) {
        t.push_back(0.005 * i);
        p.push_back(Vector::Constant(1, std::exp(-t.back())));
    }
    const InterpolatedPath X(t, p);
    const auto d = shadow_decay_check(sys, X, Vector::Constant(1, std::exp(-2.0) + 0.1), 2.0, -0.25, 12);
    EXPECT_FALSE(d.skipped);
    EXPECT_NEAR(d.slope, -1.0, 1e-3);
    EXPECT_GT(d.r2, 0.999);
    const auto same = shadow_decay_check(sys, X, Vector::Constant(1, std::exp(-2.0)), 2.0, -0.25, 12);
    for (double dist : same.distance) EXPECT_LT(dist, 1e-8);
    EXPECT_THROW(shadow_decay_check(sys, X, Vector::Zero(1), 2.0, 0.1, 12), InvalidArgument);
}

TEST(Shadow, SgdDefectIsOrderOfStep)
{
    const StepSchedule sched{0.5};
    const auto sys = catalog_system("quadratic");
    const auto tr = run_sgd(sys, Vector::Constant(1, 1.0), sched, NoiseModel::zero(), 1'000'000, 1);
    const auto X = interpolate(tr);
    auto step_at = [&](double t) {
        const auto it = std::lower_bound(tr.tau.begin(), tr.tau.end(), t);
        return sched.gamma(tr.index[static_cast<std::size_t>(it - tr.tau.begin())]);
    };
    std::vector<double> worst;
    for (double T : {2.0, 4.0}) {
        const auto po = make_pseudo_orbit(X, T, 2, -0.25);
        const auto g = defect_sequence(sys, po);
        double w = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) w = std::max(w, g[k].norm() / step_at(T + k));
        worst.push_back(w);
    }
    EXPECT_GT(worst[0], 0.0);
    EXPECT_LE(worst[1], worst[0]);
}

TEST(ShadowDecay, NoisyQuadraticDecaysFasterThanMu)
{
    const auto sys = catalog_system("quadratic");
    const auto tr = run_sgd(sys, Vector::Constant(1, 1.0), StepSchedule{1.0}, NoiseModel::gaussian_iso(0.1),
                            1'000'000, 54);
    const auto X = interpolate(tr);
    const double T = 4.0, mu = -0.25;
    const auto po = make_pseudo_orbit(X, T, 8, mu);
    const auto res = find_shadow(sys, po);
    const auto d = shadow_decay_check(sys, X, res.x_star, T, mu, 8);
    ASSERT_FALSE(d.skipped);
    EXPECT_LE(d.slope, -0.2);
}

TEST(ShadowDecay, MismatchedPointIsNotAShadow)
{
    // On the circle a generic start converges to a different limit point, so
    // the distance levels off instead of decaying.
    const auto sys = catalog_system("circle");
    const auto tr = run_sgd(sys, v2(0.3, 1.2), StepSchedule{0.5}, NoiseModel::gaussian_iso(0.05), 1'000'000, 55);
    const auto X = interpolate(tr);
    const double T = 2.0;
    const Vector here = X(T);
    const double angle = std::atan2(here[1], here[0]) + 2.0;
    const auto d = shadow_decay_check(sys, X, 1.3 * v2(std::cos(angle), std::sin(angle)), T, -0.25, 4);
    ASSERT_FALSE(d.skipped);
    EXPECT_GT(d.slope, -0.05);
}
