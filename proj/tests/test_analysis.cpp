#include "sgdlab/analysis.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace sgdlab;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }

Vector v2(double a, double b)
{
    Vector x(2);
    x << a, b;
    return x;
}

// One stored iterate per grid index with ||x_n|| = f(n).
Trajectory synthetic(const std::vector<std::uint64_t>& ns, double (*f)(double))
{
    Trajectory tr;
    tr.dim = 1;
    for (auto n : ns) tr.push(n, std::log(double(n)), v1(f(double(n))));
    tr.tail_mean = v1(0.0);
    return tr;
}

std::vector<std::uint64_t> log_grid(double lo, double hi, int points)
{
    std::vector<std::uint64_t> out;
    for (double v : logspace(lo, hi, points)) out.push_back(static_cast<std::uint64_t>(std::llround(v)));
    return out;
}

} // namespace

TEST(Lojasiewicz, HomogeneousExponents)
{
    const auto q = estimate_lojasiewicz(catalog_system("quadratic").lyapunov(), v1(0), 0.5, 500);
    EXPECT_NEAR(q.theta_hat, 0.5, 0.02);
    EXPECT_GT(q.r2, 0.99);
    EXPECT_FALSE(q.unreliable);
    const auto r = estimate_lojasiewicz(catalog_system("quartic").lyapunov(), v1(0), 0.5, 500);
    EXPECT_NEAR(r.theta_hat, 0.25, 0.02);
    EXPECT_GT(r.r2, 0.99);
    EXPECT_TRUE(r.ray_monotone);
    // V = x⁴/4: |V|^{3/4} = 4^{-3/4}·|∇V|, so the tight constant is 4^{-3/4}.
    EXPECT_NEAR(r.c0_hat, std::pow(4.0, -0.75), 1e-6);
}

TEST(Lojasiewicz, DegenerateCircleIsNondegenerateTransversally)
{
    const auto c = estimate_lojasiewicz(catalog_system("circle").lyapunov(), v2(1, 0), 0.1, 1000);
    EXPECT_NEAR(c.theta_hat, 0.5, 0.05);
    EXPECT_GT(c.r2, 0.9);
}

TEST(Lojasiewicz, ScaleCovariance)
{
    // θ is invariant under V ↦ cV; c0 scales by c^{-θ}.
    const auto base = catalog_system("quartic");
    const auto& V = base.lyapunov();
    const double c = 7.0;
    Potential W(
        1, [&V, c](const Vector& x) { return c * V.value(x); },
        [&V, c](const Vector& x) -> Vector { return c * V.gradient(x); },
        [&V, c](const Vector& x) -> Matrix { return c * V.hessian(x); }, true);
    const auto a = estimate_lojasiewicz(V, v1(0), 0.5, 300, 3);
    const auto b = estimate_lojasiewicz(W, v1(0), 0.5, 300, 3);
    EXPECT_NEAR(a.theta_hat, b.theta_hat, 1e-9);
    EXPECT_NEAR(b.c0_hat / a.c0_hat, std::pow(c, -a.theta_hat), 1e-6);
}

TEST(Lojasiewicz, Rejections)
{
    const auto& V = catalog_system("quadratic").lyapunov();
    EXPECT_THROW(estimate_lojasiewicz(V, v1(0.5), 0.5, 100), InvalidArgument);
    EXPECT_THROW(estimate_lojasiewicz(V, v1(0), -1.0, 100), InvalidArgument);
    EXPECT_THROW(estimate_lojasiewicz(V, v1(0), 0.5, 2), InvalidArgument);
}

TEST(Angle, Examples)
{
    const auto g = check_angle(catalog_system("double_well"), v2(0, 0), 0.5, 200);
    EXPECT_NEAR(g.c1_hat, 1.0, 1e-12);
    EXPECT_NEAR(g.beta_angle_hat, 1.0, 1e-12);
    EXPECT_FALSE(g.failure);
    for (double rho : {0.5, 2.0}) {
        const auto r = check_angle(catalog_system("rotated_quadratic", {rho}), v2(0, 0), 0.5, 200);
        EXPECT_NEAR(r.c1_hat, 1.0 / std::sqrt(1.0 + rho * rho), 1e-12);
        EXPECT_NEAR(r.beta_angle_hat, 1.0, 1e-12);
    }
    EXPECT_TRUE(check_angle(catalog_system("rotation"), v2(0, 0), 0.5, 200).failure);
    EXPECT_THROW(check_angle(catalog_system("linear"), v1(0), 0.5, 10), InvalidArgument);
}

TEST(FlowRate, QuarticIsPowerLaw)
{
    const auto f = fit_flow_rate(catalog_system("quartic"), v1(1.0), logspace(10, 1000, 30), v1(0));
    EXPECT_EQ(f.kind, RateKind::power);
    EXPECT_NEAR(f.exponent, -0.5, 0.05);
}

TEST(FlowRate, QuadraticIsExponential)
{
    const auto f = fit_flow_rate(catalog_system("quadratic"), v1(1.0), linspace(1, 20, 30));
    EXPECT_EQ(f.kind, RateKind::exponential);
    EXPECT_NEAR(f.exponent, -1.0, 0.01);
    EXPECT_LT(f.limit.norm(), 1e-8);
}

TEST(FlowRate, Rejections)
{
    EXPECT_THROW(fit_flow_rate(catalog_system("quadratic"), v1(1.0), {1, 2, 3}), InvalidArgument);
    EXPECT_THROW(fit_flow_rate(catalog_system("quadratic"), v1(1.0), {0, 1, 2, 3, 4}), InvalidArgument);
}

TEST(DiscreteRate, SyntheticLogPower)
{
    const auto ns = log_grid(1e3, 1e7, 20);
    const auto f = fit_discrete_log_rate(synthetic(ns, [](double n) { return std::pow(std::log(n), -0.7); }), ns);
    EXPECT_NEAR(f.c_hat, 0.7, 1e-6);
    EXPECT_GT(f.r2, 0.999999);
    EXPECT_FALSE(f.super_logarithmic);
}

TEST(DiscreteRate, PowerLawInNIsSuperLogarithmic)
{
    const auto ns = log_grid(1e3, 1e7, 20);
    const auto f = fit_discrete_log_rate(synthetic(ns, [](double n) { return 1.0 / n; }), ns);
    EXPECT_TRUE(f.super_logarithmic);
}

TEST(DiscreteRate, NoiselessQuarticSgd)
{
    // x_N ≈ (2A ln N)^{-1/2} for A = 1.
    RecordPolicy rec;
    rec.tau_spacing = 0.05;
    rec.stride = 1'000'000;
    const auto tr = run_sgd(catalog_system("quartic"), v1(1.3), StepSchedule{1.0}, NoiseModel::zero(), 1'000'000, 1, rec);
    const auto f = fit_discrete_log_rate(tr, log_grid(1e3, 1e6, 16), v1(0));
    EXPECT_NEAR(f.c_hat, 0.5, 0.1);
    EXPECT_EQ(f.points_used, 16u);
}

TEST(DiscreteRate, NoiseFloorTruncates)
{
    const auto tr = run_sgd(catalog_system("quadratic"), v1(1.0), StepSchedule{1.0}, NoiseModel::gaussian_iso(0.5),
                            100000, 2);
    const auto f = fit_discrete_log_rate(tr, log_grid(10, 1e5, 25));
    EXPECT_GT(f.noise_floor, 0.0);
    for (std::size_t i = 0; i < f.points_used; ++i) EXPECT_GT(f.distance[i], 0.0);
    EXPECT_EQ(f.points_used + f.dropped_noise_floor <= f.n.size(), true);
}

TEST(Repulsion, UnstableSaddleIsLeft)
{
    const auto rep = repulsion_experiment(catalog_system("double_well"), catalog_critical_set("double_well"), 0.2,
                                          StepSchedule{1.0}, NoiseModel::excited_gaussian(0.1, 0.005), 40, 20000, 5);
    EXPECT_EQ(rep.ended_inside, 0u);
    EXPECT_DOUBLE_EQ(rep.escape_fraction, 1.0);
    EXPECT_EQ(rep.per_run.size(), 40u);
}

TEST(Repulsion, RidgeRunsSettleInTheWells)
{
    const auto rep = repulsion_experiment(catalog_system("ridge"), catalog_critical_set("ridge"), 0.2, StepSchedule{1.0},
                                          NoiseModel::excited_gaussian(0.1, 0.005), 200, 100000, 9);
    EXPECT_EQ(rep.ended_inside, 0u);
    for (const auto& r : rep.per_run) EXPECT_NEAR(std::abs(r.final_point[0]), 1.0, 0.05);
}

TEST(Repulsion, NoiselessStartOnSaddleStays)
{
    RepulsionOptions o;
    o.start_radius = 0.0;
    CriticalSetSample C;
    C.points.push_back(Vector::Zero(2));
    const auto rep = repulsion_experiment(catalog_system("double_well"), C, 0.2, StepSchedule{1.0}, NoiseModel::zero(),
                                          10, 20000, 10, o);
    EXPECT_EQ(rep.escape_fraction, 0.0);
    EXPECT_EQ(rep.ended_inside, 10u);
}

TEST(Repulsion, StableMinimumIsKept)
{
    CriticalSetSample C;
    C.points.push_back(Vector::Zero(2));
    const auto rep = repulsion_experiment(catalog_system("quadratic", {1.0, 2}), C, 0.2, StepSchedule{1.0},
                                          NoiseModel::gaussian_iso(0.01), 40, 20000, 6);
    EXPECT_EQ(rep.ended_inside, 40u);
}

TEST(Repulsion, DeterministicAcrossThreads)
{
    auto run = [](unsigned threads) {
        RepulsionOptions o;
        o.threads = threads;
        return repulsion_experiment(catalog_system("ridge"), catalog_critical_set("ridge"), 0.2, StepSchedule{1.0},
                                    NoiseModel::excited_gaussian(0.1, 0.005), 12, 5000, 7, o);
    };
    const auto a = run(1), b = run(3);
    for (std::size_t i = 0; i < a.per_run.size(); ++i) {
        EXPECT_EQ(a.per_run[i].final_point, b.per_run[i].final_point);
        EXPECT_EQ(a.escape_times[i], b.escape_times[i]);
    }
}

TEST(Distribution, KsExamples)
{
    std::vector<double> grid;
    for (int i = 0; i < 200; ++i) grid.push_back((i + 0.5) / 200.0);
    EXPECT_NEAR(distribution_test(grid), 0.5 / 200.0, 1e-15);
    EXPECT_DOUBLE_EQ(distribution_test(std::vector<double>(100, 0.0)), 1.0);
    EXPECT_NEAR(distribution_test(std::vector<double>(100, 0.5)), 0.5, 1e-15);
    EXPECT_THROW(distribution_test(std::vector<double>(99, 0.5)), InvalidArgument);
}

TEST(Distribution, UniformDrawsPass)
{
    Rng rng(8);
    std::vector<double> u;
    for (int i = 0; i < 5000; ++i) u.push_back(rng.uniform());
    // 1.36/√n is the 5% critical value.
    EXPECT_LT(distribution_test(u), 1.36 / std::sqrt(5000.0));
}

TEST(FlowRate, CircleIsExponentialTransversally)
{
    // Radial linearisation at the circle has eigenvalue -2.
    const auto f = fit_flow_rate(catalog_system("circle"), v2(1.5, 0), linspace(1, 8, 30), v2(1, 0));
    EXPECT_EQ(f.kind, RateKind::exponential);
    EXPECT_NEAR(f.exponent, -2.0, 0.1);
}

TEST(DiscreteRate, NoiselessQuadraticSgdIsSuperLogarithmic)
{
    RecordPolicy rec;
    rec.tau_spacing = 0.05;
    rec.stride = 1'000'000;
    const auto tr = run_sgd(catalog_system("quadratic"), v1(1.0), StepSchedule{0.5}, NoiseModel::zero(), 1'000'000, 1, rec);
    const auto f = fit_discrete_log_rate(tr, log_grid(1e2, 1e6, 16), v1(0));
    EXPECT_TRUE(f.super_logarithmic);
}

TEST(DiscreteRate, NoisyQuarticMedian)
{
    std::vector<double> c;
    for (std::uint64_t run = 0; run < 20; ++run) {
        RecordPolicy rec;
        rec.tau_spacing = 0.05;
        rec.stride = 100'000'000;
        const auto tr = run_sgd(catalog_system("quartic"), v1(1.3), StepSchedule{1.0}, NoiseModel::gaussian_iso(0.05),
                                100'000'000, derive_seed(60, run), rec);
        c.push_back(fit_discrete_log_rate(tr, log_grid(1e3, 1e8, 16), v1(0)).c_hat);
    }
    std::nth_element(c.begin(), c.begin() + 10, c.end());
    EXPECT_GE(c[10], 0.3);
    EXPECT_LE(c[10], 0.7);
}
