#include "sgdlab/vectorfield.hpp"
#include "sgdlab/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sgdlab;

namespace {

Vector v2(double a, double b)
{
    Vector x(2);
    x << a, b;
    return x;
}

Vector random_point(Rng& rng, int m, double scale = 2.0)
{
    Vector x(m);
    for (int i = 0; i < m; ++i) x[i] = rng.uniform(-scale, scale);
    return x;
}

struct Named {
    std::string name;
    std::vector<double> params;
};

std::vector<Named> potential_systems()
{
    return {{"quadratic", {1.0}}, {"quadratic", {2.5, 3}}, {"quartic", {}}, {"quartic", {2}},
            {"circle", {}},       {"double_well", {}},     {"ridge", {}},   {"diagonal", {-1.0, 2.0}},
            {"rotated_quadratic", {1.0}}};
}

} // namespace

TEST(Catalog, ClosedFormValues)
{
    EXPECT_DOUBLE_EQ(catalog_system("quadratic", {1.0}).lyapunov().value(Vector::Constant(1, 2.0)), 2.0);
    const Vector g = catalog_system("circle").lyapunov().gradient(v2(1, 0));
    EXPECT_EQ(g.norm(), 0.0);
    const Matrix H = catalog_system("double_well").lyapunov().hessian(v2(0, 0));
    EXPECT_DOUBLE_EQ(H(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(H(1, 1), 1.0);
    EXPECT_DOUBLE_EQ(H(0, 1), 0.0);
    // Cross-check with finite differences of the gradient.
    const auto dw = catalog_system("double_well");
    const auto& V = dw.lyapunov();
    const Matrix Hfd = finite_difference_jacobian([&V](const Vector& x) { return V.gradient(x); }, v2(0, 0));
    EXPECT_NEAR((H - Hfd).norm(), 0.0, 1e-8);
}

TEST(Catalog, RejectsBadInput)
{
    EXPECT_THROW(catalog_system("nope"), InvalidArgument);
    EXPECT_THROW(catalog_system("quadratic", {0.0}), InvalidArgument);
    EXPECT_THROW(catalog_system("quadratic", {-1.0}), InvalidArgument);
    EXPECT_THROW(catalog_system("circle", {1.0}), InvalidArgument);
}

TEST(Catalog, AllPotentialsAnalytic)
{
    for (const auto& n : potential_systems()) {
        const auto sys = catalog_system(n.name, n.params);
        ASSERT_TRUE(sys.has_lyapunov()) << n.name;
        EXPECT_TRUE(sys.lyapunov().analytic()) << n.name;
        EXPECT_FALSE(sys.lyapunov().finite_difference_derivatives()) << n.name;
    }
    EXPECT_FALSE(catalog_system("linear", {1.0}).has_lyapunov());
    EXPECT_FALSE(catalog_system("polya_zero").has_lyapunov());
}

TEST(Catalog, FiniteDifferenceConsistency)
{
    Rng rng(11);
    for (const auto& n : potential_systems()) {
        const auto sys = catalog_system(n.name, n.params);
        const auto& V = sys.lyapunov();
        const int m = V.dimension();
        for (int k = 0; k < 100; ++k) {
            const Vector x = random_point(rng, m);
            const Vector g = V.gradient(x);
            if (g.norm() > 1e-8) {
                const Vector gfd = finite_difference_gradient([&V](const Vector& y) { return V.value(y); }, x);
                EXPECT_LT((g - gfd).norm() / g.norm(), 1e-6) << n.name;
            }
            const Matrix H = V.hessian(x);
            EXPECT_LT((H - H.transpose()).cwiseAbs().maxCoeff(), 1e-12) << n.name;
            const Matrix Hfd = finite_difference_jacobian([&V](const Vector& y) { return V.gradient(y); }, x);
            EXPECT_LT((H - Hfd).norm() / std::max(1.0, H.norm()), 1e-5) << n.name;
            const Matrix J = sys.jacobian(x);
            const Matrix Jfd = finite_difference_jacobian([&sys](const Vector& y) { return sys.field(y); }, x);
            EXPECT_LT((J - Jfd).norm() / std::max(1.0, J.norm()), 1e-5) << n.name;
        }
    }
}

TEST(Catalog, PureGradientIdentities)
{
    Rng rng(12);
    for (const auto& n : potential_systems()) {
        const auto sys = catalog_system(n.name, n.params);
        if (!sys.pure_gradient()) continue;
        const auto& V = sys.lyapunov();
        for (int k = 0; k < 100; ++k) {
            const Vector x = random_point(rng, sys.dimension());
            const Vector g = V.gradient(x);
            const Vector F = sys.field(x);
            EXPECT_LT((F + g).cwiseAbs().maxCoeff(), 1e-12) << n.name;
            EXPECT_NEAR(g.dot(F), -g.squaredNorm(), 1e-12 * std::max(1.0, g.squaredNorm())) << n.name;
        }
    }
}

TEST(Catalog, CircleHessianSpectrumOnCircle)
{
    const auto circle = catalog_system("circle");
    const auto& V = circle.lyapunov();
    Rng rng(13);
    for (int k = 0; k < 50; ++k) {
        const double a = rng.uniform(0, 2 * M_PI);
        const Vector p = v2(std::cos(a), std::sin(a));
        Eigen::SelfAdjointEigenSolver<Matrix> es(V.hessian(p));
        EXPECT_NEAR(es.eigenvalues()[0], 0.0, 1e-8);
        EXPECT_NEAR(es.eigenvalues()[1], 2.0, 1e-8);
        const Matrix Hfd = finite_difference_jacobian([&V](const Vector& y) { return V.gradient(y); }, p);
        Eigen::SelfAdjointEigenSolver<Matrix> efd(0.5 * (Hfd + Hfd.transpose()));
        EXPECT_NEAR(efd.eigenvalues()[0], 0.0, 1e-6);
        EXPECT_NEAR(efd.eigenvalues()[1], 2.0, 1e-6);
    }
}

TEST(Potential, ValueOnlyUsesFiniteDifferences)
{
    auto V = Potential::from_value(2, [](const Vector& x) { return std::pow(x[0], 2) + 3.0 * x[0] * x[1]; });
    EXPECT_TRUE(V.finite_difference_derivatives());
    const Vector x = v2(0.7, -0.2);
    EXPECT_NEAR(V.gradient(x)[0], 2 * 0.7 + 3 * -0.2, 1e-8);
    EXPECT_NEAR(V.gradient(x)[1], 3 * 0.7, 1e-8);
    EXPECT_NEAR(V.hessian(x)(0, 1), 3.0, 1e-4);
    EXPECT_NEAR(V.hessian(x)(0, 0), 2.0, 1e-4);
}

TEST(CriticalSetSample, ValidateAndDistance)
{
    const auto sys = catalog_system("circle");
    auto C = catalog_critical_set("circle", 16);
    EXPECT_NO_THROW(C.validate(sys));
    EXPECT_EQ(C.size(), 16u);
    EXPECT_NEAR(C.distance(v2(2, 0)), 1.0, 1e-12);
    C.points.push_back(v2(0.5, 0));
    try {
        C.validate(sys);
        FAIL();
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("16"), std::string::npos);
    }
}

TEST(LocateCriticalPoints, DoubleWellSaddle)
{
    const auto sys = catalog_system("double_well");
    const auto r = locate_critical_points(sys, {v2(0.1, 0.1)}, 1e-10);
    ASSERT_EQ(r.sample.size(), 1u);
    EXPECT_LT(r.sample.points[0].norm(), 1e-10);
}

TEST(LocateCriticalPoints, CircleFromOutside)
{
    const auto sys = catalog_system("circle");
    PointList seeds;
    for (int k = 0; k < 8; ++k) {
        const double a = 2 * M_PI * k / 8;
        seeds.push_back(1.2 * v2(std::cos(a), std::sin(a)));
    }
    const auto r = locate_critical_points(sys, seeds, 1e-12);
    ASSERT_EQ(r.sample.size(), 8u);
    for (const auto& p : r.sample.points) EXPECT_NEAR(p.norm(), 1.0, 1e-10);
}

TEST(LocateCriticalPoints, QuadraticOriginAndDedup)
{
    const auto sys = catalog_system("quadratic", {1.0});
    const auto r = locate_critical_points(sys, {Vector::Zero(1), Vector::Constant(1, 0.5), Vector::Constant(1, -3.0)}, 1e-10);
    ASSERT_EQ(r.sample.size(), 1u);
    EXPECT_LT(r.sample.points[0].norm(), 1e-10);
}

TEST(LocateCriticalPoints, DropsUnreachableSeeds)
{
    // No equilibrium at all: F(x) = 1.
    GradientLikeSystem sys("constant", 1, [](const Vector& x) { return Vector::Ones(x.size()); },
                           [](const Vector& x) { return Matrix::Zero(x.size(), x.size()); });
    const auto r = locate_critical_points(sys, {Vector::Zero(1)}, 1e-10);
    EXPECT_TRUE(r.sample.empty());
    EXPECT_EQ(r.dropped_seeds.size(), 1u);
}
