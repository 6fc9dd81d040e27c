#pragma once

#include "sgdlab/error.hpp"
#include "sgdlab/types.hpp"

#include <Eigen/QR>

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sgdlab {

// ---------------------------------------------------------------------------
// Finite differences. Test oracles, and the derivative path for value-only
// potentials.
// ---------------------------------------------------------------------------

inline Vector finite_difference_gradient(const ScalarFn& f, const Vector& x, double step = 1e-5)
{
    Vector g(x.size());
    Vector probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double fp = f(probe);
        probe[i] = x[i] - step;
        const double fm = f(probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

inline Matrix finite_difference_jacobian(const VectorFn& field, const Vector& x, double step = 1e-5)
{
    const Eigen::Index m = x.size();
    Matrix J(m, m);
    Vector probe = x;
    for (Eigen::Index j = 0; j < m; ++j) {
        probe[j] = x[j] + step;
        const Vector fp = field(probe);
        probe[j] = x[j] - step;
        const Vector fm = field(probe);
        probe[j] = x[j];
        J.col(j) = (fp - fm) / (2.0 * step);
    }
    return J;
}

inline Matrix finite_difference_hessian(const ScalarFn& f, const Vector& x, double step = 1e-5)
{
    const Eigen::Index m = x.size();
    Matrix H(m, m);
    Vector probe = x;
    const double f0 = f(x);
    for (Eigen::Index i = 0; i < m; ++i) {
        probe[i] = x[i] + step;
        const double fp = f(probe);
        probe[i] = x[i] - step;
        const double fm = f(probe);
        probe[i] = x[i];
        H(i, i) = (fp - 2.0 * f0 + fm) / (step * step);
        for (Eigen::Index j = 0; j < i; ++j) {
            auto eval = [&](double si, double sj) {
                probe[i] = x[i] + si * step;
                probe[j] = x[j] + sj * step;
                const double v = f(probe);
                probe[i] = x[i];
                probe[j] = x[j];
                return v;
            };
            const double hij =
                (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * step * step);
            H(i, j) = hij;
            H(j, i) = hij;
        }
    }
    return H;
}

// ---------------------------------------------------------------------------
// Potential
// ---------------------------------------------------------------------------

/// A smooth potential V on R^m with its gradient and Hessian.
///
/// Catalog potentials carry closed-form derivatives. Potentials built with
/// from_value() fall back to centered finite differences (step 1e-5); such
/// potentials report finite_difference_derivatives() == true.
class Potential {
  public:
    Potential(int dimension, ScalarFn value, VectorFn gradient, MatrixFn hessian, bool analytic)
        : dim_(dimension), value_(std::move(value)), gradient_(std::move(gradient)),
          hessian_(std::move(hessian)), analytic_(analytic)
    {
        if (dim_ <= 0) throw InvalidArgument("Potential: dimension must be positive");
        if (!value_ || !gradient_ || !hessian_)
            throw InvalidArgument("Potential: value, gradient and hessian are required");
    }

    static Potential from_value(int dimension, ScalarFn value, bool analytic = false,
                                double step = 1e-5)
    {
        auto grad = [value, step](const Vector& x) {
            return finite_difference_gradient(value, x, step);
        };
        auto hess = [value, step](const Vector& x) {
            return finite_difference_hessian(value, x, step);
        };
        Potential p(dimension, value, grad, hess, analytic);
        p.finite_difference_ = true;
        return p;
    }

    int dimension() const noexcept { return dim_; }
    double value(const Vector& x) const { return value_(x); }
    Vector gradient(const Vector& x) const { return gradient_(x); }
    Matrix hessian(const Vector& x) const { return hessian_(x); }
    bool analytic() const noexcept { return analytic_; }
    bool finite_difference_derivatives() const noexcept { return finite_difference_; }

    /// c·V, with derivatives scaled accordingly.
    Potential scaled(double c) const
    {
        auto v = value_;
        auto g = gradient_;
        auto h = hessian_;
        Potential p(
            dim_, [v, c](const Vector& x) { return c * v(x); },
            [g, c](const Vector& x) -> Vector { return c * g(x); },
            [h, c](const Vector& x) -> Matrix { return c * h(x); }, analytic_);
        p.finite_difference_ = finite_difference_;
        return p;
    }

  private:
    int dim_;
    ScalarFn value_;
    VectorFn gradient_;
    MatrixFn hessian_;
    bool analytic_;
    bool finite_difference_ = false;
};

// ---------------------------------------------------------------------------
// GradientLikeSystem
// ---------------------------------------------------------------------------

/// A C^1 vector field F with its Jacobian and an optional strict Lyapunov
/// function. When `pure_gradient()` holds, F = -grad V exactly.
class GradientLikeSystem {
  public:
    GradientLikeSystem(std::string name, int dimension, VectorFn field, MatrixFn jacobian,
                       std::optional<Potential> lyapunov = std::nullopt, bool pure_gradient = false)
        : name_(std::move(name)), dim_(dimension), field_(std::move(field)),
          jacobian_(std::move(jacobian)), lyapunov_(std::move(lyapunov)), pure_gradient_(pure_gradient)
    {
        if (dim_ <= 0) throw InvalidArgument("GradientLikeSystem: dimension must be positive");
        if (!field_) throw InvalidArgument("GradientLikeSystem: field is required");
        if (lyapunov_ && lyapunov_->dimension() != dim_)
            throw InvalidArgument("GradientLikeSystem: Lyapunov potential has wrong dimension");
        if (pure_gradient_ && !lyapunov_)
            throw InvalidArgument("GradientLikeSystem: pure gradient system needs its potential");
        if (!jacobian_) {
            auto f = field_;
            jacobian_ = [f](const Vector& x) { return sgdlab::finite_difference_jacobian(f, x); };
            fd_jacobian_ = true;
        }
    }

    /// F = -grad V, DF = -D^2 V.
    static GradientLikeSystem from_potential(std::string name, const Potential& V)
    {
        return GradientLikeSystem(
            std::move(name), V.dimension(), [V](const Vector& x) -> Vector { return -V.gradient(x); },
            [V](const Vector& x) -> Matrix { return -V.hessian(x); }, V, true);
    }

    const std::string& name() const noexcept { return name_; }
    int dimension() const noexcept { return dim_; }
    Vector field(const Vector& x) const { return field_(x); }
    Matrix jacobian(const Vector& x) const { return jacobian_(x); }
    bool has_lyapunov() const noexcept { return lyapunov_.has_value(); }
    const Potential& lyapunov() const
    {
        if (!lyapunov_) throw InvalidArgument("system '" + name_ + "' has no Lyapunov potential");
        return *lyapunov_;
    }
    const std::optional<Potential>& lyapunov_opt() const noexcept { return lyapunov_; }
    bool pure_gradient() const noexcept { return pure_gradient_; }
    bool finite_difference_jacobian() const noexcept { return fd_jacobian_; }

  private:
    std::string name_;
    int dim_;
    VectorFn field_;
    MatrixFn jacobian_;
    std::optional<Potential> lyapunov_;
    bool pure_gradient_;
    bool fd_jacobian_ = false;
};

// ---------------------------------------------------------------------------
// CriticalSetSample
// ---------------------------------------------------------------------------

/// A finite sample of a set of equilibria.
struct CriticalSetSample {
    PointList points;
    double tolerance = 1e-8;
    std::string label;

    bool empty() const noexcept { return points.empty(); }
    std::size_t size() const noexcept { return points.size(); }

    /// Throws InvalidArgument naming the first point with ||F(p)|| > tolerance.
    void validate(const GradientLikeSystem& sys) const
    {
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (points[i].size() != sys.dimension())
                throw InvalidArgument("critical sample point " + std::to_string(i) +
                                      " has wrong dimension");
            const double r = sys.field(points[i]).norm();
            if (!(r <= tolerance))
                throw InvalidArgument("critical sample point " + std::to_string(i) +
                                      " is not an equilibrium: ||F|| = " + std::to_string(r));
        }
    }

    /// Euclidean distance from x to the nearest sample point.
    double distance(const Vector& x) const
    {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : points) best = std::min(best, (x - p).squaredNorm());
        return std::sqrt(best);
    }
};

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

namespace detail {

inline Vector vec(std::initializer_list<double> xs)
{
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

inline double param_or(const std::vector<double>& params, std::size_t i, double fallback)
{
    return i < params.size() ? params[i] : fallback;
}

inline int dimension_param(const std::vector<double>& params, std::size_t i, const std::string& name)
{
    const double d = param_or(params, i, 1.0);
    if (d < 1.0 || d != std::floor(d) || d > 64.0)
        throw InvalidArgument(name + ": dimension parameter must be an integer in [1, 64]");
    return static_cast<int>(d);
}

inline void expect_params(const std::vector<double>& params, std::size_t max_count, const std::string& name)
{
    if (params.size() > max_count)
        throw InvalidArgument(name + ": too many parameters (at most " + std::to_string(max_count) + ")");
}

} // namespace detail

/// Names accepted by catalog_system().
inline const std::vector<std::string>& catalog_names()
{
    static const std::vector<std::string> names = {
        "quadratic", "quartic",  "circle",            "double_well", "ridge",
        "linear",    "polya_zero", "diagonal", "rotated_quadratic", "rotation"};
    return names;
}

/// Analytic test systems.
///
///   quadratic(λ[, m])       V = λ||x||²/2
///   quartic([m])            V = ||x||⁴/4
///   circle                  V = (||x||² - 1)²/4, m = 2
///   double_well             V = (x² - 1)²/4 + y²/2
///   ridge                   V = (x² - 1)²/4, no y-dependence
///   linear(a[, m])          F = -a x, no potential
///   polya_zero              F ≡ 0 on R (urn drift), no potential
///   diagonal(d1, ..., dm)   F = diag(d) x = -grad(-Σ d_i x_i²/2)
///   rotated_quadratic(ρ)    F = -∇V + ρ J ∇V with V = ||x||²/2, m = 2
///   rotation                F = J x, V = ||x||²/2 (not strict)
inline GradientLikeSystem catalog_system(const std::string& name, const std::vector<double>& params = {})
{
    using detail::vec;
    if (name == "quadratic") {
        detail::expect_params(params, 2, name);
        const double lambda = detail::param_or(params, 0, 1.0);
        if (!(lambda > 0.0)) throw InvalidArgument("quadratic: λ must be > 0");
        const int m = detail::dimension_param(params, 1, name);
        Potential V(
            m, [lambda](const Vector& x) { return 0.5 * lambda * x.squaredNorm(); },
            [lambda](const Vector& x) -> Vector { return lambda * x; },
            [lambda, m](const Vector&) -> Matrix { return lambda * Matrix::Identity(m, m); }, true);
        return GradientLikeSystem::from_potential("quadratic", V);
    }
    if (name == "quartic") {
        detail::expect_params(params, 1, name);
        const int m = detail::dimension_param(params, 0, name);
        Potential V(
            m, [](const Vector& x) { const double r2 = x.squaredNorm(); return 0.25 * r2 * r2; },
            [](const Vector& x) -> Vector { return x.squaredNorm() * x; },
            [m](const Vector& x) -> Matrix {
                return x.squaredNorm() * Matrix::Identity(m, m) + 2.0 * x * x.transpose();
            },
            true);
        return GradientLikeSystem::from_potential("quartic", V);
    }
    if (name == "circle") {
        detail::expect_params(params, 0, name);
        Potential V(
            2, [](const Vector& x) { const double s = x.squaredNorm() - 1.0; return 0.25 * s * s; },
            [](const Vector& x) -> Vector { return (x.squaredNorm() - 1.0) * x; },
            [](const Vector& x) -> Matrix {
                return (x.squaredNorm() - 1.0) * Matrix::Identity(2, 2) + 2.0 * x * x.transpose();
            },
            true);
        return GradientLikeSystem::from_potential("circle", V);
    }
    if (name == "double_well" || name == "ridge") {
        detail::expect_params(params, 0, name);
        const double ycoef = name == "double_well" ? 1.0 : 0.0;
        Potential V(
            2,
            [ycoef](const Vector& x) {
                const double s = x[0] * x[0] - 1.0;
                return 0.25 * s * s + 0.5 * ycoef * x[1] * x[1];
            },
            [ycoef](const Vector& x) -> Vector {
                return vec({(x[0] * x[0] - 1.0) * x[0], ycoef * x[1]});
            },
            [ycoef](const Vector& x) -> Matrix {
                Matrix H = Matrix::Zero(2, 2);
                H(0, 0) = 3.0 * x[0] * x[0] - 1.0;
                H(1, 1) = ycoef;
                return H;
            },
            true);
        return GradientLikeSystem::from_potential(name, V);
    }
    if (name == "linear") {
        detail::expect_params(params, 2, name);
        const double a = detail::param_or(params, 0, 1.0);
        if (!(a > 0.0)) throw InvalidArgument("linear: a must be > 0");
        const int m = detail::dimension_param(params, 1, name);
        return GradientLikeSystem(
            "linear", m, [a](const Vector& x) -> Vector { return -a * x; },
            [a, m](const Vector&) -> Matrix { return -a * Matrix::Identity(m, m); });
    }
    if (name == "polya_zero") {
        detail::expect_params(params, 0, name);
        return GradientLikeSystem(
            "polya_zero", 1, [](const Vector& x) -> Vector { return Vector::Zero(x.size()); },
            [](const Vector&) -> Matrix { return Matrix::Zero(1, 1); });
    }
    if (name == "diagonal") {
        if (params.empty() || params.size() > 64)
            throw InvalidArgument("diagonal: needs 1 to 64 diagonal entries");
        const Vector d = Eigen::Map<const Vector>(params.data(), static_cast<Eigen::Index>(params.size()));
        const int m = static_cast<int>(d.size());
        Potential V(
            m, [d](const Vector& x) { return -0.5 * (d.array() * x.array().square()).sum(); },
            [d](const Vector& x) -> Vector { return -(d.array() * x.array()).matrix(); },
            [d](const Vector&) -> Matrix { return -Matrix(d.asDiagonal()); }, true);
        return GradientLikeSystem::from_potential("diagonal", V);
    }
    if (name == "rotated_quadratic" || name == "rotation") {
        const bool pure_rotation = name == "rotation";
        detail::expect_params(params, pure_rotation ? 0 : 1, name);
        const double rho = detail::param_or(params, 0, 1.0);
        Matrix J(2, 2);
        J << 0.0, -1.0, 1.0, 0.0;
        Potential V(
            2, [](const Vector& x) { return 0.5 * x.squaredNorm(); },
            [](const Vector& x) -> Vector { return x; },
            [](const Vector&) -> Matrix { return Matrix::Identity(2, 2); }, true);
        const Matrix A = pure_rotation ? J : Matrix(-Matrix::Identity(2, 2) + rho * J);
        return GradientLikeSystem(
            name, 2, [A](const Vector& x) -> Vector { return A * x; },
            [A](const Vector&) -> Matrix { return A; }, V, false);
    }
    throw InvalidArgument("unknown catalog system '" + name + "'");
}

/// Finite samples of the critical sets of catalog systems, for use as
/// CriticalSetSample inputs.
///
///   circle        `count` points evenly spaced on the unit circle
///   ridge         `count` points on the line x = 0, y in [-extent, extent]
///   double_well   the saddle (0, 0)
///   origin, quadratic/quartic/linear/diagonal   the origin
inline CriticalSetSample catalog_critical_set(const std::string& name, int count = 16,
                                              double extent = 1.0, int dimension = 1)
{
    CriticalSetSample c;
    c.label = name;
    c.tolerance = 1e-8;
    if (name == "circle") {
        if (count < 1) throw InvalidArgument("circle sample: count must be >= 1");
        for (int k = 0; k < count; ++k) {
            const double a = 2.0 * std::numbers::pi * k / count;
            c.points.push_back(detail::vec({std::cos(a), std::sin(a)}));
        }
    } else if (name == "ridge") {
        if (count < 2) throw InvalidArgument("ridge sample: count must be >= 2");
        for (int k = 0; k < count; ++k)
            c.points.push_back(detail::vec({0.0, -extent + 2.0 * extent * k / (count - 1)}));
    } else if (name == "double_well") {
        c.points.push_back(Vector::Zero(2));
        c.label = "double_well_saddle";
    } else if (name == "origin" || name == "quadratic" || name == "quartic" || name == "linear" ||
               name == "diagonal") {
        c.points.push_back(Vector::Zero(dimension));
    } else {
        throw InvalidArgument("no catalog critical set for '" + name + "'");
    }
    return c;
}

// ---------------------------------------------------------------------------
// locate_critical_points
// ---------------------------------------------------------------------------

struct CriticalSearch {
    CriticalSetSample sample;
    PointList dropped_seeds;
};

struct NewtonOptions {
    int max_iterations = 100;
    /// Stop once the Newton step is below this (relative to 1 + ||x||) even if
    /// ||F|| has not reached tolerance; used by polish_equilibrium().
    double step_floor = 0.0;
};

namespace detail {

/// Newton iteration on F with min-norm linear solves; a step that does not
/// reduce ||F|| after backtracking is replaced by a damped descent step on
/// ||F||²/2. Returns the final point and whether ||F|| <= tol was reached.
inline std::pair<Vector, bool> newton_refine(const GradientLikeSystem& sys, Vector x, double tol,
                                             const NewtonOptions& opt)
{
    Vector f = sys.field(x);
    double fn = f.norm();
    for (int it = 0; it < opt.max_iterations; ++it) {
        if (!std::isfinite(fn)) return {x, false};
        if (fn <= tol && opt.step_floor <= 0.0) return {x, true};
        const Matrix J = sys.jacobian(x);
        Vector step = -J.completeOrthogonalDecomposition().solve(f);
        bool accepted = false;
        if (step.allFinite()) {
            double t = 1.0;
            for (int k = 0; k < 30; ++k, t *= 0.5) {
                const Vector trial = x + t * step;
                const Vector ft = sys.field(trial);
                const double tn = ft.norm();
                if (tn < fn || (tn <= fn && tn == 0.0)) {
                    x = trial;
                    f = ft;
                    fn = tn;
                    accepted = true;
                    break;
                }
            }
        }
        if (!accepted) {
            // Damped descent on ||F||^2 / 2, direction -J^T F.
            const Vector dir = -J.transpose() * f;
            double t = 1.0;
            for (int k = 0; k < 60 && !accepted; ++k, t *= 0.5) {
                const Vector trial = x + t * dir;
                const Vector ft = sys.field(trial);
                if (ft.norm() < fn) {
                    step = trial - x;
                    x = trial;
                    f = ft;
                    fn = f.norm();
                    accepted = true;
                }
            }
            if (!accepted) return {x, fn <= tol};
        }
        if (opt.step_floor > 0.0 && step.norm() <= opt.step_floor * (1.0 + x.norm()))
            return {x, fn <= tol};
    }
    return {x, fn <= tol};
}

} // namespace detail

/// Newton refinement of each seed; deduplicates converged points within a
/// radius of 10·tol. Seeds that fail to reach ||F|| <= tol within the
/// iteration cap are returned in `dropped_seeds`.
inline CriticalSearch locate_critical_points(const GradientLikeSystem& sys, const PointList& seeds,
                                             double tol, const NewtonOptions& opt = {})
{
    if (!(tol > 0.0)) throw InvalidArgument("locate_critical_points: tol must be > 0");
    CriticalSearch out;
    out.sample.tolerance = tol;
    out.sample.label = sys.name();
    const double radius = 10.0 * tol;
    for (const auto& seed : seeds) {
        if (seed.size() != sys.dimension() || !seed.allFinite())
            throw InvalidArgument("locate_critical_points: seed has wrong dimension or is not finite");
        NewtonOptions o = opt;
        o.step_floor = 0.0;
        auto [p, ok] = detail::newton_refine(sys, seed, tol, o);
        if (!ok) {
            out.dropped_seeds.push_back(seed);
            continue;
        }
        bool duplicate = false;
        for (const auto& q : out.sample.points) {
            if ((p - q).norm() <= radius) {
                duplicate = true;
                break;
            }
        }
        if (!duplicate) out.sample.points.push_back(p);
    }
    return out;
}

/// Refine x to the nearby equilibrium, iterating until the Newton step
/// stalls. Used to identify the limit point of a converging orbit, where
/// ||F|| can be far smaller than any practical tolerance (degenerate zeros).
inline std::optional<Vector> polish_equilibrium(const GradientLikeSystem& sys, const Vector& x,
                                                double tol = 1e-10)
{
    NewtonOptions opt;
    opt.max_iterations = 400;
    opt.step_floor = 1e-15;
    auto [p, ok] = detail::newton_refine(sys, x, tol, opt);
    if (!ok) return std::nullopt;
    return p;
}

} // namespace sgdlab
