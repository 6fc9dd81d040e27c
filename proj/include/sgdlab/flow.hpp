#pragma once

#include "sgdlab/error.hpp"
#include "sgdlab/random.hpp"
#include "sgdlab/types.hpp"
#include "sgdlab/vectorfield.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace sgdlab {

/// Adaptive Dormand–Prince 5(4) integrator for autonomous systems y' = f(y).
///
/// The local error estimate of the embedded 4th-order solution is controlled
/// in the RMS norm with weights atol + rtol·max(|y|, |y_new|); the 5th-order
/// solution is propagated.
struct FlowIntegrator {
    double rtol = 1e-9;
    double atol = 1e-12;
    double max_step = std::numeric_limits<double>::infinity();
    double norm_cap = 1e9;
    std::size_t max_steps = 50'000'000;

    void validate() const
    {
        if (!(rtol > 0.0) || !(atol >= 0.0) || !(max_step > 0.0) || !(norm_cap > 0.0))
            throw InvalidArgument("FlowIntegrator: tolerances, max step and norm cap must be positive");
    }

    /// Integrates from t0 to t1 (either direction). `capped` is the number of
    /// leading components checked against the norm cap (-1: all).
    template <class Rhs>
    Vector integrate(Rhs&& rhs, Vector y, double t0, double t1, Eigen::Index capped = -1) const
    {
        validate();
        if (!std::isfinite(t0) || !std::isfinite(t1))
            throw InvalidArgument("FlowIntegrator: integration bounds must be finite");
        if (t0 == t1) return y;
        const Eigen::Index n = y.size();
        const Eigen::Index nc = capped < 0 ? n : std::min(capped, n);
        const double dir = t1 > t0 ? 1.0 : -1.0;

        // Dormand–Prince tableau.
        constexpr double a21 = 1.0 / 5;
        constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
        constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
        constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                         a54 = -212.0 / 729;
        constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                         a64 = 49.0 / 176, a65 = -5103.0 / 18656;
        constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                         b6 = 11.0 / 84;
        constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                         e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

        auto err_norm = [&](const Vector& err, const Vector& ya, const Vector& yb) {
            double s = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double sc = atol + rtol * std::max(std::abs(ya[i]), std::abs(yb[i]));
                const double r = err[i] / sc;
                s += r * r;
            }
            return std::sqrt(s / static_cast<double>(n));
        };

        Vector k1 = rhs(y);
        check_state(y, k1, nc);

        // Initial step (Hairer, Nørsett & Wanner, II.4).
        double h;
        {
            Vector sc = (atol + rtol * y.array().abs()).matrix();
            const double d0 = std::sqrt((y.array() / sc.array()).square().mean());
            const double d1 = std::sqrt((k1.array() / sc.array()).square().mean());
            double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
            h0 = std::min(h0, std::abs(t1 - t0));
            const Vector y1 = y + dir * h0 * k1;
            const Vector f1 = rhs(y1);
            const double d2 = std::sqrt((((f1 - k1).array()) / sc.array()).square().mean()) / h0;
            const double h1 = (std::max(d1, d2) <= 1e-15)
                                  ? std::max(1e-6, h0 * 1e-3)
                                  : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
            h = std::min({100.0 * h0, h1, max_step});
        }

        double t = t0;
        std::size_t steps = 0;
        Vector ytmp(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ynew(n), err(n);
        while (dir * (t1 - t) > 0.0) {
            if (++steps > max_steps) throw StiffnessError("FlowIntegrator: step budget exhausted");
            bool last = false;
            if (h >= std::abs(t1 - t)) {
                h = std::abs(t1 - t);
                last = true;
            }
            if (h <= 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)))
                throw StiffnessError("FlowIntegrator: step size underflow at t = " + std::to_string(t));
            const double hs = dir * h;
            ytmp = y + hs * (a21 * k1);
            k2 = rhs(ytmp);
            ytmp = y + hs * (a31 * k1 + a32 * k2);
            k3 = rhs(ytmp);
            ytmp = y + hs * (a41 * k1 + a42 * k2 + a43 * k3);
            k4 = rhs(ytmp);
            ytmp = y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
            k5 = rhs(ytmp);
            ytmp = y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
            k6 = rhs(ytmp);
            ynew = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
            k7 = rhs(ynew);
            err = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            double en = err_norm(err, y, ynew);
            if (!std::isfinite(en)) en = 1e10;
            if (en <= 1.0) {
                t = last ? t1 : t + hs;
                y.swap(ynew);
                k1.swap(k7);
                check_state(y, k1, nc);
                const double fac = en == 0.0 ? 5.0 : std::min(5.0, std::max(0.2, 0.9 * std::pow(en, -0.2)));
                h = std::min(h * fac, max_step);
            } else {
                h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
            }
        }
        return y;
    }

  private:
    void check_state(const Vector& y, const Vector& f, Eigen::Index nc) const
    {
        if (!y.allFinite() || !f.allFinite())
            throw DivergenceError("FlowIntegrator: non-finite state");
        if (y.head(nc).norm() > norm_cap)
            throw DivergenceError("FlowIntegrator: solution norm exceeded cap " + std::to_string(norm_cap));
    }
};

// ---------------------------------------------------------------------------
// Flow maps
// ---------------------------------------------------------------------------

/// Φ_t(x). Negative t integrates backward.
inline Vector flow_map(const GradientLikeSystem& sys, const Vector& x, double t,
                       const FlowIntegrator& integ = {})
{
    if (x.size() != sys.dimension()) throw InvalidArgument("flow_map: point has wrong dimension");
    return integ.integrate([&sys](const Vector& y) { return sys.field(y); }, x, 0.0, t);
}

/// Φ_t(x) for each t of a monotone (non-decreasing or non-increasing) list of
/// times, integrating continuously through them.
inline PointList flow_path(const GradientLikeSystem& sys, const Vector& x,
                           const std::vector<double>& times, const FlowIntegrator& integ = {})
{
    if (x.size() != sys.dimension()) throw InvalidArgument("flow_path: point has wrong dimension");
    PointList out;
    out.reserve(times.size());
    Vector y = x;
    double t = 0.0;
    auto rhs = [&sys](const Vector& z) { return sys.field(z); };
    for (double s : times) {
        y = integ.integrate(rhs, y, t, s);
        t = s;
        out.push_back(y);
    }
    return out;
}

/// True iff V(Φ_t(x)) decreases along the sorted grid: no increase beyond the
/// integrator's tolerance scale between grid points, and a strict overall drop.
inline bool lyapunov_decrease_check(const GradientLikeSystem& sys, const Vector& x,
                                    std::vector<double> t_grid, const FlowIntegrator& integ = {},
                                    double equilibrium_tol = 1e-10)
{
    if (!sys.has_lyapunov())
        throw InvalidArgument("lyapunov_decrease_check: system '" + sys.name() + "' has no Lyapunov potential");
    if (t_grid.size() < 2) throw InvalidArgument("lyapunov_decrease_check: need at least two times");
    if (!(sys.field(x).norm() > equilibrium_tol))
        throw InvalidArgument("lyapunov_decrease_check: x is an equilibrium");
    std::sort(t_grid.begin(), t_grid.end());
    if (t_grid.front() < 0.0) throw InvalidArgument("lyapunov_decrease_check: times must be >= 0");
    const auto& V = sys.lyapunov();
    const PointList path = flow_path(sys, x, t_grid, integ);
    const double first = V.value(path.front());
    double prev = first;
    for (std::size_t i = 1; i < path.size(); ++i) {
        const double cur = V.value(path[i]);
        const double slack = 10.0 * (integ.atol + integ.rtol * std::abs(prev));
        if (cur > prev + slack) return false;
        prev = cur;
    }
    return prev < first - 10.0 * (integ.atol + integ.rtol * std::abs(first));
}

// ---------------------------------------------------------------------------
// Variational system
// ---------------------------------------------------------------------------

namespace detail {

/// Advances (x, v) under dx/dt = F(x), dv/dt = DF(x) v - λ v over [0, dt].
/// The norm cap applies to x only.
inline void advance_variational(const GradientLikeSystem& sys, Vector& x, Matrix& V, double dt,
                                double lambda, const FlowIntegrator& integ)
{
    const Eigen::Index m = x.size();
    const Eigen::Index k = V.cols();
    Vector y(m + m * k);
    y.head(m) = x;
    y.tail(m * k) = Eigen::Map<const Vector>(V.data(), m * k);
    auto rhs = [&sys, m, k, lambda](const Vector& z) {
        Vector dz(z.size());
        const Vector xs = z.head(m);
        dz.head(m) = sys.field(xs);
        const Matrix J = sys.jacobian(xs);
        Eigen::Map<const Matrix> W(z.data() + m, m, k);
        Eigen::Map<Matrix> dW(dz.data() + m, m, k);
        dW = J * W - lambda * W;
        return dz;
    };
    y = integ.integrate(rhs, std::move(y), 0.0, dt, m);
    x = y.head(m);
    V = Eigen::Map<const Matrix>(y.data() + m, m, k);
}

} // namespace detail

/// v(t) for the coupled system dx/dt = F(x), dv/dt = DF(x) v - λ v.
inline Vector variational_flow(const GradientLikeSystem& sys, const Vector& x, const Vector& v,
                               double t, double lambda, const FlowIntegrator& integ = {})
{
    if (x.size() != sys.dimension() || v.size() != sys.dimension())
        throw InvalidArgument("variational_flow: dimension mismatch");
    if (!(v.norm() > 0.0)) throw InvalidArgument("variational_flow: v must be nonzero");
    Vector xs = x;
    Matrix W = v;
    detail::advance_variational(sys, xs, W, t, lambda, integ);
    return W.col(0);
}

// ---------------------------------------------------------------------------
// Resolvent test
// ---------------------------------------------------------------------------

enum class Verdict { yes, no, indeterminate };

inline const char* to_string(Verdict v) noexcept
{
    switch (v) {
    case Verdict::yes: return "yes";
    case Verdict::no: return "no";
    case Verdict::indeterminate: return "indeterminate";
    }
    return "?";
}

struct ResolventOptions {
    double T_max = 400.0;
    double growth_threshold = std::log(1e6);
    /// Number of probes per point; <= 0 selects 2m random + m coordinate.
    int probes = 0;
    /// Also probe real eigenvector directions of DF at equilibria.
    bool eigenvector_probes = true;
    double chunk = 0.5;
    std::uint64_t seed = 0x5eed;
    FlowIntegrator integrator{};
};

struct ResolventVerdict {
    double lambda = 0.0;
    Verdict verdict = Verdict::indeterminate;
    /// Max over probes of the log-growth reached.
    double witness_growth = 0.0;
    /// Min over probes of the log-growth reached (the most bounded probe).
    double weakest_growth = 0.0;
    int probes_used = 0;
    std::string failure;

    bool in_resolvent() const noexcept { return verdict == Verdict::yes; }
};

namespace detail {

/// sup over t in [0, ±T_max] of log(||v(t)|| / ||v(0)||), evaluated at chunk
/// ends, stopping early once `stop_at` is exceeded. v is renormalized after
/// each chunk; the linear dependence on v keeps this exact.
inline double directional_growth(const GradientLikeSystem& sys, const Vector& x, const Vector& v0,
                                 double lambda, double direction, const ResolventOptions& opt,
                                 double stop_at)
{
    Vector xs = x;
    Matrix W = v0.normalized();
    double log_scale = 0.0;
    double best = 0.0;
    double t = 0.0;
    while (t < opt.T_max) {
        const double dt = std::min(opt.chunk, opt.T_max - t);
        detail::advance_variational(sys, xs, W, direction * dt, lambda, opt.integrator);
        t += dt;
        const double nv = W.norm();
        if (!(nv > 0.0) || !std::isfinite(nv)) throw DivergenceError("resolvent_test: degenerate variational vector");
        log_scale += std::log(nv);
        W /= nv;
        best = std::max(best, log_scale);
        if (best > stop_at) break;
    }
    return best;
}

inline PointList probe_directions(const GradientLikeSystem& sys, const Vector& x,
                                  const ResolventOptions& opt, Rng& rng)
{
    const int m = sys.dimension();
    PointList dirs;
    const int count = opt.probes > 0 ? opt.probes : 3 * m;
    // Coordinate directions first, then random unit vectors.
    for (int i = 0; i < std::min(count, m); ++i) dirs.push_back(Vector::Unit(m, i));
    for (int i = m; i < count; ++i) {
        Vector v(m);
        for (int j = 0; j < m; ++j) v[j] = rng.normal();
        dirs.push_back(v.normalized());
    }
    if (opt.eigenvector_probes && sys.field(x).norm() <= 1e-8) {
        Eigen::EigenSolver<Matrix> es(sys.jacobian(x));
        if (es.info() == Eigen::Success) {
            for (int i = 0; i < m; ++i) {
                const Vector re = es.eigenvectors().col(i).real();
                const Vector im = es.eigenvectors().col(i).imag();
                if (re.norm() > 1e-12) dirs.push_back(re.normalized());
                if (im.norm() > 1e-12) dirs.push_back(im.normalized());
            }
        }
    }
    return dirs;
}

} // namespace detail

/// Finite-horizon test of λ ∈ R(C): λ is in the resolvent iff no solution of
/// the λ-shifted variational system through C stays bounded over t ∈ R.
///
/// Each probe's growth is the larger of the forward and backward sup of
/// log(||v(t)|| / ||v(0)||) over |t| <= T_max. A probe is unbounded when its
/// growth exceeds 1.1·threshold and bounded when below 0.9·threshold;
/// anything between makes the verdict indeterminate. Integrator failures
/// also give an indeterminate verdict, with the reason in `failure`.
inline ResolventVerdict resolvent_test(const GradientLikeSystem& sys, const CriticalSetSample& C,
                                       double lambda, const ResolventOptions& opt = {})
{
    if (C.empty()) throw InvalidArgument("resolvent_test: critical sample is empty");
    if (!(opt.growth_threshold > 0.0)) throw InvalidArgument("resolvent_test: growth threshold must be > 0");
    if (!(opt.T_max > 0.0)) throw InvalidArgument("resolvent_test: T_max must be > 0");
    ResolventVerdict out;
    out.lambda = lambda;
    out.weakest_growth = std::numeric_limits<double>::infinity();
    const double hi = 1.1 * opt.growth_threshold;
    const double lo = 0.9 * opt.growth_threshold;
    Rng rng(opt.seed);
    bool any_bounded = false;
    bool any_uncertain = false;
    try {
        for (const auto& x : C.points) {
            for (const auto& v : detail::probe_directions(sys, x, opt, rng)) {
                double g = detail::directional_growth(sys, x, v, lambda, +1.0, opt, hi);
                if (g <= hi) g = std::max(g, detail::directional_growth(sys, x, v, lambda, -1.0, opt, hi));
                ++out.probes_used;
                out.witness_growth = std::max(out.witness_growth, g);
                out.weakest_growth = std::min(out.weakest_growth, g);
                if (g <= lo) any_bounded = true;
                else if (g <= hi) any_uncertain = true;
            }
        }
    } catch (const NumericalFailure& e) {
        out.verdict = Verdict::indeterminate;
        out.failure = e.what();
        return out;
    }
    if (any_bounded) out.verdict = Verdict::no;
    else if (any_uncertain) out.verdict = Verdict::indeterminate;
    else out.verdict = Verdict::yes;
    return out;
}

// ---------------------------------------------------------------------------
// Expansion rate
// ---------------------------------------------------------------------------

/// (1/T)·log(inf_x ||DΦ_{-T}(Φ_T(x))||^{-1}) over the sample. At equilibria
/// this approximates the smallest real part of the spectrum of DF.
inline double expansion_rate(const GradientLikeSystem& sys, const CriticalSetSample& C, double T,
                             const FlowIntegrator& integ = {})
{
    if (C.empty()) throw InvalidArgument("expansion_rate: critical sample is empty");
    if (!(T > 0.0)) throw InvalidArgument("expansion_rate: T must be > 0");
    const int m = sys.dimension();
    double worst_log_norm = -std::numeric_limits<double>::infinity();
    for (const auto& x : C.points) {
        Vector y = flow_map(sys, x, T, integ);
        Matrix W = Matrix::Identity(m, m);
        double log_scale = 0.0;
        double t = 0.0;
        while (t < T) {
            const double dt = std::min(1.0, T - t);
            detail::advance_variational(sys, y, W, -dt, 0.0, integ);
            t += dt;
            const double s = W.norm();
            log_scale += std::log(s);
            W /= s;
        }
        Eigen::JacobiSVD<Matrix> svd(W);
        const double log_norm = log_scale + std::log(svd.singularValues()[0]);
        worst_log_norm = std::max(worst_log_norm, log_norm);
    }
    return -worst_log_norm / T;
}

} // namespace sgdlab
