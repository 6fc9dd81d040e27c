#pragma once

#include "sgdlab/apt.hpp"
#include "sgdlab/error.hpp"
#include "sgdlab/fit.hpp"
#include "sgdlab/flow.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/random.hpp"
#include "sgdlab/types.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace sgdlab {

/// Σ_k r^k ||seq_k||, truncated to the given sequence.
inline double r_norm(const PointList& seq, double r)
{
    if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("r_norm: r must be positive and finite");
    const double log_r = std::log(r);
    double sum = 0.0;
    for (std::size_t k = 0; k < seq.size(); ++k) {
        const double n = seq[k].norm();
        if (n == 0.0) continue;
        const double term = std::exp(static_cast<double>(k) * log_r + std::log(n));
        if (!std::isfinite(term) || !std::isfinite(sum + term))
            throw NumericalFailure("r_norm: term " + std::to_string(k) + " overflows");
        sum += term;
    }
    return sum;
}

/// ξ_0..ξ_K with weight r = e^{-μ}, μ < 0.
struct PseudoOrbit {
    PointList xi;
    double mu = -0.25;
    double T = 0.0;

    double r() const noexcept { return std::exp(-mu); }
    std::size_t K() const noexcept { return xi.empty() ? 0 : xi.size() - 1; }

    void validate() const
    {
        if (!(mu < 0.0)) throw InvalidArgument("PseudoOrbit: mu must be < 0");
        if (xi.size() < 2) throw InvalidArgument("PseudoOrbit: need at least 2 points");
        for (const auto& p : xi)
            if (!p.allFinite()) throw InvalidArgument("PseudoOrbit: non-finite point");
    }
};

/// ξ_k = X(T + k), k = 0..K.
inline PseudoOrbit make_pseudo_orbit(const InterpolatedPath& X, double T, int K, double mu)
{
    if (K < 1) throw InvalidArgument("make_pseudo_orbit: K must be >= 1");
    PseudoOrbit po;
    po.mu = mu;
    po.T = T;
    for (int k = 0; k <= K; ++k) po.xi.push_back(X(T + k));
    po.validate();
    return po;
}

/// g_k = ξ_{k+1} - Φ_1(ξ_k), k = 0..K-1.
inline PointList defect_sequence(const GradientLikeSystem& sys, const PseudoOrbit& po,
                                 const FlowIntegrator& integ = {})
{
    po.validate();
    PointList g;
    for (std::size_t k = 0; k + 1 < po.xi.size(); ++k) g.push_back(po.xi[k + 1] - flow_map(sys, po.xi[k], 1.0, integ));
    return g;
}

/// h_k = Φ_k(x) - ξ_k, k = 0..K.
inline PointList shadow_sequence(const GradientLikeSystem& sys, const Vector& x, const PseudoOrbit& po,
                                 const FlowIntegrator& integ = {})
{
    std::vector<double> times(po.xi.size());
    for (std::size_t k = 0; k < times.size(); ++k) times[k] = static_cast<double>(k);
    PointList h = flow_path(sys, x, times, integ);
    for (std::size_t k = 0; k < h.size(); ++k) h[k] -= po.xi[k];
    return h;
}

struct ShadowOptions {
    int restarts = 8;
    /// Initial poll step; restarts are seeded this far from the guess.
    double initial_step = 0.1;
    double step_floor = 1e-11;
    int max_evaluations = 20'000;
    std::uint64_t seed = 0x51ad0;
    unsigned threads = 1;
    FlowIntegrator integrator{};
};

struct ShadowResult {
    Vector x_star;
    double g_norm = 0.0;
    double h_norm = 0.0;
    double ratio = 0.0;
    bool converged = false;
    /// r^K: weight of the last retained term.
    double tail_weight = 0.0;
    int restart = 0;
    int evaluations = 0;
};

namespace detail {

struct PatternSearchResult {
    Vector x;
    double value = std::numeric_limits<double>::infinity();
    bool converged = false;
    int evaluations = 0;
};

/// Compass search: poll ±step along each axis, move to the best improving
/// poll and grow the step, otherwise halve it. Converged when the step falls
/// below the floor.
template <class Objective>
PatternSearchResult compass_search(Objective&& f, Vector x, double step, double floor, int budget)
{
    PatternSearchResult r;
    r.x = x;
    r.value = f(x);
    r.evaluations = 1;
    const Eigen::Index m = x.size();
    while (step >= floor) {
        if (r.evaluations + 2 * m > budget) return r;
        double best = r.value;
        Vector best_x = r.x;
        for (Eigen::Index i = 0; i < m; ++i) {
            for (double s : {step, -step}) {
                Vector y = r.x;
                y[i] += s;
                double v;
                try {
                    v = f(y);
                } catch (const NumericalFailure&) {
                    v = std::numeric_limits<double>::infinity();
                }
                ++r.evaluations;
                if (v < best) {
                    best = v;
                    best_x = y;
                }
            }
        }
        if (best < r.value) {
            r.value = best;
            r.x = best_x;
            step *= 2.0;
        } else {
            step *= 0.5;
        }
    }
    r.converged = true;
    return r;
}

} // namespace detail

/// Minimizes x ↦ ||h(x, ξ)||_r by derivative-free search from `guess`
/// (default ξ_0) and from perturbed restarts. The best result has the lowest
/// h-norm, ties broken by restart index.
inline ShadowResult find_shadow(const GradientLikeSystem& sys, const PseudoOrbit& po,
                                std::optional<Vector> guess = {}, const ShadowOptions& opt = {})
{
    po.validate();
    if (opt.restarts < 1) throw InvalidArgument("find_shadow: restarts must be >= 1");
    const double r = po.r();
    ShadowResult out;
    out.g_norm = r_norm(defect_sequence(sys, po, opt.integrator), r);
    if (!std::isfinite(out.g_norm)) throw InvalidArgument("find_shadow: defect norm is not finite");
    out.tail_weight = std::pow(r, static_cast<double>(po.K()));
    const Vector x0 = guess ? *guess : po.xi.front();
    if (x0.size() != sys.dimension()) throw InvalidArgument("find_shadow: guess has wrong dimension");

    auto objective = [&](const Vector& x) { return r_norm(shadow_sequence(sys, x, po, opt.integrator), r); };
    auto results = parallel_map(static_cast<std::size_t>(opt.restarts), opt.threads, [&](std::size_t i) {
        Vector start = x0;
        if (i > 0) {
            Rng rng(derive_seed(opt.seed, i));
            for (Eigen::Index j = 0; j < start.size(); ++j) start[j] += opt.initial_step * rng.normal();
        }
        return detail::compass_search(objective, start, opt.initial_step, opt.step_floor, opt.max_evaluations);
    });
    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i)
        if (results[i].value < results[best].value) best = i;
    out.x_star = results[best].x;
    out.h_norm = results[best].value;
    out.converged = results[best].converged;
    out.restart = static_cast<int>(best);
    for (const auto& rr : results) out.evaluations += rr.evaluations;
    out.ratio = out.g_norm > 0.0 ? out.h_norm / out.g_norm : std::numeric_limits<double>::infinity();
    return out;
}

struct ShadowDecay {
    std::vector<double> k;
    std::vector<double> distance;
    /// Slope of log distance against k over the fitted range.
    double slope = 0.0;
    double r2 = 0.0;
    std::size_t points_used = 0;
    /// Fewer than 3 distances above the 1e-12 floor.
    bool skipped = false;
};

/// Fits log ||X(T+k) - Φ_k(x_star)|| against k, k = 0..K. The fit range ends
/// at the first distance below 1e-12 after k = 0.
inline ShadowDecay shadow_decay_check(const GradientLikeSystem& sys, const InterpolatedPath& X,
                                      const Vector& x_star, double T, double mu, int K,
                                      const FlowIntegrator& integ = {})
{
    if (!(mu < 0.0)) throw InvalidArgument("shadow_decay_check: mu must be < 0");
    if (K < 1) throw InvalidArgument("shadow_decay_check: K must be >= 1");
    std::vector<double> times;
    for (int k = 0; k <= K; ++k) times.push_back(k);
    const PointList phi = flow_path(sys, x_star, times, integ);
    ShadowDecay out;
    std::vector<double> kx, ly;
    bool truncated = false;
    for (int k = 0; k <= K; ++k) {
        const double d = (X(T + k) - phi[k]).norm();
        out.k.push_back(k);
        out.distance.push_back(d);
        // x_star may coincide with ξ_0, so a zero at k = 0 is skipped rather than ending the fit.
        if (d < 1e-12 && k > 0) truncated = true;
        if (!truncated && d >= 1e-12) {
            kx.push_back(k);
            ly.push_back(std::log(d));
        }
    }
    out.points_used = kx.size();
    if (kx.size() < 3) {
        out.skipped = true;
        return out;
    }
    const LineFit f = fit_line(kx, ly);
    out.slope = f.slope;
    out.r2 = f.r2;
    return out;
}

} // namespace sgdlab
