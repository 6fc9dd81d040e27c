#pragma once

#include "sgdlab/error.hpp"
#include "sgdlab/fit.hpp"
#include "sgdlab/flow.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/random.hpp"
#include "sgdlab/spectrum.hpp"
#include "sgdlab/stochastic.hpp"
#include "sgdlab/types.hpp"
#include "sgdlab/vectorfield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace sgdlab {

namespace detail {

/// Uniform sample in the ball B(center, radius).
inline Vector sample_ball(Rng& rng, const Vector& center, double radius)
{
    const Eigen::Index m = center.size();
    Vector d(m);
    double n = 0.0;
    while (!(n > 0.0)) {
        for (Eigen::Index i = 0; i < m; ++i) d[i] = rng.normal();
        n = d.norm();
    }
    const double s = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(m));
    return center + (s / n) * d;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Lojasiewicz exponent
// ---------------------------------------------------------------------------

struct LojasiewiczEstimate {
    double theta_hat = 0.0;
    /// Exponent before clamping to (0, 1/2].
    double theta_raw = 0.0;
    bool clamped = false;
    /// c0 inflated so |V - V(p)|^{1-θ} <= c0·||∇V|| on every sample.
    double c0_hat = 0.0;
    /// Least-squares constant before inflation, and the relative inflation.
    double c0_fit = 0.0;
    double eps_fit = 0.0;
    double radius = 0.0;
    std::size_t samples_used = 0;
    double r2 = 0.0;
    bool unreliable = false;
    /// |V - V(p)| was nondecreasing along every probed ray.
    bool ray_monotone = true;
};

/// Fits log||∇V|| = (1-θ)·log|V - V(p)| + const over uniform samples of
/// B(p, radius).
inline LojasiewiczEstimate estimate_lojasiewicz(const Potential& V, const Vector& p, double radius,
                                                int samples, std::uint64_t seed = 0x10a5)
{
    if (p.size() != V.dimension()) throw InvalidArgument("estimate_lojasiewicz: point has wrong dimension");
    if (!(radius > 0.0)) throw InvalidArgument("estimate_lojasiewicz: radius must be > 0");
    if (samples < 5) throw InvalidArgument("estimate_lojasiewicz: need at least 5 samples");
    if (!(V.gradient(p).norm() <= kCriticalGradientTol))
        throw InvalidArgument("estimate_lojasiewicz: p is not a critical point");
    const double vp = V.value(p);
    Rng rng(seed);
    std::vector<double> lv, lg, dv, gn;
    for (int i = 0; i < samples; ++i) {
        const Vector x = detail::sample_ball(rng, p, radius);
        const double g = V.gradient(x).norm();
        const double d = std::abs(V.value(x) - vp);
        if (g < 1e-12 || d < 1e-14) continue;
        lv.push_back(std::log(d));
        lg.push_back(std::log(g));
        dv.push_back(d);
        gn.push_back(g);
    }
    if (lv.size() < 5) throw EstimationError("estimate_lojasiewicz: all samples are degenerate");

    LojasiewiczEstimate out;
    out.radius = radius;
    out.samples_used = lv.size();
    const LineFit f = fit_line(lv, lg);
    out.r2 = f.r2;
    out.unreliable = f.r2 < 0.9;
    out.theta_raw = 1.0 - f.slope;
    out.theta_hat = std::clamp(out.theta_raw, 1e-12, 0.5);
    out.clamped = out.theta_hat != out.theta_raw;
    // The constant is refitted for the clamped exponent, then inflated.
    double mean = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) mean += (1.0 - out.theta_hat) * lv[i] - lg[i];
    out.c0_fit = std::exp(mean / static_cast<double>(lv.size()));
    double worst = 0.0;
    for (std::size_t i = 0; i < dv.size(); ++i)
        worst = std::max(worst, std::pow(dv[i], 1.0 - out.theta_hat) / gn[i]);
    out.c0_hat = std::max(out.c0_fit, worst);
    out.eps_fit = out.c0_hat / out.c0_fit - 1.0;

    for (int ray = 0; ray < 16 && out.ray_monotone; ++ray) {
        Vector u = detail::sample_ball(rng, Vector::Zero(p.size()), 1.0);
        if (!(u.norm() > 0.0)) continue;
        u.normalize();
        double prev = 0.0;
        for (int k = 1; k <= 32; ++k) {
            const double d = std::abs(V.value(p + (radius * k / 32.0) * u) - vp);
            if (d < prev * (1.0 - 1e-9)) {
                out.ray_monotone = false;
                break;
            }
            prev = d;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Angle condition
// ---------------------------------------------------------------------------

struct AngleEstimate {
    double c1_hat = 0.0;
    double beta_angle_hat = 0.0;
    std::size_t samples_used = 0;
    /// c1_hat is numerically zero: the angle condition fails.
    bool failure = false;
};

inline AngleEstimate check_angle(const GradientLikeSystem& sys, const Vector& p, double radius, int samples,
                                 std::uint64_t seed = 0xa761e)
{
    if (!sys.has_lyapunov()) throw InvalidArgument("check_angle: system has no Lyapunov function");
    if (p.size() != sys.dimension()) throw InvalidArgument("check_angle: point has wrong dimension");
    if (!(radius > 0.0) || samples < 1) throw InvalidArgument("check_angle: radius and samples must be positive");
    const Potential& V = sys.lyapunov();
    Rng rng(seed);
    AngleEstimate out;
    out.c1_hat = std::numeric_limits<double>::infinity();
    out.beta_angle_hat = std::numeric_limits<double>::infinity();
    for (int i = 0; i < samples; ++i) {
        const Vector x = detail::sample_ball(rng, p, radius);
        const Vector g = V.gradient(x);
        const Vector F = sys.field(x);
        const double ng = g.norm(), nf = F.norm();
        if (ng < 1e-12 || nf < 1e-12) continue;
        const double ip = std::abs(g.dot(F));
        out.c1_hat = std::min(out.c1_hat, ip / (ng * nf));
        out.beta_angle_hat = std::min(out.beta_angle_hat, ip / (ng * ng));
        ++out.samples_used;
    }
    if (out.samples_used == 0) throw EstimationError("check_angle: no valid samples");
    out.failure = out.c1_hat < 1e-6;
    return out;
}

// ---------------------------------------------------------------------------
// Flow convergence rate
// ---------------------------------------------------------------------------

enum class RateKind { exponential, power };

inline const char* to_string(RateKind k) noexcept { return k == RateKind::exponential ? "exponential" : "power"; }

struct FlowRateFit {
    RateKind kind = RateKind::exponential;
    /// Slope of the selected model: log d vs t (exponential) or log d vs log t (power).
    /// Negative for decay; compare a predicted rate constant by magnitude.
    double exponent = 0.0;
    double exp_slope = 0.0;
    double exp_r2 = 0.0;
    double power_slope = 0.0;
    double power_r2 = 0.0;
    Vector limit;
    std::vector<double> t;
    std::vector<double> distance;
};

/// Fits d(t) = ||Φ_t(x0) - p|| against both e^{ct} and t^k and keeps the
/// model with the higher R². p defaults to the equilibrium polished from the
/// flow's last point.
inline FlowRateFit fit_flow_rate(const GradientLikeSystem& sys, const Vector& x0, const std::vector<double>& t_grid,
                                 std::optional<Vector> p = {}, const FlowIntegrator& integ = {})
{
    if (t_grid.size() < 5) throw InvalidArgument("fit_flow_rate: need at least 5 grid times");
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        if (!(t_grid[i] > 0.0)) throw InvalidArgument("fit_flow_rate: grid times must be > 0");
        if (i > 0 && !(t_grid[i] > t_grid[i - 1])) throw InvalidArgument("fit_flow_rate: grid must be increasing");
    }
    const PointList path = flow_path(sys, x0, t_grid, integ);
    FlowRateFit out;
    if (p) {
        out.limit = *p;
    } else {
        auto q = polish_equilibrium(sys, path.back());
        if (!q) throw EstimationError("fit_flow_rate: no equilibrium near the end of the flow");
        out.limit = *q;
    }
    // Cauchy tail: the distance to the limit must shrink over the last half.
    const double d_mid = (path[path.size() / 2] - out.limit).norm();
    const double d_end = (path.back() - out.limit).norm();
    if (!(d_end < d_mid) && d_end > 1e-12)
        throw EstimationError("fit_flow_rate: flow does not converge on the grid");
    std::vector<double> lt, ld;
    for (std::size_t i = 0; i < path.size(); ++i) {
        const double d = (path[i] - out.limit).norm();
        out.t.push_back(t_grid[i]);
        out.distance.push_back(d);
        if (d > 0.0) {
            lt.push_back(t_grid[i]);
            ld.push_back(std::log(d));
        }
    }
    if (lt.size() < 5) throw EstimationError("fit_flow_rate: fewer than 5 positive distances");
    const LineFit fe = fit_line(lt, ld);
    std::vector<double> llt(lt.size());
    for (std::size_t i = 0; i < lt.size(); ++i) llt[i] = std::log(lt[i]);
    const LineFit fp = fit_line(llt, ld);
    out.exp_slope = fe.slope;
    out.exp_r2 = fe.r2;
    out.power_slope = fp.slope;
    out.power_r2 = fp.r2;
    out.kind = fe.r2 >= fp.r2 ? RateKind::exponential : RateKind::power;
    out.exponent = out.kind == RateKind::exponential ? fe.slope : fp.slope;
    return out;
}

// ---------------------------------------------------------------------------
// Discrete logarithmic rate
// ---------------------------------------------------------------------------

struct DiscreteRateFit {
    double c_hat = 0.0;
    double r2 = 0.0;
    Vector x_inf;
    std::vector<double> n;
    std::vector<double> distance;
    std::size_t points_used = 0;
    /// Grid points dropped from the right because the distance sank below
    /// the tail fluctuation level.
    std::size_t dropped_noise_floor = 0;
    double noise_floor = 0.0;
    /// R² of log d against log n (a power law in n).
    double power_r2 = 0.0;
    /// Decay faster than any power of log n.
    bool super_logarithmic = false;
};

/// Fits log||x_n - x_inf|| against log log n; c_hat = -slope. x_inf defaults
/// to the trajectory's tail mean. Grid indices are mapped to the nearest
/// stored iterate at or below them.
inline DiscreteRateFit fit_discrete_log_rate(const Trajectory& traj, const std::vector<std::uint64_t>& n_grid,
                                             std::optional<Vector> x_inf = {})
{
    if (traj.size() < 2) throw InvalidArgument("fit_discrete_log_rate: trajectory is too short");
    DiscreteRateFit out;
    out.x_inf = x_inf ? *x_inf : traj.tail_mean;
    if (out.x_inf.size() != traj.dim) throw InvalidArgument("fit_discrete_log_rate: x_inf has wrong dimension");

    // Fluctuation of the dense tail around its own mean.
    const std::uint64_t last = traj.index.back();
    const std::uint64_t window = std::max<std::uint64_t>(1, last / 100);
    Vector mean = Vector::Zero(traj.dim);
    std::size_t count = 0;
    for (std::size_t i = traj.size(); i-- > 0 && traj.index[i] + window > last;) {
        mean += traj.point(i);
        ++count;
    }
    mean /= static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t i = traj.size(); i-- > 0 && traj.index[i] + window > last;) ss += (traj.point(i) - mean).squaredNorm();
    out.noise_floor = 3.0 * std::sqrt(ss / static_cast<double>(count));

    std::vector<double> ln, lln, ld;
    for (std::uint64_t n : n_grid) {
        if (n < 3) throw InvalidArgument("fit_discrete_log_rate: grid indices must be >= 3");
        auto it = std::upper_bound(traj.index.begin(), traj.index.end(), n);
        if (it == traj.index.begin()) continue;
        const std::size_t i = static_cast<std::size_t>(it - traj.index.begin()) - 1;
        const double d = (traj.point(i) - out.x_inf).norm();
        const double nn = static_cast<double>(traj.index[i]);
        if (nn < 3.0) continue;
        out.n.push_back(nn);
        out.distance.push_back(d);
    }
    std::size_t keep = out.n.size();
    while (keep > 0 && out.distance[keep - 1] <= out.noise_floor) --keep;
    out.dropped_noise_floor = out.n.size() - keep;
    for (std::size_t i = 0; i < keep; ++i) {
        if (!(out.distance[i] > 0.0)) continue;
        ln.push_back(std::log(out.n[i]));
        lln.push_back(std::log(std::log(out.n[i])));
        ld.push_back(std::log(out.distance[i]));
    }
    out.points_used = ld.size();
    if (ld.size() < 5) throw EstimationError("fit_discrete_log_rate: fewer than 5 usable grid points");
    const LineFit f = fit_line(lln, ld);
    out.c_hat = -f.slope;
    out.r2 = f.r2;
    out.power_r2 = fit_line(ln, ld).r2;
    // A power law in n bends downward in log log n: the late slope steepens.
    const std::size_t h = ld.size() / 2;
    const double early = fit_line(std::vector<double>(lln.begin(), lln.begin() + h + 1),
                                  std::vector<double>(ld.begin(), ld.begin() + h + 1)).slope;
    const double late = fit_line(std::vector<double>(lln.begin() + h, lln.end()),
                                 std::vector<double>(ld.begin() + h, ld.end())).slope;
    out.super_logarithmic = out.power_r2 > out.r2 && late < 1.2 * early && early < 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Repulsion
// ---------------------------------------------------------------------------

struct RepulsionOptions {
    /// Start points are uniform in a ball of this radius around a uniformly
    /// chosen sample point; < 0 uses the neighbourhood radius, 0 starts on C.
    double start_radius = -1.0;
    unsigned threads = 1;
};

struct RepulsionRun {
    std::uint64_t seed = 0;
    Vector start;
    Vector final_point;
    /// First index after the start with x_n outside U.
    std::optional<std::uint64_t> escape_index;
    bool returned_after_escape = false;
    bool ended_inside = false;
};

struct RepulsionReport {
    double radius = 0.0;
    std::string set_label;
    std::size_t runs = 0;
    std::uint64_t N = 0;
    double escape_fraction = 0.0;
    std::vector<std::optional<std::uint64_t>> escape_times;
    std::size_t returns_after_escape = 0;
    std::size_t ended_inside = 0;
    std::vector<RepulsionRun> per_run;
};

namespace detail {

/// Membership in U = {x : d(x, C) < radius} with a bounding-box early out.
class Neighbourhood {
  public:
    Neighbourhood(const CriticalSetSample& C, double radius) : C_(C), r2_(radius * radius)
    {
        lo_ = C.points.front();
        hi_ = C.points.front();
        for (const auto& p : C.points) {
            lo_ = lo_.cwiseMin(p);
            hi_ = hi_.cwiseMax(p);
        }
    }

    bool contains(const Vector& x) const
    {
        double box = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double d = x[i] < lo_[i] ? lo_[i] - x[i] : (x[i] > hi_[i] ? x[i] - hi_[i] : 0.0);
            box += d * d;
        }
        if (box >= r2_) return false;
        for (const auto& p : C_.points)
            if ((x - p).squaredNorm() < r2_) return true;
        return false;
    }

  private:
    const CriticalSetSample& C_;
    double r2_;
    Vector lo_, hi_;
};

} // namespace detail

/// Runs the Robbins–Monro recursion from uniform starts inside the
/// radius-neighbourhood U of C and records exits from U. Run i draws its
/// start and noise from derive_seed(seed, i).
inline RepulsionReport repulsion_experiment(const GradientLikeSystem& sys, const CriticalSetSample& C, double radius,
                                            const StepSchedule& sched, const NoiseModel& noise, std::size_t runs,
                                            std::uint64_t N, std::uint64_t seed, const RepulsionOptions& opt = {})
{
    if (C.empty()) throw InvalidArgument("repulsion_experiment: critical sample is empty");
    if (!(radius > 0.0)) throw InvalidArgument("repulsion_experiment: radius must be > 0");
    if (runs < 1) throw InvalidArgument("repulsion_experiment: runs must be >= 1");
    const detail::Neighbourhood U(C, radius);
    const double start_radius = opt.start_radius < 0.0 ? radius : opt.start_radius;
    RecordPolicy rec;
    rec.stride = std::max<std::uint64_t>(N, 1);
    rec.tail_window = 0;

    RepulsionReport rep;
    rep.radius = radius;
    rep.set_label = C.label;
    rep.runs = runs;
    rep.N = N;
    rep.per_run = parallel_map(runs, opt.threads, [&](std::size_t i) {
        RepulsionRun run;
        run.seed = derive_seed(seed, i);
        Rng start_rng(run.seed);
        const std::size_t which = std::min(C.size() - 1, static_cast<std::size_t>(start_rng.uniform() * C.size()));
        // Rejection keeps starts inside U even for a start radius above radius.
        do {
            run.start = start_radius > 0.0 ? detail::sample_ball(start_rng, C.points[which], start_radius)
                                           : Vector(C.points[which]);
        } while (!U.contains(run.start));
        bool inside = true;
        auto observe = [&](std::uint64_t n, const Vector& x) {
            const bool now = U.contains(x);
            if (inside && !now && !run.escape_index) run.escape_index = n;
            if (!inside && now && run.escape_index) run.returned_after_escape = true;
            inside = now;
        };
        const Trajectory tr = run_robbins_monro_observed(sys, run.start, sched, noise, N,
                                                         derive_seed(run.seed, 1), rec, observe);
        run.final_point = tr.final_point;
        run.ended_inside = U.contains(tr.final_point);
        return run;
    });
    std::size_t escaped = 0;
    for (const auto& r : rep.per_run) {
        rep.escape_times.push_back(r.escape_index);
        if (r.escape_index) ++escaped;
        if (r.returned_after_escape) ++rep.returns_after_escape;
        if (r.ended_inside) ++rep.ended_inside;
    }
    rep.escape_fraction = static_cast<double>(escaped) / static_cast<double>(runs);
    return rep;
}

// ---------------------------------------------------------------------------
// Distribution and martingale checks
// ---------------------------------------------------------------------------

/// Two-sided Kolmogorov–Smirnov statistic against Uniform[0, 1].
inline double distribution_test(std::vector<double> samples)
{
    if (samples.size() < 100) throw InvalidArgument("distribution_test: need at least 100 samples");
    std::sort(samples.begin(), samples.end());
    const auto n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double F = std::clamp(samples[i], 0.0, 1.0);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - F, F - static_cast<double>(i) / n});
    }
    return d;
}

struct MartingaleCheck {
    std::size_t runs = 0;
    std::uint64_t n = 0;
    /// Mean of x_{n+1} - x_n and of (x_{n+1} - x_n)(x_n - 1/2), with standard errors.
    double mean_increment = 0.0;
    double se_increment = 0.0;
    double mean_weighted = 0.0;
    double se_weighted = 0.0;
    bool passes = false;
};

/// Empirical E[x_{n+1} - x_n | x_n] = 0 for the urn, tested through the mean
/// increment and its correlation with x_n, each within 3 standard errors.
inline MartingaleCheck polya_martingale_check(std::size_t runs, std::uint64_t n, std::uint64_t seed, unsigned threads = 1)
{
    if (runs < 2 || n < 1) throw InvalidArgument("polya_martingale_check: need runs >= 2 and n >= 1");
    RecordPolicy rec;
    rec.stride = n + 1;
    rec.tail_window = 2;
    const auto pairs = parallel_map(runs, threads, [&](std::size_t i) {
        const Trajectory tr = polya_urn(n + 1, derive_seed(seed, i), rec);
        const double xn = tr.point(tr.size() - 2)[0];
        const double xn1 = tr.point(tr.size() - 1)[0];
        return std::pair<double, double>{xn1 - xn, (xn1 - xn) * (xn - 0.5)};
    });
    auto stats = [&](auto pick, double& mean, double& se) {
        double s = 0.0, s2 = 0.0;
        for (const auto& p : pairs) s += pick(p);
        mean = s / static_cast<double>(runs);
        for (const auto& p : pairs) s2 += (pick(p) - mean) * (pick(p) - mean);
        se = std::sqrt(s2 / static_cast<double>(runs - 1) / static_cast<double>(runs));
    };
    MartingaleCheck out;
    out.runs = runs;
    out.n = n;
    stats([](const auto& p) { return p.first; }, out.mean_increment, out.se_increment);
    stats([](const auto& p) { return p.second; }, out.mean_weighted, out.se_weighted);
    out.passes = std::abs(out.mean_increment) <= 3.0 * out.se_increment &&
                 std::abs(out.mean_weighted) <= 3.0 * out.se_weighted;
    return out;
}

} // namespace sgdlab
