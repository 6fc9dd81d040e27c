#pragma once

#include "sgdlab/error.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/random.hpp"
#include "sgdlab/types.hpp"
#include "sgdlab/vectorfield.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace sgdlab {

/// Neumaier-compensated running sum.
class CompensatedSum {
  public:
    void add(double x) noexcept
    {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) c_ += (sum_ - t) + x;
        else c_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + c_; }

  private:
    double sum_ = 0.0;
    double c_ = 0.0;
};

// ---------------------------------------------------------------------------
// StepSchedule
// ---------------------------------------------------------------------------

/// γ_n = A / (k^α · log(k)^β) with k = n + shift.
///
/// With β = 0 this is A/k^α for every n >= 1. With β > 0 the logarithm is
/// applied from k = n0 on and γ is held at its k = n0 value below that
/// (so γ_1 = γ_2 for the default n0 = 2, shift = 0).
struct StepSchedule {
    double A = 1.0;
    double beta = 0.0;
    std::uint64_t n0 = 2;
    std::uint64_t shift = 0;
    double exponent = 1.0;

    void validate() const
    {
        if (!(A > 0.0) || !std::isfinite(A)) throw InvalidArgument("StepSchedule: A must be > 0");
        if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("StepSchedule: beta must lie in [0, 1]");
        if (n0 < 2) throw InvalidArgument("StepSchedule: n0 must be >= 2");
        if (!(exponent > 0.0 && exponent <= 1.0)) throw InvalidArgument("StepSchedule: exponent must lie in (0, 1]");
    }

    double gamma(std::uint64_t n) const noexcept
    {
        double k = static_cast<double>(n + shift);
        const double base = exponent == 1.0 ? k : std::pow(k, exponent);
        if (beta == 0.0) return A / base;
        if (n + shift < n0) {
            k = static_cast<double>(n0);
            const double b0 = exponent == 1.0 ? k : std::pow(k, exponent);
            return A / (b0 * std::pow(std::log(k), beta));
        }
        return A / (base * std::pow(std::log(k), beta));
    }

    /// τ_n = Σ_{i<=n} γ_i, accumulated exactly as the recursions do.
    double partial_sum(std::uint64_t n) const noexcept
    {
        CompensatedSum s;
        for (std::uint64_t i = 1; i <= n; ++i) s.add(gamma(i));
        return s.value();
    }

    /// The error rate -1/(2A) applies to the pure A/n family.
    bool harmonic() const noexcept { return beta == 0.0 && exponent == 1.0; }
};

// ---------------------------------------------------------------------------
// NoiseModel
// ---------------------------------------------------------------------------

enum class NoiseKind { zero, gaussian_iso, bounded_uniform, excited_gaussian };

inline const char* to_string(NoiseKind k) noexcept
{
    switch (k) {
    case NoiseKind::zero: return "zero";
    case NoiseKind::gaussian_iso: return "gaussian_iso";
    case NoiseKind::bounded_uniform: return "bounded_uniform";
    case NoiseKind::excited_gaussian: return "excited_gaussian";
    }
    return "?";
}

/// State-independent martingale-difference perturbations (i.i.d., mean zero).
///
///   zero                  U ≡ 0
///   gaussian_iso(σ)       U ~ N(0, σ² I)
///   bounded_uniform(b)    U uniform on [-b, b]^m, covariance b²/3 I
///   excited_gaussian(σ, floor)
///                         U ~ N(0, σ² I) with a declared covariance floor
///                         0 < floor <= σ²
///
/// All kinds have finite moments of every order; moment_q() is +inf.
class NoiseModel {
  public:
    static NoiseModel zero() { return NoiseModel(NoiseKind::zero, 0.0, 0.0); }
    static NoiseModel gaussian_iso(double sigma)
    {
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("gaussian_iso: sigma must be >= 0");
        return NoiseModel(NoiseKind::gaussian_iso, sigma, sigma * sigma);
    }
    static NoiseModel bounded_uniform(double b)
    {
        if (!(b >= 0.0) || !std::isfinite(b)) throw InvalidArgument("bounded_uniform: b must be >= 0");
        return NoiseModel(NoiseKind::bounded_uniform, b, b * b / 3.0);
    }
    static NoiseModel excited_gaussian(double sigma, double floor)
    {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("excited_gaussian: sigma must be > 0");
        if (!(floor > 0.0 && floor <= sigma * sigma))
            throw InvalidArgument("excited_gaussian: floor must lie in (0, sigma^2]");
        return NoiseModel(NoiseKind::excited_gaussian, sigma, floor);
    }

    NoiseKind kind() const noexcept { return kind_; }
    /// σ for Gaussian kinds, b for bounded_uniform.
    double scale() const noexcept { return scale_; }
    /// Guaranteed lower bound on λ_min of the conditional covariance.
    double covariance_floor() const noexcept { return floor_; }
    /// Per-coordinate variance.
    double variance() const noexcept
    {
        switch (kind_) {
        case NoiseKind::zero: return 0.0;
        case NoiseKind::bounded_uniform: return scale_ * scale_ / 3.0;
        default: return scale_ * scale_;
        }
    }
    double moment_q() const noexcept { return std::numeric_limits<double>::infinity(); }
    bool is_zero() const noexcept { return kind_ == NoiseKind::zero || scale_ == 0.0; }

    void sample(Rng& rng, Vector& out) const noexcept
    {
        switch (kind_) {
        case NoiseKind::zero: out.setZero(); break;
        case NoiseKind::gaussian_iso:
        case NoiseKind::excited_gaussian:
            for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = scale_ * rng.normal();
            break;
        case NoiseKind::bounded_uniform:
            for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = rng.uniform(-scale_, scale_);
            break;
        }
    }

  private:
    NoiseModel(NoiseKind k, double scale, double floor) : kind_(k), scale_(scale), floor_(floor) {}

    NoiseKind kind_;
    double scale_;
    double floor_;
};

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

/// Which iterates are kept. An iterate n is stored when any of: n = 0 or N;
/// n is a multiple of `stride`; τ_n has advanced by `tau_spacing` since the
/// last stored iterate; n lies in the last `tail_window` iterates.
struct RecordPolicy {
    std::uint64_t stride = 1;
    double tau_spacing = 0.0;
    std::uint64_t tail_window = 10'000;
    /// Stop (without error) once ||x_n|| exceeds this.
    std::optional<double> hard_stop_norm;

    void validate() const
    {
        if (stride == 0) throw InvalidArgument("RecordPolicy: stride must be >= 1");
        if (!(tau_spacing >= 0.0)) throw InvalidArgument("RecordPolicy: tau_spacing must be >= 0");
        if (hard_stop_norm && !(*hard_stop_norm > 0.0))
            throw InvalidArgument("RecordPolicy: hard stop norm must be > 0");
    }

    /// Stride chosen so about `budget` strided iterates are kept.
    static RecordPolicy thinned(std::uint64_t N, std::uint64_t budget = 100'000, double tau_spacing = 0.0)
    {
        RecordPolicy p;
        p.stride = std::max<std::uint64_t>(1, N / std::max<std::uint64_t>(1, budget));
        p.tau_spacing = tau_spacing;
        return p;
    }
};

struct Trajectory {
    std::string system_id;
    StepSchedule schedule;
    std::uint64_t seed = 0;
    int dim = 0;
    /// Iterations requested and iterations actually carried out.
    std::uint64_t requested_steps = 0;
    std::uint64_t steps = 0;
    bool stopped_early = false;

    std::vector<std::uint64_t> index;
    std::vector<double> tau;
    /// Row-major: iterate i occupies coords[i*dim, (i+1)*dim).
    std::vector<double> coords;

    double max_norm = 0.0;
    Vector final_point;
    /// Mean of the final 1% of all iterates (not only stored ones).
    Vector tail_mean;

    std::size_t size() const noexcept { return index.size(); }
    Eigen::Map<const Vector> point(std::size_t i) const
    {
        return Eigen::Map<const Vector>(coords.data() + i * static_cast<std::size_t>(dim), dim);
    }

    void push(std::uint64_t n, double t, const Vector& x)
    {
        index.push_back(n);
        tau.push_back(t);
        coords.insert(coords.end(), x.data(), x.data() + x.size());
    }
};

namespace detail {

enum class DriftSign { descent, ascent };

struct NoObserver {
    void operator()(std::uint64_t, const Vector&) const noexcept {}
};

/// Shared driver for x_{n+1} = x_n ∓ γ_{n+1}(drift(x_n) + U_{n+1}).
template <DriftSign Sign, class Drift, class Observer = NoObserver>
Trajectory run_recursion(std::string system_id, int dim, Drift&& drift, const Vector& x0,
                         const StepSchedule& sched, const NoiseModel& noise, std::uint64_t N,
                         std::uint64_t seed, const RecordPolicy& record, Observer&& observe = {})
{
    sched.validate();
    record.validate();
    if (N < 1) throw InvalidArgument("recursion: N must be >= 1");
    if (x0.size() != dim || !x0.allFinite()) throw InvalidArgument("recursion: x0 has wrong dimension or is not finite");

    Trajectory tr;
    tr.system_id = std::move(system_id);
    tr.schedule = sched;
    tr.seed = seed;
    tr.dim = dim;
    tr.requested_steps = N;
    tr.index.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(N / record.stride, 1'000'000) + record.tail_window + 16));

    const std::uint64_t tail_count = std::max<std::uint64_t>(1, (N + 99) / 100);
    const std::uint64_t tail_start = N - tail_count + 1;
    const std::uint64_t window_start = N > record.tail_window ? N - record.tail_window + 1 : 1;

    Rng rng(seed);
    Vector x = x0;
    Vector u = Vector::Zero(dim);
    Vector tail_sum = Vector::Zero(dim);
    const bool noisy = !noise.is_zero();
    CompensatedSum tau;
    double next_mark = record.tau_spacing;
    tr.push(0, 0.0, x);
    tr.max_norm = x.norm();

    std::uint64_t n = 0;
    while (n < N) {
        const double g = sched.gamma(n + 1);
        if (noisy) noise.sample(rng, u);
        if constexpr (Sign == DriftSign::descent) {
            x.noalias() -= g * (drift(x) + u);
        } else {
            x.noalias() += g * (drift(x) + u);
        }
        ++n;
        tau.add(g);
        const double t = tau.value();
        const double nrm = x.norm();
        if (!std::isfinite(nrm))
            throw DivergenceError("recursion: non-finite iterate at n = " + std::to_string(n), n);
        tr.max_norm = std::max(tr.max_norm, nrm);
        observe(n, x);
        if (n >= tail_start) tail_sum += x;
        const bool stop = record.hard_stop_norm && nrm > *record.hard_stop_norm;
        const bool keep = n == N || stop || n % record.stride == 0 || n >= window_start ||
                          (record.tau_spacing > 0.0 && t >= next_mark);
        if (keep) {
            tr.push(n, t, x);
            if (record.tau_spacing > 0.0) next_mark = t + record.tau_spacing;
        }
        if (stop) {
            tr.stopped_early = true;
            break;
        }
    }
    tr.steps = n;
    tr.final_point = x;
    const std::uint64_t counted = n >= tail_start ? n - tail_start + 1 : 0;
    tr.tail_mean = counted > 0 ? Vector(tail_sum / static_cast<double>(counted)) : x;
    return tr;
}

} // namespace detail

/// x_{n+1} = x_n - γ_{n+1}(∇V(x_n) + U_{n+1}).
inline Trajectory run_sgd(const Potential& V, const Vector& x0, const StepSchedule& sched,
                          const NoiseModel& noise, std::uint64_t N, std::uint64_t seed,
                          const RecordPolicy& record = {}, std::string system_id = "potential")
{
    return detail::run_recursion<detail::DriftSign::descent>(
        std::move(system_id), V.dimension(), [&V](const Vector& x) { return V.gradient(x); }, x0,
        sched, noise, N, seed, record);
}

inline Trajectory run_sgd(const GradientLikeSystem& sys, const Vector& x0, const StepSchedule& sched,
                          const NoiseModel& noise, std::uint64_t N, std::uint64_t seed,
                          const RecordPolicy& record = {})
{
    return run_sgd(sys.lyapunov(), x0, sched, noise, N, seed, record, sys.name());
}

/// x_{n+1} = x_n + γ_{n+1}(F(x_n) + U_{n+1}).
inline Trajectory run_robbins_monro(const GradientLikeSystem& sys, const Vector& x0,
                                    const StepSchedule& sched, const NoiseModel& noise,
                                    std::uint64_t N, std::uint64_t seed, const RecordPolicy& record = {})
{
    return detail::run_recursion<detail::DriftSign::ascent>(
        sys.name(), sys.dimension(), [&sys](const Vector& x) { return sys.field(x); }, x0, sched,
        noise, N, seed, record);
}

/// run_robbins_monro, calling observe(n, x_n) after every step.
template <class Observer>
Trajectory run_robbins_monro_observed(const GradientLikeSystem& sys, const Vector& x0,
                                      const StepSchedule& sched, const NoiseModel& noise, std::uint64_t N,
                                      std::uint64_t seed, const RecordPolicy& record, Observer&& observe)
{
    return detail::run_recursion<detail::DriftSign::ascent>(
        sys.name(), sys.dimension(), [&sys](const Vector& x) { return sys.field(x); }, x0, sched,
        noise, N, seed, record, std::forward<Observer>(observe));
}

/// Two-colour Pólya urn started from one white and one black ball;
/// x_n = W_n/(n+2), i.e. the recursion with γ_n = 1/(n+2), F ≡ 0 and
/// U_{n+1} = 1{white drawn} - x_n.
inline Trajectory polya_urn(std::uint64_t N, std::uint64_t seed, const RecordPolicy& record = {})
{
    record.validate();
    if (N < 1) throw InvalidArgument("polya_urn: N must be >= 1");
    Trajectory tr;
    tr.system_id = "polya_zero";
    tr.schedule = StepSchedule{1.0, 0.0, 2, 2, 1.0};
    tr.seed = seed;
    tr.dim = 1;
    tr.requested_steps = N;
    const std::uint64_t tail_count = std::max<std::uint64_t>(1, (N + 99) / 100);
    const std::uint64_t tail_start = N - tail_count + 1;
    const std::uint64_t window_start = N > record.tail_window ? N - record.tail_window + 1 : 1;

    Rng rng(seed);
    std::uint64_t white = 1;
    Vector x(1);
    x[0] = 0.5;
    CompensatedSum tau;
    double next_mark = record.tau_spacing;
    double tail_sum = 0.0;
    tr.push(0, 0.0, x);
    tr.max_norm = 0.5;
    for (std::uint64_t n = 0; n < N; ++n) {
        if (rng.bernoulli(x[0])) ++white;
        const std::uint64_t k = n + 1;
        x[0] = static_cast<double>(white) / static_cast<double>(k + 2);
        tau.add(tr.schedule.gamma(k));
        const double t = tau.value();
        tr.max_norm = std::max(tr.max_norm, x[0]);
        if (k >= tail_start) tail_sum += x[0];
        if (k == N || k % record.stride == 0 || k >= window_start ||
            (record.tau_spacing > 0.0 && t >= next_mark)) {
            tr.push(k, t, x);
            if (record.tau_spacing > 0.0) next_mark = t + record.tau_spacing;
        }
    }
    tr.steps = N;
    tr.final_point = x;
    tr.tail_mean = Vector::Constant(1, tail_sum / static_cast<double>(tail_count));
    return tr;
}

/// Final urn proportions x_N of `runs` independent urns; run i uses
/// derive_seed(seed, i).
inline std::vector<double> polya_endpoints(std::size_t runs, std::uint64_t N, std::uint64_t seed,
                                           unsigned threads = 1)
{
    RecordPolicy rec;
    rec.stride = std::max<std::uint64_t>(N, 1);
    rec.tail_window = 0;
    return parallel_map(runs, threads, [&](std::size_t i) {
        return polya_urn(N, derive_seed(seed, i), rec).final_point[0];
    });
}

// ---------------------------------------------------------------------------
// Noise partial sums
// ---------------------------------------------------------------------------

/// For each n in `n_grid`, sup{ ||Σ_{i=n}^{k-1} γ_{i+1} U_{i+1}|| : k > n, τ_k <= τ_n + T }.
/// Entries whose window does not close before N are NaN.
inline std::vector<double> noise_partial_sum_profile(const StepSchedule& sched, const NoiseModel& noise,
                                                     int dim, std::uint64_t N, double T, std::uint64_t seed,
                                                     std::vector<std::uint64_t> n_grid)
{
    sched.validate();
    if (dim < 1) throw InvalidArgument("noise_partial_sum_profile: dim must be >= 1");
    if (!(T > 0.0)) throw InvalidArgument("noise_partial_sum_profile: T must be > 0");
    std::sort(n_grid.begin(), n_grid.end());
    std::vector<double> sup(n_grid.size(), std::numeric_limits<double>::quiet_NaN());

    struct Window {
        std::size_t slot;
        Vector base;
        double limit;
        double best;
    };
    std::vector<Window> open;
    Rng rng(seed);
    Vector u = Vector::Zero(dim);
    Vector S = Vector::Zero(dim);
    CompensatedSum tau;
    std::size_t next = 0;
    while (next < n_grid.size() && n_grid[next] == 0) {
        open.push_back({next, S, T, 0.0});
        ++next;
    }
    for (std::uint64_t k = 1; k <= N; ++k) {
        const double g = sched.gamma(k);
        noise.sample(rng, u);
        S.noalias() += g * u;
        tau.add(g);
        const double t = tau.value();
        for (auto it = open.begin(); it != open.end();) {
            if (t <= it->limit) {
                it->best = std::max(it->best, (S - it->base).norm());
                ++it;
            } else {
                sup[it->slot] = it->best;
                it = open.erase(it);
            }
        }
        while (next < n_grid.size() && n_grid[next] == k) {
            open.push_back({next, S, t + T, 0.0});
            ++next;
        }
        if (open.empty() && next >= n_grid.size()) break;
    }
    return sup;
}

/// Max of the partial-sum supremum over the later half of a log-spaced grid
/// of starting indices whose windows fit in [1, N]. Should decay toward 0 as
/// N grows when the noise conditions for an asymptotic pseudo-trajectory hold.
inline double noise_partial_sum_check(const StepSchedule& sched, const NoiseModel& noise, int dim,
                                      std::uint64_t N, double T, std::uint64_t seed, int grid_points = 20)
{
    if (N < 20) throw InvalidArgument("noise_partial_sum_check: N must be >= 20");
    std::vector<std::uint64_t> grid;
    const double lo = std::log(10.0);
    const double hi = std::log(static_cast<double>(N));
    for (int i = 0; i < grid_points; ++i) {
        const auto n = static_cast<std::uint64_t>(std::exp(lo + (hi - lo) * i / std::max(1, grid_points - 1)));
        if (grid.empty() || n > grid.back()) grid.push_back(n);
    }
    const auto sup = noise_partial_sum_profile(sched, noise, dim, N, T, seed, grid);
    std::vector<double> done;
    for (double s : sup)
        if (!std::isnan(s)) done.push_back(s);
    if (done.empty()) throw EstimationError("noise_partial_sum_check: no window fits in [1, N]");
    double best = 0.0;
    for (std::size_t i = done.size() / 2; i < done.size(); ++i) best = std::max(best, done[i]);
    return best;
}

} // namespace sgdlab
