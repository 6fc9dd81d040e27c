#pragma once

#include "sgdlab/error.hpp"
#include "sgdlab/fit.hpp"
#include "sgdlab/flow.hpp"
#include "sgdlab/stochastic.hpp"
#include "sgdlab/types.hpp"
#include "sgdlab/vectorfield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace sgdlab {

/// Piecewise-affine path through knots (τ_i, x_i). For a thinned trajectory
/// the path runs straight between stored knots, skipping unstored iterates.
class InterpolatedPath {
  public:
    InterpolatedPath() = default;

    InterpolatedPath(std::vector<double> tau, PointList points, std::optional<StepSchedule> schedule = {})
        : tau_(std::move(tau)), schedule_(schedule)
    {
        if (tau_.size() != points.size()) throw InvalidArgument("InterpolatedPath: knot count mismatch");
        if (tau_.size() < 2) throw InvalidArgument("InterpolatedPath: need at least 2 knots");
        dim_ = static_cast<int>(points.front().size());
        for (std::size_t i = 0; i < tau_.size(); ++i) {
            if (points[i].size() != dim_) throw InvalidArgument("InterpolatedPath: knots differ in dimension");
            if (i > 0 && !(tau_[i] > tau_[i - 1]))
                throw InvalidArgument("InterpolatedPath: knot times must be strictly increasing");
            coords_.insert(coords_.end(), points[i].data(), points[i].data() + dim_);
        }
    }

    int dimension() const noexcept { return dim_; }
    std::size_t knot_count() const noexcept { return tau_.size(); }
    double t_begin() const noexcept { return tau_.front(); }
    double t_end() const noexcept { return tau_.back(); }
    const std::vector<double>& knot_times() const noexcept { return tau_; }
    Eigen::Map<const Vector> knot(std::size_t i) const { return Eigen::Map<const Vector>(coords_.data() + i * dim_, dim_); }
    const std::optional<StepSchedule>& schedule() const noexcept { return schedule_; }

    Vector operator()(double t) const
    {
        if (!(t >= tau_.front() && t <= tau_.back()))
            throw InvalidArgument("InterpolatedPath: t outside [tau_0, tau_N]");
        auto it = std::upper_bound(tau_.begin(), tau_.end(), t);
        if (it == tau_.end()) return knot(tau_.size() - 1);
        const std::size_t j = static_cast<std::size_t>(it - tau_.begin());
        const std::size_t i = j - 1;
        if (t == tau_[i]) return knot(i);
        const double w = (t - tau_[i]) / (tau_[j] - tau_[i]);
        return (1.0 - w) * knot(i) + w * knot(j);
    }

  private:
    std::vector<double> tau_;
    std::vector<double> coords_;
    int dim_ = 0;
    std::optional<StepSchedule> schedule_;
};

inline InterpolatedPath interpolate(const Trajectory& traj)
{
    if (traj.size() < 2) throw InvalidArgument("interpolate: trajectory has fewer than 2 stored iterates");
    PointList pts;
    pts.reserve(traj.size());
    for (std::size_t i = 0; i < traj.size(); ++i) pts.emplace_back(traj.point(i));
    return InterpolatedPath(traj.tau, std::move(pts), traj.schedule);
}

struct DefectOptions {
    int h_points = 100;
    FlowIntegrator integrator{};
};

struct DefectSample {
    double defect = 0.0;
    /// Grid spacing in h and the resulting bound on the sup error:
    /// spacing · (max speed of X + max ||F|| along the flow).
    double h_spacing = 0.0;
    double sup_error_bound = 0.0;
};

/// sup_{0<=h<=T} ||X(t+h) - Φ_h(X(t))|| on h_points uniform values of h plus
/// every knot inside the window.
inline DefectSample apt_defect_sample(const InterpolatedPath& X, const GradientLikeSystem& sys, double t,
                                      double T, const DefectOptions& opt = {})
{
    if (!(T > 0.0)) throw InvalidArgument("apt_defect: T must be > 0");
    if (opt.h_points < 2) throw InvalidArgument("apt_defect: need at least 2 h points");
    if (X.dimension() != sys.dimension()) throw InvalidArgument("apt_defect: dimension mismatch");
    if (!(t >= X.t_begin() && t + T <= X.t_end()))
        throw InvalidArgument("apt_defect: window [t, t+T] outside the path domain");

    std::vector<double> hs = linspace(0.0, T, static_cast<std::size_t>(opt.h_points));
    const auto& kt = X.knot_times();
    auto lo = std::upper_bound(kt.begin(), kt.end(), t);
    auto hi = std::lower_bound(kt.begin(), kt.end(), t + T);
    for (auto it = lo; it != hi; ++it) hs.push_back(*it - t);
    std::sort(hs.begin(), hs.end());
    hs.erase(std::unique(hs.begin(), hs.end()), hs.end());

    const Vector x0 = X(t);
    const PointList phi = flow_path(sys, x0, hs, opt.integrator);
    DefectSample out;
    double speed_x = 0.0;
    double speed_f = 0.0;
    Vector prev = x0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
        const Vector xi = X(t + hs[i]);
        out.defect = std::max(out.defect, (xi - phi[i]).norm());
        if (i > 0 && hs[i] > hs[i - 1]) speed_x = std::max(speed_x, (xi - prev).norm() / (hs[i] - hs[i - 1]));
        speed_f = std::max(speed_f, sys.field(phi[i]).norm());
        prev = xi;
    }
    out.h_spacing = T / (opt.h_points - 1);
    out.sup_error_bound = out.h_spacing * (speed_x + speed_f);
    return out;
}

inline double apt_defect(const InterpolatedPath& X, const GradientLikeSystem& sys, double t, double T,
                         const DefectOptions& opt = {})
{
    return apt_defect_sample(X, sys, t, T, opt).defect;
}

struct ErrorRateOptions {
    /// e_hat below this with a negative trend is reported as e(X) = -inf.
    double minus_infinity_floor = -5.0;
    DefectOptions defect{};
};

struct ErrorRateEstimate {
    double e_hat = 0.0;
    double T = 0.0;
    std::vector<double> t_grid;
    std::vector<double> log_defect;
    double r2 = 0.0;
    /// -1/(2A) for a pure A/n schedule.
    std::optional<double> theoretical;
    /// Grid times where the defect was zero (excluded from the fit).
    std::vector<double> dropped;
    /// Slopes over the first and second halves of the usable grid.
    double early_slope = 0.0;
    double late_slope = 0.0;
    bool minus_infinity = false;
    double h_spacing = 0.0;
    double sup_error_bound = 0.0;
};

/// Least-squares slope of log δ(t) against t, δ(t) the APT defect with window T.
inline ErrorRateEstimate error_rate(const InterpolatedPath& X, const GradientLikeSystem& sys,
                                    const std::vector<double>& t_grid, double T,
                                    const ErrorRateOptions& opt = {})
{
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        if (!(t_grid[i] > t_grid[i - 1])) throw InvalidArgument("error_rate: t grid must be increasing");
    ErrorRateEstimate out;
    out.T = T;
    for (double t : t_grid) {
        const DefectSample s = apt_defect_sample(X, sys, t, T, opt.defect);
        out.h_spacing = s.h_spacing;
        out.sup_error_bound = std::max(out.sup_error_bound, s.sup_error_bound);
        if (s.defect > 0.0) {
            out.t_grid.push_back(t);
            out.log_defect.push_back(std::log(s.defect));
        } else {
            out.dropped.push_back(t);
        }
    }
    if (out.t_grid.size() < 5)
        throw EstimationError("error_rate: fewer than 5 grid points with positive defect");
    const LineFit f = fit_line(out.t_grid, out.log_defect);
    out.e_hat = f.slope;
    out.r2 = f.r2;
    const std::size_t h = out.t_grid.size() / 2;
    auto half = [&](std::size_t a, std::size_t b) {
        return fit_line(std::vector<double>(out.t_grid.begin() + a, out.t_grid.begin() + b),
                        std::vector<double>(out.log_defect.begin() + a, out.log_defect.begin() + b)).slope;
    };
    out.early_slope = half(0, h + 1);
    out.late_slope = half(h, out.t_grid.size());
    out.minus_infinity = out.e_hat < opt.minus_infinity_floor && out.late_slope < out.early_slope;
    if (X.schedule() && X.schedule()->harmonic()) out.theoretical = -1.0 / (2.0 * X.schedule()->A);
    return out;
}

struct LimitSetEstimate {
    PointList cloud;
    double diameter = 0.0;
    /// max over the cloud of the distance to the supplied critical sample.
    std::optional<double> distance_to_set;
};

/// Exact diameter of a point cloud. Points are visited in order of decreasing
/// distance from the centroid, which bounds every remaining pair.
inline double point_cloud_diameter(const PointList& pts)
{
    if (pts.size() < 2) return 0.0;
    Vector c = Vector::Zero(pts.front().size());
    for (const auto& p : pts) c += p;
    c /= static_cast<double>(pts.size());
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) order.emplace_back((pts[i] - c).norm(), i);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    double best2 = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const double ri = order[i].first;
        if (2.0 * ri <= std::sqrt(best2)) break;
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            const double bound = ri + order[j].first;
            if (bound * bound <= best2) break;
            best2 = std::max(best2, (pts[order[i].second] - pts[order[j].second]).squaredNorm());
        }
    }
    return std::sqrt(best2);
}

/// Last `tail_fraction` of the stored iterates as a proxy for the limit set.
inline LimitSetEstimate limit_set_estimate(const Trajectory& traj, double tail_fraction,
                                           const CriticalSetSample* C = nullptr)
{
    if (!(tail_fraction > 0.0 && tail_fraction <= 0.5))
        throw InvalidArgument("limit_set_estimate: tail fraction must lie in (0, 0.5]");
    if (traj.size() == 0) throw InvalidArgument("limit_set_estimate: empty trajectory");
    LimitSetEstimate out;
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(traj.size()))));
    for (std::size_t i = traj.size() - count; i < traj.size(); ++i) out.cloud.emplace_back(traj.point(i));
    out.diameter = point_cloud_diameter(out.cloud);
    if (C && !C->empty()) {
        double d = 0.0;
        for (const auto& p : out.cloud) d = std::max(d, C->distance(p));
        out.distance_to_set = d;
    }
    return out;
}

} // namespace sgdlab
