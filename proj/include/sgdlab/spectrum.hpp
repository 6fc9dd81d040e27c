#pragma once

#include "sgdlab/error.hpp"
#include "sgdlab/types.hpp"
#include "sgdlab/vectorfield.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sgdlab {

/// Which linearization defines Λ(p): eigenvalues of -D²V(p), or real parts of
/// the eigenvalues of DF(p). They coincide for pure gradient systems.
enum class SpectrumSource { hessian, jacobian };

inline constexpr double kEigenDedupTol = 1e-6;
inline constexpr double kCriticalGradientTol = 1e-6;

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct PointSpectrum {
    Vector point;
    std::vector<double> eigenvalues;
};

struct SpectrumReport {
    std::vector<PointSpectrum> per_point;
    /// Λ(C): sorted, deduplicated within kEigenDedupTol.
    std::vector<double> union_values;
    /// Externally supplied interval spectrum, sorted and disjoint.
    std::optional<std::vector<Interval>> spectrum_intervals;
    SpectrumSource source = SpectrumSource::hessian;
};

struct SpectralConditionVerdict {
    double A = 0.0;
    bool holds = false;
    std::optional<double> witness_mu;
    /// Distance from the witness to the spectrum; infinite for an empty one.
    double margin = 0.0;
};

/// Sorted merge with absolute dedup tolerance; clusters collapse onto their
/// first (smallest) member.
inline std::vector<double> dedup_sorted(std::vector<double> values, double tol = kEigenDedupTol)
{
    std::sort(values.begin(), values.end());
    std::vector<double> out;
    for (double v : values) {
        if (out.empty() || v - out.back() > tol) out.push_back(v);
    }
    return out;
}

/// Eigenvalues of -D²V(p), ascending.
inline std::vector<double> critical_spectrum(const Potential& V, const Vector& p)
{
    if (p.size() != V.dimension()) throw InvalidArgument("critical_spectrum: point has wrong dimension");
    const double g = V.gradient(p).norm();
    if (!(g <= kCriticalGradientTol))
        throw InvalidArgument("critical_spectrum: point is not critical (||grad V|| = " + std::to_string(g) + ")");
    Matrix H = V.hessian(p);
    H = 0.5 * (H + H.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(-H, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalFailure("critical_spectrum: eigensolver failed");
    std::vector<double> out(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    std::sort(out.begin(), out.end());
    return out;
}

/// Real parts of the eigenvalues of DF(p), ascending (with multiplicity).
inline std::vector<double> jacobian_spectrum(const GradientLikeSystem& sys, const Vector& p)
{
    if (p.size() != sys.dimension()) throw InvalidArgument("jacobian_spectrum: point has wrong dimension");
    const double f = sys.field(p).norm();
    if (!(f <= kCriticalGradientTol))
        throw InvalidArgument("jacobian_spectrum: point is not an equilibrium (||F|| = " + std::to_string(f) + ")");
    Eigen::EigenSolver<Matrix> es(sys.jacobian(p), false);
    if (es.info() != Eigen::Success) throw NumericalFailure("jacobian_spectrum: eigensolver failed");
    std::vector<double> out;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(es.eigenvalues()[i].real());
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

inline SpectrumReport merge_spectra(std::vector<PointSpectrum> per_point, SpectrumSource source)
{
    SpectrumReport r;
    r.source = source;
    std::vector<double> all;
    for (const auto& ps : per_point) all.insert(all.end(), ps.eigenvalues.begin(), ps.eigenvalues.end());
    r.union_values = dedup_sorted(std::move(all));
    r.per_point = std::move(per_point);
    return r;
}

} // namespace detail

/// Λ(C) = ∪ Λ(p) from -D²V.
inline SpectrumReport set_spectrum(const Potential& V, const CriticalSetSample& C)
{
    std::vector<PointSpectrum> pp;
    for (std::size_t i = 0; i < C.points.size(); ++i) {
        try {
            pp.push_back({C.points[i], critical_spectrum(V, C.points[i])});
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("set_spectrum: point " + std::to_string(i) + ": " + e.what());
        }
    }
    return detail::merge_spectra(std::move(pp), SpectrumSource::hessian);
}

/// Λ(C) from the chosen linearization.
inline SpectrumReport set_spectrum(const GradientLikeSystem& sys, const CriticalSetSample& C,
                                   SpectrumSource source)
{
    if (source == SpectrumSource::hessian) return set_spectrum(sys.lyapunov(), C);
    std::vector<PointSpectrum> pp;
    for (std::size_t i = 0; i < C.points.size(); ++i) {
        try {
            pp.push_back({C.points[i], jacobian_spectrum(sys, C.points[i])});
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("set_spectrum: point " + std::to_string(i) + ": " + e.what());
        }
    }
    return detail::merge_spectra(std::move(pp), SpectrumSource::jacobian);
}

/// A report holding only an interval spectrum [a1,b1] ∪ ... ∪ [ak,bk].
inline SpectrumReport interval_spectrum(std::vector<Interval> intervals)
{
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (!(intervals[i].lo <= intervals[i].hi))
            throw InvalidArgument("interval_spectrum: interval " + std::to_string(i) + " has lo > hi");
        if (i > 0 && !(intervals[i - 1].hi < intervals[i].lo))
            throw InvalidArgument("interval_spectrum: intervals must be sorted and disjoint");
    }
    SpectrumReport r;
    r.spectrum_intervals = std::move(intervals);
    return r;
}

/// Tests ]-1/(2A), 0[ ∩ R(C) ≠ ∅. R(C) is the complement of the point
/// spectrum and of any supplied intervals. The witness is the midpoint of the
/// widest open gap, which maximizes the distance to the spectrum and the
/// interval ends together.
inline SpectralConditionVerdict spectral_condition(const SpectrumReport& report, double A)
{
    if (!(A > 0.0)) throw InvalidArgument("spectral_condition: A must be > 0");
    SpectralConditionVerdict out;
    out.A = A;
    const double lo = -1.0 / (2.0 * A);
    const double hi = 0.0;

    std::vector<Interval> blocks;
    for (double v : report.union_values) blocks.push_back({v, v});
    if (report.spectrum_intervals)
        blocks.insert(blocks.end(), report.spectrum_intervals->begin(), report.spectrum_intervals->end());
    std::sort(blocks.begin(), blocks.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });

    // Sweep the open interval ]lo, hi[, collecting maximal open gaps.
    double cursor = lo;
    double best_width = 0.0;
    std::optional<std::pair<double, double>> best;
    auto consider = [&](double a, double b) {
        if (b - a > best_width) {
            best_width = b - a;
            best = {a, b};
        }
    };
    for (const auto& blk : blocks) {
        if (blk.hi <= cursor) continue;
        if (blk.lo >= hi) break;
        if (blk.lo > cursor) consider(cursor, blk.lo);
        cursor = std::max(cursor, blk.hi);
        if (cursor >= hi) break;
    }
    if (cursor < hi) consider(cursor, hi);

    if (!best) return out;
    out.holds = true;
    const double mu = 0.5 * (best->first + best->second);
    out.witness_mu = mu;
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& blk : blocks) {
        const double d = mu < blk.lo ? blk.lo - mu : (mu > blk.hi ? mu - blk.hi : 0.0);
        margin = std::min(margin, d);
    }
    out.margin = margin;
    return out;
}

struct InstabilityReport {
    std::vector<bool> per_point;
    bool all_unstable = false;
};

/// p is linearly unstable iff max Λ(p) > 1e-8; C is iff every point is.
inline InstabilityReport linear_instability_check(const GradientLikeSystem& sys, const CriticalSetSample& C,
                                                  SpectrumSource source = SpectrumSource::hessian)
{
    if (C.empty()) throw InvalidArgument("linear_instability_check: critical sample is empty");
    const SpectrumReport rep = set_spectrum(sys, C, source);
    InstabilityReport out;
    out.all_unstable = true;
    for (const auto& ps : rep.per_point) {
        const bool unstable = !ps.eigenvalues.empty() && ps.eigenvalues.back() > 1e-8;
        out.per_point.push_back(unstable);
        out.all_unstable = out.all_unstable && unstable;
    }
    return out;
}

} // namespace sgdlab
