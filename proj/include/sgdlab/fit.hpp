#pragma once

#include "sgdlab/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace sgdlab {

/// Ordinary least-squares line y = slope·x + intercept.
struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size()) throw InvalidArgument("fit_line: x and y differ in length");
    if (x.size() < 2) throw EstimationError("fit_line: need at least 2 points");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (!(sxx > 0.0)) throw EstimationError("fit_line: x values are all equal");
    LineFit f;
    f.n = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return f;
}

inline double median(std::vector<double> v)
{
    if (v.empty()) throw InvalidArgument("median: empty input");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline std::vector<double> linspace(double a, double b, std::size_t n)
{
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    if (n > 1) out.back() = b;
    return out;
}

inline std::vector<double> logspace(double a, double b, std::size_t n)
{
    if (!(a > 0.0 && b > 0.0)) throw InvalidArgument("logspace: bounds must be > 0");
    auto out = linspace(std::log(a), std::log(b), n);
    for (auto& v : out) v = std::exp(v);
    if (n > 0) out.front() = a;
    if (n > 1) out.back() = b;
    return out;
}

} // namespace sgdlab
