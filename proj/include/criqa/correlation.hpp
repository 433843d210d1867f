#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "criqa/error.hpp"

namespace criqa {

namespace detail {

/// Drop pairs where either entry is NaN; warn when anything was dropped.
inline void pairwise_finite(const std::vector<double>& x,
                            const std::vector<double>& y,
                            std::vector<double>& fx, std::vector<double>& fy,
                            const char* caller) {
    std::size_t skipped = 0;
    fx.clear();
    fy.clear();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) || std::isnan(y[i])) {
            ++skipped;
            continue;
        }
        fx.push_back(x[i]);
        fy.push_back(y[i]);
    }
    if (skipped > 0) {
        warn(std::string(caller) + ": skipped " + std::to_string(skipped) +
             " pair(s) with NaN entries");
    }
}

}  // namespace detail

/// Sample Pearson correlation coefficient. NaN entries are skipped pairwise
/// with a warning; a constant series has no defined correlation.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("pearson: series lengths differ");
    if (x.size() < 2) {
        throw UndefinedCorrelationError("pearson: need at least 2 points");
    }

    std::vector<double> fx, fy;
    detail::pairwise_finite(x, y, fx, fy, "pearson");
    const std::size_t n = fx.size();
    if (n < 2) {
        throw UndefinedCorrelationError("pearson: fewer than 2 usable pairs after NaN skip");
    }

    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += fx[i];
        my += fy[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);

    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = fx[i] - mx;
        const double dy = fy[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw UndefinedCorrelationError("pearson: a series has zero variance");
    }
    const double r = sxy / std::sqrt(sxx * syy);
    return std::min(1.0, std::max(-1.0, r));
}

/// Fractional ranks (1-based), ties averaged.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

/// Spearman's rank correlation: Pearson of the rank vectors, ties averaged.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("spearman: series lengths differ");
    if (x.size() < 2) {
        throw UndefinedCorrelationError("spearman: need at least 2 points");
    }

    std::vector<double> fx, fy;
    detail::pairwise_finite(x, y, fx, fy, "spearman");
    if (fx.size() < 2) {
        throw UndefinedCorrelationError("spearman: fewer than 2 usable pairs after NaN skip");
    }
    return pearson(average_ranks(fx), average_ranks(fy));
}

}  // namespace criqa
