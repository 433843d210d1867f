#pragma once

#include <cmath>
#include <limits>

#include "criqa/error.hpp"
#include "criqa/image.hpp"

namespace criqa {

/// Peak signal-to-noise ratio in dB over all pixels and channels, peak 1.0.
/// Identical images have zero MSE and return the infinity sentinel; batch
/// tables treat that as a value, not an error.
inline double psnr(const ImageGrid& query, const ImageGrid& truth) {
    if (!query.same_shape(truth)) {
        throw ShapeError("psnr: query and truth dimensions differ");
    }
    if (query.data.empty()) throw ValidationError("psnr: empty image");
    require_finite(query, "psnr: query");
    require_finite(truth, "psnr: truth");

    double se = 0.0;
    for (std::size_t i = 0; i < query.data.size(); ++i) {
        const double d = static_cast<double>(query.data[i]) - truth.data[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(query.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace criqa
