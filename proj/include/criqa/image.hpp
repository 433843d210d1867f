#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "criqa/error.hpp"

namespace criqa {

/// H x W x C grid of unit-interval intensities, row-major, channel-interleaved.
/// The universal image currency: queries, ground truths, reference views.
struct ImageGrid {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<float> data;

    ImageGrid() = default;
    ImageGrid(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    std::size_t pixel_count() const {
        return static_cast<std::size_t>(height) * width;
    }
    bool same_shape(const ImageGrid& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

/// H x W single-channel map of quality scores, row-major.
struct ScoreMap {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    ScoreMap() = default;
    ScoreMap(int h, int w, float fill = 0.0f)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    float& at(int y, int x) {
        return data[static_cast<std::size_t>(y) * width + x];
    }
    float at(int y, int x) const {
        return data[static_cast<std::size_t>(y) * width + x];
    }
    bool same_shape(const ScoreMap& o) const {
        return height == o.height && width == o.width;
    }
};

/// Boolean pixel selector for masked statistics.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int h, int w, bool fill = false)
        : height(h), width(w),
          data(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

    std::uint8_t& at(int y, int x) {
        return data[static_cast<std::size_t>(y) * width + x];
    }
    bool at(int y, int x) const {
        return data[static_cast<std::size_t>(y) * width + x] != 0;
    }
};

inline void require_finite(const ImageGrid& img, const std::string& name) {
    for (float v : img.data) {
        if (!std::isfinite(v)) {
            throw ValidationError(name + ": non-finite pixel value");
        }
    }
}

/// Clamp every score into [0, 1]. Idempotent.
inline ScoreMap clamp_unit(ScoreMap map) {
    for (float& v : map.data) {
        if (!std::isfinite(v)) throw ValidationError("clamp_unit: non-finite value");
        v = std::min(std::max(v, 0.0f), 1.0f);
    }
    return map;
}

/// Arithmetic mean over selected pixels (all pixels when mask is null).
inline double mean_score(const ScoreMap& map, const Mask* mask = nullptr) {
    if (map.data.empty()) throw ValidationError("mean_score: empty map");
    double sum = 0.0;
    std::size_t n = 0;
    if (mask == nullptr) {
        for (float v : map.data) sum += v;
        n = map.data.size();
    } else {
        if (mask->height != map.height || mask->width != map.width) {
            throw ShapeError("mean_score: mask dimensions do not match map");
        }
        for (std::size_t i = 0; i < map.data.size(); ++i) {
            if (mask->data[i]) {
                sum += map.data[i];
                ++n;
            }
        }
        if (n == 0) throw ValidationError("mean_score: mask selects no pixels");
    }
    return sum / static_cast<double>(n);
}

/// The single [0,1]→byte conversion used everywhere an intensity is written
/// to 8-bit storage; quantize_unit8 and the PNG writer share it so an
/// in-memory quantized image equals its persisted form bit-for-bit.
inline std::uint8_t unit_to_byte(float v) {
    const float c = std::min(std::max(v, 0.0f), 1.0f);
    return static_cast<std::uint8_t>(c * 255.0f + 0.5f);
}

/// Snap intensities to the 8-bit lattice k/255. This is exactly what an
/// 8-bit PNG round trip does, so images stored to disk reload bit-identical.
inline ImageGrid quantize_unit8(ImageGrid img) {
    for (float& v : img.data) {
        v = static_cast<float>(unit_to_byte(v)) / 255.0f;
    }
    return img;
}

/// Bilinear lookup at fractional coordinates, clamp-to-edge outside the
/// border. Integer coordinates reproduce the stored value bit-exactly.
inline double bilinear_sample(const ImageGrid& img, double y, double x, int c) {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    auto at = [&](int yy, int xx) {
        yy = std::min(std::max(yy, 0), img.height - 1);
        xx = std::min(std::max(xx, 0), img.width - 1);
        return static_cast<double>(img.at(yy, xx, c));
    };
    return (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
           fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

/// Rectangular crop, bounds-checked.
inline ImageGrid crop(const ImageGrid& img, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > img.height ||
        x0 + w > img.width) {
        throw ValidationError("crop: window outside image bounds");
    }
    ImageGrid out(h, w, img.channels);
    for (int y = 0; y < h; ++y) {
        const float* src = &img.data[(static_cast<std::size_t>(y0 + y) * img.width + x0) *
                                     img.channels];
        float* dst = &out.data[static_cast<std::size_t>(y) * w * img.channels];
        std::copy(src, src + static_cast<std::size_t>(w) * img.channels, dst);
    }
    return out;
}

inline ScoreMap crop(const ScoreMap& map, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > map.height ||
        x0 + w > map.width) {
        throw ValidationError("crop: window outside map bounds");
    }
    ScoreMap out(h, w);
    for (int y = 0; y < h; ++y) {
        const float* src = &map.data[static_cast<std::size_t>(y0 + y) * map.width + x0];
        std::copy(src, src + w, &out.data[static_cast<std::size_t>(y) * w]);
    }
    return out;
}

/// Largest centered window whose sides are multiples of `unit`.
/// Returns {y0, x0, h, w}; throws when the image is smaller than one unit.
struct CropRect {
    int y0 = 0, x0 = 0, height = 0, width = 0;
};

inline CropRect center_crop_rect(int height, int width, int unit) {
    const int h = (height / unit) * unit;
    const int w = (width / unit) * unit;
    if (h == 0 || w == 0) {
        throw ShapeError("image smaller than one patch; cannot crop to a multiple of " +
                         std::to_string(unit));
    }
    return CropRect{(height - h) / 2, (width - w) / 2, h, w};
}

}  // namespace criqa
