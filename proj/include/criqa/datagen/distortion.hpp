#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "criqa/error.hpp"
#include "criqa/image.hpp"
#include "criqa/rng.hpp"
#include "criqa/ssim.hpp"

namespace criqa {

enum class DistortionKind {
    gaussian_blur,
    additive_noise,
    block_artifact,
    elastic_warp,
    intensity_shift,
    mixture,
};

inline std::string to_string(DistortionKind kind) {
    switch (kind) {
        case DistortionKind::gaussian_blur: return "gaussian_blur";
        case DistortionKind::additive_noise: return "additive_noise";
        case DistortionKind::block_artifact: return "block_artifact";
        case DistortionKind::elastic_warp: return "elastic_warp";
        case DistortionKind::intensity_shift: return "intensity_shift";
        case DistortionKind::mixture: return "mixture";
    }
    throw ValidationError("unknown distortion kind value " +
                          std::to_string(static_cast<int>(kind)));
}

inline DistortionKind distortion_kind_from_string(const std::string& name) {
    if (name == "gaussian_blur") return DistortionKind::gaussian_blur;
    if (name == "additive_noise") return DistortionKind::additive_noise;
    if (name == "block_artifact") return DistortionKind::block_artifact;
    if (name == "elastic_warp") return DistortionKind::elastic_warp;
    if (name == "intensity_shift") return DistortionKind::intensity_shift;
    if (name == "mixture") return DistortionKind::mixture;
    throw ValidationError("unknown distortion kind '" + name + "'");
}

struct DistortionSpec {
    DistortionKind kind = DistortionKind::gaussian_blur;
    double severity = 0.0;  // 0 = identity, 1 = strongest
    std::uint64_t seed = 0;
};

// Severity-to-parameter mapping. Scaling a fixed seeded perturbation by
// severity (rather than redrawing per severity) is what makes the mean-SSIM
// monotonicity contract hold per (kind, seed).
namespace distort_detail {

constexpr double kBlurSigmaMax = 8.0;      // px at severity 1
constexpr double kNoiseStdMax = 0.25;      // additive Gaussian, unit range
constexpr int kBlockSize = 8;              // px, mosaic cell
constexpr double kElasticDispMax = 6.0;    // px at severity 1
constexpr int kElasticGridStep = 24;       // px between displacement knots
constexpr double kShiftGainMax = 0.35;     // relative gain swing at severity 1
constexpr double kShiftBiasMax = 0.25;     // additive swing at severity 1

inline ImageGrid gaussian_blur(const ImageGrid& img, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    const std::vector<double> taps = detail::gaussian_taps(2 * radius + 1, sigma);
    const std::size_t n = img.pixel_count();
    std::vector<double> plane(n), tmp, filtered;
    ImageGrid out(img.height, img.width, img.channels);
    for (int c = 0; c < img.channels; ++c) {
        for (std::size_t i = 0; i < n; ++i) plane[i] = img.data[i * img.channels + c];
        detail::filter_plane(plane, img.height, img.width, taps, tmp, filtered);
        for (std::size_t i = 0; i < n; ++i) {
            out.data[i * img.channels + c] = static_cast<float>(filtered[i]);
        }
    }
    return out;
}

inline ImageGrid additive_noise(const ImageGrid& img, double stddev, std::uint64_t seed) {
    Rng rng(seed);
    ImageGrid out(img.height, img.width, img.channels);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        out.data[i] = static_cast<float>(img.data[i] + stddev * rng.normal());
    }
    return out;
}

inline ImageGrid block_artifact(const ImageGrid& img, double blend) {
    ImageGrid out(img.height, img.width, img.channels);
    for (int by = 0; by < img.height; by += kBlockSize) {
        for (int bx = 0; bx < img.width; bx += kBlockSize) {
            const int y1 = std::min(by + kBlockSize, img.height);
            const int x1 = std::min(bx + kBlockSize, img.width);
            for (int c = 0; c < img.channels; ++c) {
                double sum = 0.0;
                for (int y = by; y < y1; ++y)
                    for (int x = bx; x < x1; ++x) sum += img.at(y, x, c);
                const double mean = sum / ((y1 - by) * (x1 - bx));
                for (int y = by; y < y1; ++y)
                    for (int x = bx; x < x1; ++x) {
                        out.at(y, x, c) =
                            static_cast<float>((1.0 - blend) * img.at(y, x, c) + blend * mean);
                    }
            }
        }
    }
    return out;
}

inline ImageGrid elastic_warp(const ImageGrid& img, double amplitude, std::uint64_t seed) {
    // Coarse knot grid of random unit displacements, bilinearly upsampled into a
    // smooth field, scaled by amplitude. Same seed => same field direction, so
    // severity only stretches it.
    const int gh = img.height / kElasticGridStep + 2;
    const int gw = img.width / kElasticGridStep + 2;
    Rng rng(seed);
    std::vector<double> dy(static_cast<std::size_t>(gh) * gw), dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) {
        dy[i] = rng.uniform(-1.0, 1.0);
        dx[i] = rng.uniform(-1.0, 1.0);
    }
    auto knot = [&](const std::vector<double>& d, double y, double x) {
        const double gy = y / kElasticGridStep, gx = x / kElasticGridStep;
        const int y0 = std::min(static_cast<int>(gy), gh - 2);
        const int x0 = std::min(static_cast<int>(gx), gw - 2);
        const double fy = gy - y0, fx = gx - x0;
        const auto idx = [&](int yy, int xx) { return static_cast<std::size_t>(yy) * gw + xx; };
        return (1.0 - fy) * ((1.0 - fx) * d[idx(y0, x0)] + fx * d[idx(y0, x0 + 1)]) +
               fy * ((1.0 - fx) * d[idx(y0 + 1, x0)] + fx * d[idx(y0 + 1, x0 + 1)]);
    };
    ImageGrid out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double sy = y + amplitude * knot(dy, y, x);
            const double sx = x + amplitude * knot(dx, y, x);
            for (int c = 0; c < img.channels; ++c) {
                out.at(y, x, c) = static_cast<float>(bilinear_sample(img, sy, sx, c));
            }
        }
    }
    return out;
}

inline ImageGrid intensity_shift(const ImageGrid& img, double severity, std::uint64_t seed) {
    // Per-channel affine shift whose direction is fixed by the seed and whose
    // magnitude scales with severity.
    Rng rng(seed);
    std::vector<double> gain(img.channels), bias(img.channels);
    for (int c = 0; c < img.channels; ++c) {
        gain[c] = 1.0 + kShiftGainMax * severity * rng.uniform(-1.0, 1.0);
        bias[c] = kShiftBiasMax * severity * rng.uniform(-1.0, 1.0);
    }
    ImageGrid out(img.height, img.width, img.channels);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const int c = static_cast<int>(i % img.channels);
        out.data[i] = static_cast<float>(gain[c] * img.data[i] + bias[c]);
    }
    return out;
}

}  // namespace distort_detail

/// Applies `spec` to `img`. Severity 0 returns the input bit-exactly; any
/// other severity produces a [0,1]-clamped image snapped to the 8-bit lattice,
/// so the in-memory result equals its PNG persistence.
inline ImageGrid apply_distortion(const ImageGrid& img, const DistortionSpec& spec) {
    if (!(spec.severity >= 0.0 && spec.severity <= 1.0)) {
        throw ValidationError("apply_distortion: severity must be in [0,1], got " +
                              std::to_string(spec.severity));
    }
    if (img.pixel_count() == 0) throw ValidationError("apply_distortion: empty image");
    require_finite(img, "apply_distortion");
    if (spec.severity == 0.0) return img;

    namespace dd = distort_detail;
    ImageGrid out;
    switch (spec.kind) {
        case DistortionKind::gaussian_blur:
            out = dd::gaussian_blur(img, dd::kBlurSigmaMax * spec.severity);
            break;
        case DistortionKind::additive_noise:
            out = dd::additive_noise(img, dd::kNoiseStdMax * spec.severity,
                                     derive_seed(spec.seed, "noise"));
            break;
        case DistortionKind::block_artifact:
            out = dd::block_artifact(img, spec.severity);
            break;
        case DistortionKind::elastic_warp:
            out = dd::elastic_warp(img, dd::kElasticDispMax * spec.severity,
                                   derive_seed(spec.seed, "elastic"));
            break;
        case DistortionKind::intensity_shift:
            out = dd::intensity_shift(img, spec.severity, derive_seed(spec.seed, "shift"));
            break;
        case DistortionKind::mixture: {
            // Blur, then structured blocking, then noise — each at a reduced
            // severity so the composite stays comparable to the single kinds.
            out = dd::gaussian_blur(img, dd::kBlurSigmaMax * 0.5 * spec.severity);
            out = dd::block_artifact(out, 0.4 * spec.severity);
            out = dd::additive_noise(out, dd::kNoiseStdMax * 0.5 * spec.severity,
                                     derive_seed(spec.seed, "mixture-noise"));
            break;
        }
        default:
            throw ValidationError("apply_distortion: unknown distortion kind value " +
                                  std::to_string(static_cast<int>(spec.kind)));
    }
    return quantize_unit8(std::move(out));  // clamps to [0,1] as part of the snap
}

}  // namespace criqa
