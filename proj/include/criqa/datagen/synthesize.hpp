#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "criqa/error.hpp"
#include "criqa/image.hpp"
#include "criqa/rng.hpp"

namespace criqa {

/// Geometric and photometric spread of synthesized views. Defaults give
/// clearly distinct yet overlapping views; identity() disables everything so
/// views reproduce the base.
struct JitterCfg {
    double corner_frac = 0.10;  // homography corner perturbation, fraction of extent
    double crop_frac = 0.90;    // retained extent per axis
    double gain_jitter = 0.10;  // multiplicative intensity swing
    double bias_jitter = 0.10;  // additive intensity swing

    static JitterCfg identity() { return JitterCfg{0.0, 1.0, 0.0, 0.0}; }

    void validate() const {
        if (corner_frac < 0.0 || corner_frac > 0.10) {
            throw ConfigError("JitterCfg: corner_frac must be in [0, 0.1]");
        }
        if (crop_frac <= 0.0 || crop_frac > 1.0) {
            throw ConfigError("JitterCfg: crop_frac must be in (0, 1]");
        }
        if (gain_jitter < 0.0 || bias_jitter < 0.0) {
            throw ConfigError("JitterCfg: jitter amounts must be non-negative");
        }
    }
};

struct ViewMeta {
    std::uint64_t seed = 0;
    std::string transform;
};

/// A multi-view capture of one piece of content: the pool references and
/// ground truths are drawn from.
struct Scene {
    std::string scene_id;
    std::vector<ImageGrid> views;
    std::vector<ViewMeta> view_metadata;
};

namespace synth_detail {

/// 3x3 map from output pixel coords to source coords, h33 fixed to 1.
using Homography = std::array<double, 9>;

constexpr Homography kIdentityH{1, 0, 0, 0, 1, 0, 0, 0, 1};

/// Direct linear transform from 4 point correspondences (x,y) -> (u,v).
inline Homography solve_homography(const std::array<double, 8>& xy,
                                   const std::array<double, 8>& uv) {
    Eigen::Matrix<double, 8, 8> A = Eigen::Matrix<double, 8, 8>::Zero();
    Eigen::Matrix<double, 8, 1> rhs;
    for (int i = 0; i < 4; ++i) {
        const double x = xy[2 * i], y = xy[2 * i + 1];
        const double u = uv[2 * i], v = uv[2 * i + 1];
        A(2 * i, 0) = x; A(2 * i, 1) = y; A(2 * i, 2) = 1;
        A(2 * i, 6) = -x * u; A(2 * i, 7) = -y * u;
        rhs(2 * i) = u;
        A(2 * i + 1, 3) = x; A(2 * i + 1, 4) = y; A(2 * i + 1, 5) = 1;
        A(2 * i + 1, 6) = -x * v; A(2 * i + 1, 7) = -y * v;
        rhs(2 * i + 1) = v;
    }
    const Eigen::Matrix<double, 8, 1> h = A.partialPivLu().solve(rhs);
    return Homography{h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0};
}

inline ImageGrid warp(const ImageGrid& src, const Homography& H) {
    ImageGrid out(src.height, src.width, src.channels);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            const double w = H[6] * x + H[7] * y + H[8];
            const double u = (H[0] * x + H[1] * y + H[2]) / w;
            const double v = (H[3] * x + H[4] * y + H[5]) / w;
            for (int c = 0; c < src.channels; ++c) {
                out.at(y, x, c) = static_cast<float>(bilinear_sample(src, v, u, c));
            }
        }
    }
    return out;
}

}  // namespace synth_detail

/// Produces n_views unregistered same-content views of `base`: mild random
/// homography, overlapping crop, photometric gain/bias, then an 8-bit lattice
/// snap so views equal their PNG persistence. A base already on the lattice
/// passes through an identity() config bit-exactly.
inline Scene synthesize_views(const ImageGrid& base, int n_views, std::uint64_t seed,
                              const JitterCfg& cfg = {}) {
    if (base.height < 256 || base.width < 256) {
        throw ValidationError("synthesize_views: base must be at least 256x256, got " +
                              std::to_string(base.height) + "x" + std::to_string(base.width));
    }
    if (n_views < 2) {
        throw ValidationError("synthesize_views: need at least 2 views");
    }
    cfg.validate();
    require_finite(base, "synthesize_views");

    const int crop_h = static_cast<int>(std::lround(base.height * cfg.crop_frac));
    const int crop_w = static_cast<int>(std::lround(base.width * cfg.crop_frac));

    Scene scene;
    scene.views.reserve(n_views);
    scene.view_metadata.reserve(n_views);
    for (int i = 0; i < n_views; ++i) {
        const std::uint64_t view_seed = derive_seed(seed, "view", i);
        Rng rng(view_seed);
        std::ostringstream desc;

        ImageGrid view;
        if (cfg.corner_frac == 0.0) {
            view = base;
            desc << "identity";
        } else {
            // Perturb where the output corners *sample from* in the base.
            const double W = base.width - 1.0, Hh = base.height - 1.0;
            const std::array<double, 8> out_corners{0, 0, W, 0, W, Hh, 0, Hh};
            std::array<double, 8> src_corners = out_corners;
            for (int k = 0; k < 8; ++k) {
                const double extent = (k % 2 == 0) ? W : Hh;
                src_corners[k] += rng.uniform(-cfg.corner_frac, cfg.corner_frac) * extent;
            }
            const auto H = synth_detail::solve_homography(out_corners, src_corners);
            view = synth_detail::warp(base, H);
            desc << "homography[";
            for (int k = 0; k < 8; ++k) desc << (k ? "," : "") << src_corners[k];
            desc << "]";
        }

        int oy = 0, ox = 0;
        if (crop_h < base.height) oy = rng.uniform_int(0, base.height - crop_h);
        if (crop_w < base.width) ox = rng.uniform_int(0, base.width - crop_w);
        if (crop_h != base.height || crop_w != base.width) {
            view = crop(view, oy, ox, crop_h, crop_w);
            desc << " crop(" << oy << "," << ox << "," << crop_h << "," << crop_w << ")";
        }

        const double gain = 1.0 + rng.uniform(-cfg.gain_jitter, cfg.gain_jitter);
        const double bias = rng.uniform(-cfg.bias_jitter, cfg.bias_jitter);
        for (float& v : view.data) {
            const double shifted = gain * v + bias;
            v = static_cast<float>(std::min(std::max(shifted, 0.0), 1.0));
        }
        desc << " gain=" << gain << " bias=" << bias;

        scene.views.push_back(quantize_unit8(std::move(view)));
        scene.view_metadata.push_back(ViewMeta{view_seed, desc.str()});
    }
    return scene;
}

/// Deterministic synthetic photograph stand-in: layered value noise for
/// texture plus random solid shapes for structure, on the 8-bit lattice.
inline ImageGrid make_procedural_base(std::uint64_t seed, int height, int width,
                                      int channels = 3) {
    if (height < 1 || width < 1 || channels < 1) {
        throw ValidationError("make_procedural_base: dimensions must be positive");
    }
    Rng rng(seed);

    // Layered value noise: random knots on coarsening grids, bilinear blowup.
    std::vector<double> lum(static_cast<std::size_t>(height) * width, 0.0);
    double amp = 1.0, amp_sum = 0.0;
    for (int octave = 0; octave < 3; ++octave) {
        const int step = std::max(2, std::min(height, width) >> (2 + 2 * octave));
        const int gh = height / step + 2, gw = width / step + 2;
        std::vector<double> knots(static_cast<std::size_t>(gh) * gw);
        for (double& k : knots) k = rng.uniform();
        for (int y = 0; y < height; ++y) {
            const double gy = static_cast<double>(y) / step;
            const int y0 = std::min(static_cast<int>(gy), gh - 2);
            const double fy = gy - y0;
            for (int x = 0; x < width; ++x) {
                const double gx = static_cast<double>(x) / step;
                const int x0 = std::min(static_cast<int>(gx), gw - 2);
                const double fx = gx - x0;
                const auto at = [&](int yy, int xx) {
                    return knots[static_cast<std::size_t>(yy) * gw + xx];
                };
                const double v =
                    (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                    fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                lum[static_cast<std::size_t>(y) * width + x] += amp * v;
            }
        }
        amp_sum += amp;
        amp *= 0.5;
    }
    for (double& v : lum) v /= amp_sum;

    ImageGrid img(height, width, channels);
    std::vector<double> tint(channels);
    for (double& t : tint) t = rng.uniform(0.6, 1.0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double v = lum[static_cast<std::size_t>(y) * width + x];
            for (int c = 0; c < channels; ++c) {
                img.at(y, x, c) = static_cast<float>(v * tint[c]);
            }
        }
    }

    // Solid rectangles and disks give the hard edges texture alone lacks.
    const int n_shapes = 10;
    for (int s = 0; s < n_shapes; ++s) {
        const bool disk = rng.uniform() < 0.5;
        const int cy = rng.uniform_int(0, height - 1);
        const int cx = rng.uniform_int(0, width - 1);
        const int ry = rng.uniform_int(height / 16, height / 5);
        const int rx = disk ? ry : rng.uniform_int(width / 16, width / 5);
        std::vector<double> color(channels);
        for (double& c : color) c = rng.uniform();
        const double alpha = rng.uniform(0.5, 1.0);
        for (int y = std::max(0, cy - ry); y < std::min(height, cy + ry + 1); ++y) {
            for (int x = std::max(0, cx - rx); x < std::min(width, cx + rx + 1); ++x) {
                if (disk) {
                    const double dy = static_cast<double>(y - cy) / ry;
                    const double dx = static_cast<double>(x - cx) / rx;
                    if (dy * dy + dx * dx > 1.0) continue;
                }
                for (int c = 0; c < channels; ++c) {
                    img.at(y, x, c) = static_cast<float>(
                        (1.0 - alpha) * img.at(y, x, c) + alpha * color[c]);
                }
            }
        }
    }
    return quantize_unit8(std::move(img));
}

}  // namespace criqa
