#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "criqa/error.hpp"
#include "criqa/image.hpp"

namespace criqa {

/// Standard SSIM constants for unit-interval images. C1 = (k1*L)^2,
/// C2 = (k2*L)^2.
struct SsimParams {
    int window_size = 11;
    double gaussian_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;

    void validate() const {
        if (window_size <= 0 || window_size % 2 == 0) {
            throw ValidationError("SsimParams: window_size must be odd and positive");
        }
        if (gaussian_sigma <= 0.0 || k1 <= 0.0 || k2 <= 0.0 || dynamic_range <= 0.0) {
            throw ValidationError("SsimParams: sigma, k1, k2, dynamic_range must be positive");
        }
    }
    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

inline void to_json(nlohmann::json& j, const SsimParams& p) {
    j = nlohmann::json{{"window_size", p.window_size},
                       {"gaussian_sigma", p.gaussian_sigma},
                       {"k1", p.k1},
                       {"k2", p.k2},
                       {"dynamic_range", p.dynamic_range}};
}

inline void from_json(const nlohmann::json& j, SsimParams& p) {
    j.at("window_size").get_to(p.window_size);
    j.at("gaussian_sigma").get_to(p.gaussian_sigma);
    j.at("k1").get_to(p.k1);
    j.at("k2").get_to(p.k2);
    j.at("dynamic_range").get_to(p.dynamic_range);
}

namespace detail {

/// Symmetric reflection with the edge sample repeated: -1 -> 0, n -> n-1.
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

inline std::vector<double> gaussian_taps(int size, double sigma) {
    std::vector<double> taps(size);
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        taps[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        sum += taps[i];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

/// Separable filter with reflection padding; `in` and `out` are h*w planes.
inline void filter_plane(const std::vector<double>& in, int h, int w,
                         const std::vector<double>& taps,
                         std::vector<double>& tmp, std::vector<double>& out) {
    const int half = static_cast<int>(taps.size()) / 2;
    tmp.resize(in.size());
    out.resize(in.size());
    for (int y = 0; y < h; ++y) {
        const double* row = &in[static_cast<std::size_t>(y) * w];
        double* trow = &tmp[static_cast<std::size_t>(y) * w];
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -half; k <= half; ++k) {
                acc += taps[k + half] * row[reflect_index(x + k, w)];
            }
            trow[x] = acc;
        }
    }
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            double acc = 0.0;
            for (int k = -half; k <= half; ++k) {
                acc += taps[k + half] * tmp[static_cast<std::size_t>(reflect_index(y + k, h)) * w + x];
            }
            out[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
}

}  // namespace detail

/// Per-pixel SSIM of `query` against `truth`: Gaussian-weighted local
/// statistics per channel, averaged across channels. Reflection padding keeps
/// the map at full H x W extent.
inline ScoreMap ssim_map(const ImageGrid& query, const ImageGrid& truth,
                         const SsimParams& params = {}) {
    params.validate();
    if (!query.same_shape(truth)) {
        throw ShapeError("ssim_map: query and truth dimensions differ");
    }
    if (query.data.empty()) throw ValidationError("ssim_map: empty image");
    require_finite(query, "ssim_map: query");
    require_finite(truth, "ssim_map: truth");

    const int h = query.height, w = query.width, nc = query.channels;
    const double c1 = params.c1(), c2 = params.c2();
    const std::vector<double> taps =
        detail::gaussian_taps(params.window_size, params.gaussian_sigma);

    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    std::vector<double> mx, my, mxx, myy, mxy, tmp;
    std::vector<double> acc(n, 0.0);

    for (int c = 0; c < nc; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            const double xv = query.data[i * nc + c];
            const double yv = truth.data[i * nc + c];
            x[i] = xv;
            y[i] = yv;
            xx[i] = xv * xv;
            yy[i] = yv * yv;
            xy[i] = xv * yv;
        }
        detail::filter_plane(x, h, w, taps, tmp, mx);
        detail::filter_plane(y, h, w, taps, tmp, my);
        detail::filter_plane(xx, h, w, taps, tmp, mxx);
        detail::filter_plane(yy, h, w, taps, tmp, myy);
        detail::filter_plane(xy, h, w, taps, tmp, mxy);
        for (std::size_t i = 0; i < n; ++i) {
            const double mux = mx[i], muy = my[i];
            const double sx = mxx[i] - mux * mux;
            const double sy = myy[i] - muy * muy;
            const double sxy = mxy[i] - mux * muy;
            const double num = (2.0 * mux * muy + c1) * (2.0 * sxy + c2);
            const double den = (mux * mux + muy * muy + c1) * (sx + sy + c2);
            acc[i] += num / den;
        }
    }

    ScoreMap out(h, w);
    for (std::size_t i = 0; i < n; ++i) {
        out.data[i] = static_cast<float>(acc[i] / nc);
    }
    return out;
}

}  // namespace criqa
