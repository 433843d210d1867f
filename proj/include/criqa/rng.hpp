#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace criqa {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h) {
    for (int i = 0; i < 8; ++i) {
        h ^= static_cast<unsigned char>(v >> (8 * i));
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Stable per-artifact seed: every generated object is a pure function of
/// (root seed, string tag, index). Parallel and serial generation agree
/// because workers never share an engine.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t index = 0) {
    std::uint64_t h = fnv1a64(tag);
    h = fnv1a64_u64(root, h);
    h = fnv1a64_u64(index, h);
    return splitmix64(h);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::string_view subtag,
                                 std::uint64_t index = 0) {
    std::uint64_t h = fnv1a64(tag);
    h ^= splitmix64(fnv1a64(subtag));
    h = fnv1a64_u64(root, h);
    h = fnv1a64_u64(index, h);
    return splitmix64(h);
}

/// mt19937_64 with hand-rolled value mappings. The engine's output sequence
/// is pinned by the standard; the distributions in <random> are not, so the
/// mappings below keep streams identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi], inclusive, unbiased by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1ull;
        if (range == 0) return static_cast<std::int64_t>(eng_());  // full range
        const std::uint64_t limit =
            std::numeric_limits<std::uint64_t>::max() -
            std::numeric_limits<std::uint64_t>::max() % range;
        std::uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return lo + static_cast<std::int64_t>(x % range);
    }

    /// Standard normal via Box-Muller, one spare cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Normal truncated to [-2s, 2s], the usual transformer init.
    double trunc_normal(double stddev) {
        double v = normal();
        while (std::abs(v) > 2.0) v = normal();
        return v * stddev;
    }

    std::string serialize_state() const {
        std::ostringstream os;
        os.precision(std::numeric_limits<double>::max_digits10);
        os << eng_;
        if (has_spare_) os << " 1 " << spare_;
        else os << " 0";
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        int flag = 0;
        is >> flag;
        has_spare_ = (flag == 1);
        if (has_spare_) is >> spare_;
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace criqa
