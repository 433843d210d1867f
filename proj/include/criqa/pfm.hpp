#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "criqa/error.hpp"
#include "criqa/image.hpp"

namespace criqa {

// Score maps persist as grayscale PFM ("Pf"), scale -1.0 (little-endian),
// scanlines bottom-to-top per the format convention. Payload is raw float32,
// so write/read round trips are bit-exact.

inline void write_pfm(const ScoreMap& map, const std::filesystem::path& path) {
    if (map.height <= 0 || map.width <= 0 ||
        map.data.size() != static_cast<std::size_t>(map.height) * map.width) {
        throw ValidationError("write_pfm: malformed map dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pfm: cannot open " + path.string());
    out << "Pf\n" << map.width << " " << map.height << "\n-1.0\n";
    for (int y = map.height - 1; y >= 0; --y) {
        out.write(reinterpret_cast<const char*>(&map.data[static_cast<std::size_t>(y) * map.width]),
                  static_cast<std::streamsize>(map.width) * 4);
    }
    if (!out) throw IoError("write_pfm: write failed for " + path.string());
}

namespace detail {

inline std::string next_pfm_token(std::istream& in, const std::string& path) {
    std::string tok;
    if (!(in >> tok)) throw IoError("read_pfm: truncated header in " + path);
    return tok;
}

}  // namespace detail

inline ScoreMap read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_pfm: cannot open " + path.string());

    const std::string magic = detail::next_pfm_token(in, path.string());
    if (magic != "Pf") {
        throw IoError("read_pfm: expected grayscale magic 'Pf', got '" + magic +
                      "' in " + path.string());
    }
    int width = 0, height = 0;
    double scale = 0.0;
    try {
        width = std::stoi(detail::next_pfm_token(in, path.string()));
        height = std::stoi(detail::next_pfm_token(in, path.string()));
        scale = std::stod(detail::next_pfm_token(in, path.string()));
    } catch (const std::exception&) {
        throw IoError("read_pfm: malformed header numbers in " + path.string());
    }
    if (width <= 0 || height <= 0 || scale == 0.0) {
        throw IoError("read_pfm: invalid header values in " + path.string());
    }
    // Exactly one whitespace byte separates the scale from the payload.
    in.get();
    const long long payload_start = static_cast<long long>(in.tellg());

    const std::size_t count = static_cast<std::size_t>(width) * height;
    std::vector<float> raw(count);
    const std::streamsize want = static_cast<std::streamsize>(count * 4);
    in.read(reinterpret_cast<char*>(raw.data()), want);
    if (in.gcount() != want) {
        throw IoError("read_pfm: truncated payload in " + path.string() + ": expected " +
                      std::to_string(want) + " bytes, got " + std::to_string(in.gcount()) +
                      " (failure at byte offset " +
                      std::to_string(payload_start + in.gcount()) + ")");
    }

    if (scale > 0.0) {  // big-endian payload
        for (float& v : raw) {
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            u = ((u & 0x000000FFu) << 24) | ((u & 0x0000FF00u) << 8) |
                ((u & 0x00FF0000u) >> 8) | ((u & 0xFF000000u) >> 24);
            std::memcpy(&v, &u, 4);
        }
    }

    ScoreMap map(height, width);
    for (int y = 0; y < height; ++y) {
        const float* src = &raw[static_cast<std::size_t>(height - 1 - y) * width];
        std::copy(src, src + width, &map.data[static_cast<std::size_t>(y) * width]);
    }
    return map;
}

/// JSON sidecar describing a persisted score map.
struct ScoreMapMeta {
    int height = 0;
    int width = 0;
    std::string source_image;
    std::string kind;
};

inline void write_score_map(const ScoreMap& map, const std::filesystem::path& path,
                            const std::string& source_image, const std::string& kind) {
    write_pfm(map, path);
    nlohmann::json j{{"height", map.height},
                     {"width", map.width},
                     {"source_image", source_image},
                     {"kind", kind}};
    std::ofstream out(path.string() + ".json");
    if (!out) throw IoError("write_score_map: cannot open sidecar for " + path.string());
    out << j.dump(2) << "\n";
}

inline ScoreMapMeta read_score_map_meta(const std::filesystem::path& pfm_path) {
    std::ifstream in(pfm_path.string() + ".json");
    if (!in) throw IoError("read_score_map_meta: missing sidecar for " + pfm_path.string());
    nlohmann::json j;
    try {
        in >> j;
        return ScoreMapMeta{j.at("height").get<int>(), j.at("width").get<int>(),
                            j.at("source_image").get<std::string>(),
                            j.at("kind").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
        throw IoError("read_score_map_meta: malformed sidecar for " + pfm_path.string() +
                      ": " + e.what());
    }
}

}  // namespace criqa
