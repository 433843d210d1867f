#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "criqa/error.hpp"
#include "criqa/image.hpp"

namespace criqa {

// 8-bit PNG I/O over libpng's simplified API. Pixel values map linearly
// between [0,1] floats and [0,255] bytes; round-half-away on write matches
// quantize_unit8 so a quantized grid survives a write/read cycle unchanged.

inline void write_png(const ImageGrid& image, const std::filesystem::path& path) {
    if (image.channels != 1 && image.channels != 3) {
        throw ValidationError("write_png: supports 1 or 3 channels, got " +
                              std::to_string(image.channels));
    }
    if (image.pixel_count() == 0) throw ValidationError("write_png: empty image");
    require_finite(image, "write_png");

    const std::size_t n = image.data.size();
    std::vector<std::uint8_t> bytes(n);
    for (std::size_t i = 0; i < n; ++i) bytes[i] = unit_to_byte(image.data[i]);

    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

    if (!png_image_write_to_file(&png, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
        throw IoError("write_png: " + path.string() + ": " + png.message);
    }
}

inline ImageGrid read_png(const std::filesystem::path& path) {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
        throw IoError("read_png: " + path.string() + ": " + png.message);
    }
    const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
    png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;

    const int channels = gray ? 1 : 3;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
        throw IoError("read_png: " + path.string() + ": " + png.message);
    }

    ImageGrid image(static_cast<int>(png.height), static_cast<int>(png.width), channels);
    const std::size_t n = image.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        image.data[i] = static_cast<float>(bytes[i]) / 255.0f;
    }
    return image;
}

}  // namespace criqa
