#pragma once

#include <cstdint>
#include <vector>

namespace retriage {

/// 8-bit RGB image, interleaved row-major. The unit of ingestion,
/// preprocessing and augmentation.
struct RawImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // size = width * height * 3, RGB order

    RawImage() = default;
    RawImage(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::uint8_t& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    bool in_bounds(int y, int x) const {
        return y >= 0 && y < height && x >= 0 && x < width;
    }

    bool operator==(const RawImage&) const = default;
};

/// Floating-point image with the same interleaved layout; intermediate
/// result of blurring and background subtraction.
struct ImageF {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    ImageF() = default;
    ImageF(int w, int h, float fill = 0.0f)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    float& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

/// ITU-R 601 luma, the grayscale convention used for retina masking.
/// Returns the rounded 0..255 level.
int luma601(std::uint8_t r, std::uint8_t g, std::uint8_t b);

ImageF to_float(const RawImage& img);

}  // namespace retriage
