#include "retriage/image.hpp"

#include <cmath>

namespace retriage {

int luma601(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return static_cast<int>(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
}

ImageF to_float(const RawImage& img) {
    ImageF out(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        out.data[i] = static_cast<float>(img.data[i]);
    return out;
}

}  // namespace retriage
