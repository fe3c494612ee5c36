#pragma once

#include <string>

#include "retriage/image.hpp"

namespace retriage::pngio {

/// Read a PNG file as 8-bit RGB (palette/gray/alpha inputs are expanded).
RawImage read_png(const std::string& path);

void write_png(const std::string& path, const RawImage& img);

}  // namespace retriage::pngio
