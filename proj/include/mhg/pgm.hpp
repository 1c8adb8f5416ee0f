#pragma once

#include <string>

#include "mhg/core.hpp"

namespace mhg {

// Binary PGM (P5), maxval <= 255. Pixel values are organ class ids for masks
// and round(255 * intensity) for images.
LabelMask load_pgm(const std::string& path);
void save_pgm(const LabelMask& mask, const std::string& path);

ImageGrid load_pgm_image(const std::string& path);   // values / 255
void save_pgm_image(const ImageGrid& img, const std::string& path);

}  // namespace mhg
