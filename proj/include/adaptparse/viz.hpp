#pragma once

#include <filesystem>

#include "adaptparse/tensor.hpp"

namespace adaptparse {

/// Color-codes a u8 [H,W] label map with a fixed palette (4- and 12-class
/// palettes built in) and writes an uncompressed 24-bit BMP. Inspection
/// output only.
void write_label_bmp(const Tensor& labels, const std::filesystem::path& path);

/// Writes an f32 [3,H,W] image in [0,1] as a 24-bit BMP.
void write_image_bmp(const Tensor& image, const std::filesystem::path& path);

}  // namespace adaptparse
