#pragma once

#include <filesystem>
#include <iosfwd>

#include "adaptparse/tensor.hpp"

namespace adaptparse {

// .tsr layout: magic "TNSR", version byte 0x01, dtype byte (0=f32, 1=u8,
// 2=f64), rank byte, 4 zero pad bytes, rank x u64 little-endian dims,
// row-major little-endian payload. No compression.

void tensor_write(const Tensor& t, std::ostream& os);
void tensor_write(const Tensor& t, const std::filesystem::path& path);

Tensor tensor_read(std::istream& is);
Tensor tensor_read(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace adaptparse
