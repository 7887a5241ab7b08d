#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "adaptparse/tensor.hpp"

namespace adaptparse {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// .ckpt layout: magic "CKPT", version byte 0x01, u64-le record count, then
// per record a u64-le name length, the UTF-8 name, and the tensor in .tsr
// form. Record order is preserved, so equal states give equal files.

void checkpoint_write(const NamedTensors& records, const std::filesystem::path& path);
NamedTensors checkpoint_read(const std::filesystem::path& path);

/// Lookup helper; throws IoError naming the tensor when absent.
const Tensor& checkpoint_find(const NamedTensors& records, const std::string& name);

}  // namespace adaptparse
