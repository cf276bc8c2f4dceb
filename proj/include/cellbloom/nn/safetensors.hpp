#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "cellbloom/nn/tensor.hpp"

namespace cellbloom::nn {

// Named-tensor container in the safetensors layout: an 8-byte little-endian
// header length, a JSON header of {name: {dtype, shape, data_offsets}}, then
// the raw little-endian payload. Only F32 and F64 are produced or accepted.
using TensorMap = std::map<std::string, Tensor<float>>;

void save_safetensors(const std::filesystem::path& path, const TensorMap& tensors,
                      const std::map<std::string, std::string>& metadata = {});

// F64 entries are narrowed to float on load.
TensorMap load_safetensors(const std::filesystem::path& path);

std::map<std::string, std::string> load_safetensors_metadata(const std::filesystem::path& path);

}  // namespace cellbloom::nn
