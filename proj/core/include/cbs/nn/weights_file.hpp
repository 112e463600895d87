#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "cbs/nn/tensor.hpp"

namespace cbs::nn {

/// Named tensors in a little-endian binary container ("CBSW", version 1).
/// Values are stored as raw IEEE-754 doubles so save/load is bit-exact.
using TensorMap = std::map<std::string, Tensor>;

void save_tensors(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_tensors(const std::filesystem::path& path);

}  // namespace cbs::nn
