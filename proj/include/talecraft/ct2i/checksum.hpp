#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace talecraft::ct2i {

/// FNV-1a over the raw bytes of a tensor (made contiguous).
std::uint64_t tensor_checksum(const torch::Tensor& t, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Checksum over all parameters of a module, in registration order.
std::uint64_t parameters_checksum(const torch::nn::Module& module);

}  // namespace talecraft::ct2i
