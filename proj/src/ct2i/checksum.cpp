#include "talecraft/ct2i/checksum.hpp"

#include "talecraft/common/hash.hpp"

namespace talecraft::ct2i {

std::uint64_t tensor_checksum(const torch::Tensor& t, std::uint64_t seed) {
    auto c = t.detach().cpu().contiguous();
    auto bytes = std::span<const std::byte>(static_cast<const std::byte*>(c.data_ptr()), c.nbytes());
    return fnv1a(bytes, seed);
}

std::uint64_t parameters_checksum(const torch::nn::Module& module) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : module.parameters()) h = tensor_checksum(p, h);
    return h;
}

}  // namespace talecraft::ct2i
