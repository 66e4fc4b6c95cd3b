#include "talecraft/ct2i/lora.hpp"

#include <cmath>

#include "talecraft/common/error.hpp"

namespace talecraft::ct2i {

namespace {

void check_factors(const torch::Tensor& weight, const torch::Tensor& a, const torch::Tensor& b) {
    if (weight.dim() != 2 || a.dim() != 2 || b.dim() != 2) {
        throw ShapeError("lora factors must be matrices");
    }
    if (a.size(1) != weight.size(1) || b.size(0) != weight.size(0) || a.size(0) != b.size(1)) {
        throw ShapeError("lora rank mismatch: W " + std::to_string(weight.size(0)) + "x" +
                         std::to_string(weight.size(1)) + ", A " + std::to_string(a.size(0)) + "x" +
                         std::to_string(a.size(1)) + ", B " + std::to_string(b.size(0)) + "x" +
                         std::to_string(b.size(1)));
    }
}

}  // namespace

torch::Tensor lora_forward(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& a,
                           const torch::Tensor& b) {
    check_factors(weight, a, b);
    if (x.size(-1) != weight.size(1)) {
        throw ShapeError("input width does not match the weight");
    }
    return torch::nn::functional::linear(x, weight) +
           torch::nn::functional::linear(torch::nn::functional::linear(x, a), b);
}

torch::Tensor merge_lora(const torch::Tensor& weight, const torch::Tensor& a, const torch::Tensor& b) {
    check_factors(weight, a, b);
    return weight + torch::matmul(b, a);
}

LoRALinearImpl::LoRALinearImpl(std::int64_t in_features, std::int64_t out_features, int rank, bool with_bias)
    : in_(in_features), out_(out_features), rank_(rank) {
    if (rank < 0) throw ConfigError("lora rank must be >= 0");
    weight = register_parameter("weight", torch::empty({out_features, in_features}));
    torch::nn::init::kaiming_uniform_(weight, std::sqrt(5.0));
    if (with_bias) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
        bias = register_parameter("bias", torch::empty({out_features}).uniform_(-bound, bound));
    }
    if (rank > 0) {
        lora_a = register_parameter("lora_a", torch::empty({rank, in_features}));
        lora_b = register_parameter("lora_b", torch::zeros({out_features, rank}));
        reset_adapter();
    }
}

void LoRALinearImpl::reset_adapter(at::Generator* rng) {
    if (rank_ == 0) return;
    torch::NoGradGuard no_grad;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    auto u = rng ? torch::rand(lora_a.sizes(), *rng, lora_a.options().requires_grad(false))
                 : torch::rand(lora_a.sizes(), lora_a.options().requires_grad(false));
    lora_a.copy_(u * (2 * bound) - bound);
    lora_b.zero_();
}

torch::Tensor LoRALinearImpl::forward(const torch::Tensor& x) {
    auto h = torch::nn::functional::linear(x, weight, bias);
    if (rank_ == 0 || merged_) return h;
    return h + torch::nn::functional::linear(torch::nn::functional::linear(x, lora_a), lora_b);
}

void LoRALinearImpl::merge() {
    if (merged_) throw ConflictError("lora adapter is already merged");
    if (rank_ == 0) {
        merged_ = true;
        return;
    }
    torch::NoGradGuard no_grad;
    weight.add_(torch::matmul(lora_b, lora_a));
    merged_ = true;
}

void LoRALinearImpl::unmerge() {
    if (!merged_) throw ConflictError("lora adapter is not merged");
    if (rank_ > 0) {
        torch::NoGradGuard no_grad;
        weight.sub_(torch::matmul(lora_b, lora_a));
    }
    merged_ = false;
}

}  // namespace talecraft::ct2i
