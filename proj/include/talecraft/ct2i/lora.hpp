#pragma once

#include <torch/torch.h>

namespace talecraft::ct2i {

/// h = W x + B A x. Shapes follow torch: W (out, in), A (r, in), B (out, r).
/// Throws ShapeError when the factors do not conform.
torch::Tensor lora_forward(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& a,
                           const torch::Tensor& b);

/// W' = W + B A.
torch::Tensor merge_lora(const torch::Tensor& weight, const torch::Tensor& a, const torch::Tensor& b);

/// Linear map with an optional rank-r adapter. B starts at zero, so a fresh
/// adapter leaves the layer unchanged. Rank 0 means a plain linear layer.
class LoRALinearImpl : public torch::nn::Module {
public:
    LoRALinearImpl(std::int64_t in_features, std::int64_t out_features, int rank, bool bias = false);

    torch::Tensor forward(const torch::Tensor& x);

    /// Folds B A into W. Throws ConflictError if already merged.
    void merge();
    /// Subtracts B A from W again. Throws ConflictError if not merged.
    void unmerge();
    bool merged() const noexcept { return merged_; }

    /// Fresh adapter: A uniform in +-1/sqrt(in), B = 0. Draws from `rng` when
    /// given, otherwise from the global torch generator.
    void reset_adapter(at::Generator* rng = nullptr);

    int rank() const noexcept { return rank_; }
    std::int64_t in_features() const noexcept { return in_; }
    std::int64_t out_features() const noexcept { return out_; }

    torch::Tensor weight;
    torch::Tensor bias;
    torch::Tensor lora_a;  // (r, in)
    torch::Tensor lora_b;  // (out, r)

private:
    std::int64_t in_ = 0;
    std::int64_t out_ = 0;
    int rank_ = 0;
    bool merged_ = false;
};
TORCH_MODULE(LoRALinear);

}  // namespace talecraft::ct2i
