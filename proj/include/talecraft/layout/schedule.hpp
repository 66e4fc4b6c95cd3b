#pragma once

#include <ATen/core/Generator.h>
#include <torch/types.h>

#include <string>
#include <vector>

#include "talecraft/layout/layout.hpp"

namespace talecraft::layout {

enum class CorruptionMode { uniform, absorbing };

CorruptionMode parse_corruption_mode(const std::string& name);

/// Categorical forward process. Row convention: step(t)[i][j] = q(z_t = j | z_{t-1} = i).
/// Stored in double precision; index 0 of both tables is the identity.
class NoiseSchedule {
public:
    /// Takes Q_1..Q_T as (D,D) matrices. Throws ConfigError unless every row sums to 1.
    explicit NoiseSchedule(const std::vector<torch::Tensor>& steps);

    int timesteps() const noexcept { return timesteps_; }
    int vocab_size() const noexcept { return vocab_size_; }

    /// Q_t, t in 0..T (t = 0 gives the identity).
    torch::Tensor step(int t) const;
    /// Q̄_t = Q_1 ... Q_t, t in 0..T.
    torch::Tensor cumulative(int t) const;

    /// (T+1, D, D) tables for batched gathers.
    const torch::Tensor& steps() const noexcept { return steps_; }
    const torch::Tensor& cumulatives() const noexcept { return cumulative_; }

private:
    int timesteps_ = 0;
    int vocab_size_ = 0;
    torch::Tensor steps_;
    torch::Tensor cumulative_;
};

/// Q_t = (1 - b_t) I + b_t * target with b_t = 1 / (T - t + 1), so Q̄_T is fully
/// corrupted. Absorbing moves mass to MASK; uniform spreads it over all non-PAD
/// tokens. PAD only maps to itself.
NoiseSchedule build_schedule(int timesteps, CorruptionMode mode, const LayoutVocab& vocab);

at::Generator make_generator(std::uint64_t seed);

/// Samples z_t ~ v(z0)^T Q̄_t independently per element. `z0` and the result are
/// int64 tensors of any shape. `t` is a scalar step or a per-row (B) tensor when z0 is (B, L).
torch::Tensor forward_corrupt(const torch::Tensor& z0, int t, const NoiseSchedule& schedule, at::Generator& rng);
torch::Tensor forward_corrupt(const torch::Tensor& z0, const torch::Tensor& t, const NoiseSchedule& schedule,
                              at::Generator& rng);

TokenSequence forward_corrupt(const TokenSequence& z0, int t, const NoiseSchedule& schedule, at::Generator& rng);

/// p(z_{t-1} | z_t) ∝ Σ_{z0} q(z_{t-1} | z_t, z0) p̃(z0 | z_t), per position.
/// z_t: (..., L) int64; z0_probs: (..., L, D); t: scalar step or (B) tensor
/// matching the leading dim. Returns (..., L, D), differentiable in z0_probs.
/// Candidates z0 with q(z_t | z0) = 0 drop out. Throws NumericalError when a
/// position has no mass left.
torch::Tensor posterior_step(const torch::Tensor& z_t, const torch::Tensor& z0_probs, int t,
                             const NoiseSchedule& schedule);
torch::Tensor posterior_step(const torch::Tensor& z_t, const torch::Tensor& z0_probs, const torch::Tensor& t,
                             const NoiseSchedule& schedule);

/// The true posterior q(z_{t-1} | z_t, z0) for known z0.
torch::Tensor true_posterior(const torch::Tensor& z_t, const torch::Tensor& z0, const torch::Tensor& t,
                             const NoiseSchedule& schedule);

struct LossTerms {
    torch::Tensor total;  // vb + lambda * ce
    torch::Tensor vb;
    torch::Tensor ce;
};

/// Hybrid D3PM objective for already-corrupted inputs. For t > 1 the vb term is
/// KL(q(z_{t-1}|z_t,z0) || p(z_{t-1}|z_t)); for t = 1 it is -log p(z0|z1).
/// Both terms average over positions where z0 != pad_token.
/// Shapes: z0, z_t (B, L); t (B); z0_probs (B, L, D).
LossTerms hybrid_loss(const torch::Tensor& z0, const torch::Tensor& z_t, const torch::Tensor& t,
                      const torch::Tensor& z0_probs, const NoiseSchedule& schedule, double lambda,
                      std::int64_t pad_token);

}  // namespace talecraft::layout
