#pragma once

#include <ATen/core/Generator.h>
#include <torch/torch.h>

#include <functional>
#include <optional>
#include <vector>

#include "talecraft/ct2i/model.hpp"

namespace talecraft::ct2i {

/// Gaussian forward process with scaled-linear betas over `timesteps` steps.
class DiffusionSchedule {
public:
    explicit DiffusionSchedule(int timesteps = 1000, double beta_start = 0.00085, double beta_end = 0.012);

    int timesteps() const noexcept { return timesteps_; }
    /// ᾱ_t for t in [0, T); t = -1 gives 1.
    double alpha_bar(int t) const;
    /// sqrt(ᾱ_t) z0 + sqrt(1 - ᾱ_t) eps, per-sample t (B).
    torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, const torch::Tensor& t) const;
    /// Evenly spaced DDIM timesteps, from T-1 downward.
    std::vector<int> ddim_timesteps(int steps) const;

    const torch::Tensor& alpha_bars() const noexcept { return alpha_bars_; }

private:
    int timesteps_;
    torch::Tensor alpha_bars_;  // (T) float64
};

/// eps_uncond + scale * (eps_cond - eps_uncond)
torch::Tensor cfg_mix(const torch::Tensor& eps_cond, const torch::Tensor& eps_uncond, double scale);

/// One deterministic DDIM update (eta = 0) from step t to t_prev (-1 = clean).
torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps, int t, int t_prev,
                        const DiffusionSchedule& schedule);

/// [noisy latent (4), original latent (4), mask (1)] along channels.
/// Shapes: (B, 4, h, w), (B, 4, h, w), (B, 1, h, w). Throws ShapeError.
torch::Tensor build_inpaint_input(const torch::Tensor& z_t, const torch::Tensor& original_latent,
                                  const torch::Tensor& mask);

/// Latent-resolution mask (1, h, w) of the cells a normalized box touches.
torch::Tensor box_mask(const layout::Box& box, std::int64_t size);

struct InpaintSpec {
    torch::Tensor original_latent;  // (4, h, w)
    torch::Tensor mask;             // (1, h, w), 1 = regenerate
};

struct SampleOptions {
    int steps = 50;
    double guidance = 6.0;
    std::uint64_t seed = 0;
};

/// DDIM sampling in latent space. With `inpaint`, the 9-channel path is used,
/// the outside of the mask is re-imposed from the noised original after every
/// step and replaced exactly by the original at the end.
torch::Tensor ddim_sample_latent(ControllableT2IImpl& model, const DiffusionSchedule& schedule, const ConditionSet& cond,
                                 const SampleOptions& options, const InpaintSpec* inpaint = nullptr);

/// ddim_sample_latent followed by the decoder; (3, H, W) in [0,1].
torch::Tensor ddim_sample(ControllableT2IImpl& model, const DiffusionSchedule& schedule, const ConditionSet& cond,
                          const SampleOptions& options);

struct TrainingExample {
    torch::Tensor latent;  // (4, h, w)
    ConditionSet cond;
};

struct TrainStepOptions {
    double cond_dropout = 0.1;
    /// Probability that a step trains the inpainting path instead.
    double inpaint_probability = 0.0;
    /// Share of timesteps drawn from the noisiest quarter of the schedule
    /// instead of uniformly.
    double high_noise_fraction = 0.0;
    /// Test hook: replaces the network's prediction.
    std::function<torch::Tensor(const torch::Tensor& eps)> noise_oracle;
};

/// One optimizer step of E||eps - eps_theta(z_t, t, C)||^2. Returns the loss.
/// Throws NumericalError when the loss is not finite.
double train_step(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                  const std::vector<TrainingExample>& batch, torch::optim::Optimizer& optimizer, at::Generator& rng,
                  const TrainStepOptions& options = {});

/// The same objective without the update, for fixed (t, eps) draws.
torch::Tensor diffusion_loss(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                             const torch::Tensor& latents, const std::vector<ConditionSet>& conds,
                             const torch::Tensor& t, const torch::Tensor& eps);

}  // namespace talecraft::ct2i
