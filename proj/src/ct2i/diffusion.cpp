#include "talecraft/ct2i/diffusion.hpp"

#include <cmath>

#include "talecraft/common/error.hpp"
#include "talecraft/ct2i/sketch.hpp"
#include "talecraft/layout/schedule.hpp"

namespace talecraft::ct2i {

DiffusionSchedule::DiffusionSchedule(int timesteps, double beta_start, double beta_end) : timesteps_(timesteps) {
    if (timesteps < 1) throw ConfigError("diffusion timesteps must be >= 1");
    auto betas = torch::linspace(std::sqrt(beta_start), std::sqrt(beta_end), timesteps, torch::kFloat64).pow(2);
    alpha_bars_ = torch::cumprod(1.0 - betas, 0);
}

double DiffusionSchedule::alpha_bar(int t) const {
    if (t < 0) return 1.0;
    if (t >= timesteps_) throw InvalidRequestError("diffusion timestep out of range: " + std::to_string(t));
    return alpha_bars_[t].item<double>();
}

torch::Tensor DiffusionSchedule::add_noise(const torch::Tensor& z0, const torch::Tensor& eps,
                                           const torch::Tensor& t) const {
    auto ab = alpha_bars_.index_select(0, t.to(torch::kLong)).to(z0.dtype());
    std::vector<std::int64_t> shape(static_cast<std::size_t>(z0.dim()), 1);
    shape[0] = z0.size(0);
    ab = ab.view(shape);
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps;
}

std::vector<int> DiffusionSchedule::ddim_timesteps(int steps) const {
    if (steps < 1) throw InvalidRequestError("DDIM needs at least one step");
    steps = std::min(steps, timesteps_);
    std::vector<int> out;
    const double ratio = static_cast<double>(timesteps_) / steps;
    for (int i = 0; i < steps; ++i) {
        out.push_back(static_cast<int>(std::lround(timesteps_ - i * ratio)) - 1);
    }
    return out;
}

torch::Tensor cfg_mix(const torch::Tensor& eps_cond, const torch::Tensor& eps_uncond, double scale) {
    if (!eps_cond.sizes().equals(eps_uncond.sizes())) throw ShapeError("guidance inputs differ in shape");
    return eps_uncond + scale * (eps_cond - eps_uncond);
}

torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps, int t, int t_prev,
                        const DiffusionSchedule& schedule) {
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t_prev);
    auto x0 = (z_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    return std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps;
}

torch::Tensor build_inpaint_input(const torch::Tensor& z_t, const torch::Tensor& original_latent,
                                  const torch::Tensor& mask) {
    if (z_t.dim() != 4 || !z_t.sizes().equals(original_latent.sizes())) {
        throw ShapeError("noisy and original latents must both be (B, C, h, w) of one shape");
    }
    if (mask.dim() != 4 || mask.size(0) != z_t.size(0) || mask.size(1) != 1 || mask.size(2) != z_t.size(2) ||
        mask.size(3) != z_t.size(3)) {
        throw ShapeError("inpainting mask must be (B, 1, h, w) at latent resolution");
    }
    return torch::cat({z_t, original_latent, mask.to(z_t.dtype())}, 1);
}

torch::Tensor box_mask(const layout::Box& box, std::int64_t size) {
    const double s = static_cast<double>(size);
    auto x0 = static_cast<std::int64_t>(std::floor(std::clamp(box.x - box.w / 2, 0.0, 1.0) * s));
    auto y0 = static_cast<std::int64_t>(std::floor(std::clamp(box.y - box.h / 2, 0.0, 1.0) * s));
    auto x1 = static_cast<std::int64_t>(std::ceil(std::clamp(box.x + box.w / 2, 0.0, 1.0) * s));
    auto y1 = static_cast<std::int64_t>(std::ceil(std::clamp(box.y + box.h / 2, 0.0, 1.0) * s));
    if (x1 <= x0 || y1 <= y0) throw InvalidBoxError("box has no area");
    auto m = torch::zeros({1, size, size});
    m.narrow(1, y0, y1 - y0).narrow(2, x0, x1 - x0).fill_(1.0);
    return m;
}

torch::Tensor ddim_sample_latent(ControllableT2IImpl& model, const DiffusionSchedule& schedule, const ConditionSet& cond,
                                 const SampleOptions& options, const InpaintSpec* inpaint) {
    torch::NoGradGuard no_grad;
    const auto& o = model.options();
    const auto dtype = model.unet->conv_in->weight.scalar_type();
    const auto size = o.latent_size();
    auto rng = layout::make_generator(options.seed);
    auto z = torch::randn({1, o.latent_channels, size, size}, rng, torch::TensorOptions(dtype));

    const bool guided = options.guidance != 1.0;
    std::vector<ConditionSet> sets{cond};
    if (guided) sets.push_back(ConditionSet::unconditional());
    auto conditions = model.embed(sets);

    torch::Tensor orig, mask, keep, fixed_noise, masked_orig;
    if (inpaint) {
        orig = inpaint->original_latent.to(dtype).unsqueeze(0);
        mask = inpaint->mask.to(dtype).unsqueeze(0);
        if (orig.sizes() != z.sizes() || mask.size(2) != size || mask.size(3) != size) {
            throw ShapeError("inpainting latent or mask does not match the model resolution");
        }
        keep = mask <= 0.5;
        fixed_noise = torch::randn(z.sizes(), rng, torch::TensorOptions(dtype));
        masked_orig = orig * (1.0 - mask);
    }

    const auto ts = schedule.ddim_timesteps(options.steps);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
        const auto n = static_cast<std::int64_t>(sets.size());
        auto z_in = z.expand({n, -1, -1, -1});
        if (inpaint) {
            z_in = build_inpaint_input(z_in, masked_orig.expand({n, -1, -1, -1}), mask.expand({n, -1, -1, -1}));
        }
        auto t_vec = torch::full({n}, static_cast<std::int64_t>(t), torch::kLong);
        auto eps = model.predict_noise(z_in, t_vec, conditions);
        auto e = guided ? cfg_mix(eps.narrow(0, 0, 1), eps.narrow(0, 1, 1), options.guidance) : eps;
        z = ddim_step(z, e, t, t_prev, schedule);
        if (inpaint) {
            auto known = t_prev >= 0 ? schedule.add_noise(orig, fixed_noise, torch::tensor({static_cast<std::int64_t>(t_prev)}))
                                     : orig;
            z = torch::where(keep.expand_as(z), known, z);
        }
    }
    if (inpaint) z = torch::where(keep.expand_as(z), orig, z);
    return z.squeeze(0);
}

torch::Tensor ddim_sample(ControllableT2IImpl& model, const DiffusionSchedule& schedule, const ConditionSet& cond,
                          const SampleOptions& options) {
    auto z = ddim_sample_latent(model, schedule, cond, options);
    torch::NoGradGuard no_grad;
    return model.codec->decode(z.unsqueeze(0)).squeeze(0).to(torch::kFloat32);
}

torch::Tensor diffusion_loss(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                             const torch::Tensor& latents, const std::vector<ConditionSet>& conds,
                             const torch::Tensor& t, const torch::Tensor& eps) {
    auto z_t = schedule.add_noise(latents, eps, t);
    auto pred = model.predict_noise(z_t, t, model.embed(conds));
    return torch::mse_loss(pred, eps);
}

double train_step(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                  const std::vector<TrainingExample>& batch, torch::optim::Optimizer& optimizer, at::Generator& rng,
                  const TrainStepOptions& options) {
    if (batch.empty()) throw InvalidRequestError("empty training batch");
    const auto dtype = model.unet->conv_in->weight.scalar_type();
    const auto b = static_cast<std::int64_t>(batch.size());
    std::vector<torch::Tensor> latents;
    std::vector<ConditionSet> conds;
    auto drop = torch::rand({b}, rng, torch::kFloat64);
    for (std::int64_t i = 0; i < b; ++i) {
        const auto& ex = batch[static_cast<std::size_t>(i)];
        latents.push_back(ex.latent.to(dtype));
        conds.push_back(drop[i].item<double>() < options.cond_dropout ? ConditionSet::unconditional() : ex.cond);
    }
    auto z0 = torch::stack(latents);
    auto t = torch::randint(0, schedule.timesteps(), {b}, rng, torch::kLong);
    if (options.high_noise_fraction > 0) {
        const auto top = schedule.timesteps() - std::max(1, schedule.timesteps() / 4);
        auto high = torch::randint(top, schedule.timesteps(), {b}, rng, torch::kLong);
        auto pick = torch::rand({b}, rng, torch::kFloat64) < options.high_noise_fraction;
        t = torch::where(pick, high, t);
    }
    auto eps = torch::randn(z0.sizes(), rng, torch::TensorOptions(dtype));
    const bool inpaint = options.inpaint_probability > 0 &&
                         torch::rand({1}, rng, torch::kFloat64).item<double>() < options.inpaint_probability;
    torch::Tensor masks;
    if (inpaint) {
        const auto size = z0.size(-1);
        std::vector<torch::Tensor> ms;
        auto boxes = torch::rand({b, 4}, rng, torch::kFloat64);
        for (std::int64_t i = 0; i < b; ++i) {
            const double w = 0.25 + 0.5 * boxes[i][2].item<double>();
            const double h = 0.25 + 0.5 * boxes[i][3].item<double>();
            const double x = w / 2 + (1 - w) * boxes[i][0].item<double>();
            const double y = h / 2 + (1 - h) * boxes[i][1].item<double>();
            ms.push_back(box_mask({x, y, w, h}, size));
        }
        masks = torch::stack(ms).to(dtype);
    }

    optimizer.zero_grad();
    auto z_t = schedule.add_noise(z0, eps, t);
    torch::Tensor pred;
    if (options.noise_oracle) {
        pred = options.noise_oracle(eps);
    } else {
        auto input = inpaint ? build_inpaint_input(z_t, z0 * (1.0 - masks), masks) : z_t;
        pred = model.predict_noise(input, t, model.embed(conds));
    }
    auto loss = torch::mse_loss(pred, eps);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
        throw NumericalError("training loss is not finite (" + std::to_string(value) + ") at timesteps " +
                                 torch::str(t),
                             "ct2i.train_step");
    }
    if (loss.requires_grad()) {
        loss.backward();
        optimizer.step();
    }
    return value;
}

}  // namespace talecraft::ct2i
