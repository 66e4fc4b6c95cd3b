#include "talecraft/layout/schedule.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cmath>

#include "talecraft/common/error.hpp"

namespace talecraft::layout {

namespace {

constexpr double kRowTolerance = 1e-9;

torch::Tensor as_step_tensor(const torch::Tensor& t, const torch::Tensor& like) {
    return t.to(torch::kLong).to(like.device());
}

// Broadcasts a (B) step tensor against (B, ...) data of rank `rank`.
torch::Tensor gather_tables(const torch::Tensor& table, const torch::Tensor& t) {
    return table.index_select(0, t.reshape({-1}));  // (B, D, D)
}

}  // namespace

CorruptionMode parse_corruption_mode(const std::string& name) {
    if (name == "absorbing") return CorruptionMode::absorbing;
    if (name == "uniform") return CorruptionMode::uniform;
    throw ConfigError("unknown corruption mode: " + name);
}

NoiseSchedule::NoiseSchedule(const std::vector<torch::Tensor>& steps) {
    if (steps.empty()) {
        throw ConfigError("noise schedule needs at least one step");
    }
    timesteps_ = static_cast<int>(steps.size());
    vocab_size_ = static_cast<int>(steps.front().size(0));
    auto eye = torch::eye(vocab_size_, torch::kFloat64);
    std::vector<torch::Tensor> all{eye};
    std::vector<torch::Tensor> cum{eye};
    for (std::size_t i = 0; i < steps.size(); ++i) {
        auto q = steps[i].to(torch::kFloat64).contiguous();
        if (q.dim() != 2 || q.size(0) != vocab_size_ || q.size(1) != vocab_size_) {
            throw ConfigError("transition matrix " + std::to_string(i + 1) + " has the wrong shape");
        }
        if (q.min().item<double>() < 0.0) {
            throw ConfigError("transition matrix " + std::to_string(i + 1) + " has negative entries");
        }
        auto err = (q.sum(1) - 1.0).abs().max().item<double>();
        if (err > kRowTolerance) {
            throw ConfigError("transition matrix " + std::to_string(i + 1) + " is not row-stochastic");
        }
        all.push_back(q);
        cum.push_back(torch::matmul(cum.back(), q));
    }
    steps_ = torch::stack(all);
    cumulative_ = torch::stack(cum);
}

torch::Tensor NoiseSchedule::step(int t) const {
    if (t < 0 || t > timesteps_) throw InvalidRequestError("timestep out of range: " + std::to_string(t));
    return steps_[t];
}

torch::Tensor NoiseSchedule::cumulative(int t) const {
    if (t < 0 || t > timesteps_) throw InvalidRequestError("timestep out of range: " + std::to_string(t));
    return cumulative_[t];
}

NoiseSchedule build_schedule(int timesteps, CorruptionMode mode, const LayoutVocab& vocab) {
    if (timesteps < 1) {
        throw ConfigError("timesteps must be >= 1");
    }
    const auto d = vocab.size();
    const auto pad = vocab.pad();
    auto eye = torch::eye(d, torch::kFloat64);
    auto target = torch::zeros({d, d}, torch::kFloat64);
    if (mode == CorruptionMode::absorbing) {
        target.index_put_({torch::indexing::Slice(), vocab.mask()}, 1.0);
    } else {
        target.fill_(1.0 / static_cast<double>(d - 1));
        target.index_put_({torch::indexing::Slice(), pad}, 0.0);
    }
    // PAD never moves and nothing moves into it.
    target.index_put_({pad}, 0.0);
    target.index_put_({pad, pad}, 1.0);

    std::vector<torch::Tensor> steps;
    for (int t = 1; t <= timesteps; ++t) {
        const double beta = 1.0 / static_cast<double>(timesteps - t + 1);
        steps.push_back((1.0 - beta) * eye + beta * target);
    }
    return NoiseSchedule(steps);
}

at::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor forward_corrupt(const torch::Tensor& z0, const torch::Tensor& t, const NoiseSchedule& schedule,
                              at::Generator& rng) {
    auto steps = as_step_tensor(t, z0);
    torch::Tensor rows;
    if (steps.dim() == 0) {
        rows = schedule.cumulatives()[steps.item<std::int64_t>()].index_select(0, z0.reshape({-1}));
    } else {
        if (z0.dim() != 2 || steps.size(0) != z0.size(0)) {
            throw ShapeError("per-row timesteps need z0 of shape (B, L)");
        }
        auto tables = gather_tables(schedule.cumulatives(), steps);          // (B, D, D)
        auto idx = z0.unsqueeze(-1).expand({z0.size(0), z0.size(1), tables.size(2)});
        rows = tables.gather(1, idx).reshape({-1, tables.size(2)});  // (B*L, D)
    }
    auto sampled = torch::multinomial(rows, 1, false, rng).reshape(z0.sizes());
    return sampled;
}

torch::Tensor forward_corrupt(const torch::Tensor& z0, int t, const NoiseSchedule& schedule, at::Generator& rng) {
    if (t < 0 || t > schedule.timesteps()) throw InvalidRequestError("timestep out of range");
    return forward_corrupt(z0, torch::tensor(static_cast<std::int64_t>(t)), schedule, rng);
}

TokenSequence forward_corrupt(const TokenSequence& z0, int t, const NoiseSchedule& schedule, at::Generator& rng) {
    auto in = torch::tensor(z0.tokens, torch::kLong);
    auto out = forward_corrupt(in, t, schedule, rng).contiguous();
    TokenSequence seq;
    seq.tokens.assign(out.data_ptr<std::int64_t>(), out.data_ptr<std::int64_t>() + out.numel());
    return seq;
}

torch::Tensor posterior_step(const torch::Tensor& z_t, const torch::Tensor& z0_probs, const torch::Tensor& t,
                             const NoiseSchedule& schedule) {
    const auto d = schedule.vocab_size();
    if (z0_probs.size(-1) != d) {
        throw ShapeError("z0_probs last dimension must equal the vocabulary size");
    }
    auto steps = as_step_tensor(t, z_t);
    auto probs = z0_probs.to(torch::kFloat64);
    torch::Tensor step_t, cum_t, cum_prev;
    torch::Tensor zt = z_t;
    if (steps.dim() == 0) {
        const auto s = steps.item<std::int64_t>();
        if (s < 1 || s > schedule.timesteps()) throw InvalidRequestError("timestep out of range");
        // Q_t[k, z_t] for every k: columns of Q_t, i.e. rows of Q_t^T.
        step_t = schedule.steps()[s].t().index_select(0, zt.reshape({-1})).reshape(probs.sizes());
        // Q̄_t[z0, z_t] for every z0.
        cum_t = schedule.cumulatives()[s].t().index_select(0, zt.reshape({-1})).reshape(probs.sizes());
        auto w = torch::where(cum_t > 0, probs / torch::where(cum_t > 0, cum_t, torch::ones_like(cum_t)),
                              torch::zeros_like(probs));
        auto mixed = torch::matmul(w, schedule.cumulatives()[s - 1]);
        auto unnorm = step_t * mixed;
        auto norm = unnorm.sum(-1, true);
        if ((norm <= 0).any().item<bool>()) {
            throw NumericalError("posterior has zero normalizer", "posterior_step t=" + std::to_string(s));
        }
        return unnorm / norm;
    }
    if (zt.dim() < 1 || steps.size(0) != zt.size(0)) {
        throw ShapeError("per-row timesteps must match the leading dimension of z_t");
    }
    if (((steps < 1) | (steps > schedule.timesteps())).any().item<bool>()) {
        throw InvalidRequestError("timestep out of range");
    }
    const auto b = zt.size(0);
    auto flat_zt = zt.reshape({b, -1});                                        // (B, L)
    auto flat_probs = probs.reshape({b, flat_zt.size(1), d});                  // (B, L, D)
    auto q_t = gather_tables(schedule.steps(), steps).transpose(1, 2);        // (B, D, D), row z_t = column of Q_t
    auto qbar_t = gather_tables(schedule.cumulatives(), steps).transpose(1, 2);
    auto qbar_prev = gather_tables(schedule.cumulatives(), steps - 1);        // (B, D, D)
    auto idx = flat_zt.unsqueeze(-1).expand({b, flat_zt.size(1), d});
    step_t = q_t.gather(1, idx);   // (B, L, D)
    cum_t = qbar_t.gather(1, idx); // (B, L, D)
    auto w = torch::where(cum_t > 0, flat_probs / torch::where(cum_t > 0, cum_t, torch::ones_like(cum_t)),
                          torch::zeros_like(flat_probs));
    auto mixed = torch::bmm(w, qbar_prev);
    auto unnorm = step_t * mixed;
    auto norm = unnorm.sum(-1, true);
    if ((norm <= 0).any().item<bool>()) {
        throw NumericalError("posterior has zero normalizer", "posterior_step");
    }
    return (unnorm / norm).reshape(probs.sizes());
}

torch::Tensor posterior_step(const torch::Tensor& z_t, const torch::Tensor& z0_probs, int t,
                             const NoiseSchedule& schedule) {
    return posterior_step(z_t, z0_probs, torch::tensor(static_cast<std::int64_t>(t)), schedule);
}

torch::Tensor true_posterior(const torch::Tensor& z_t, const torch::Tensor& z0, const torch::Tensor& t,
                             const NoiseSchedule& schedule) {
    auto one_hot = torch::one_hot(z0, schedule.vocab_size()).to(torch::kFloat64);
    return posterior_step(z_t, one_hot, t, schedule);
}

LossTerms hybrid_loss(const torch::Tensor& z0, const torch::Tensor& z_t, const torch::Tensor& t,
                      const torch::Tensor& z0_probs, const NoiseSchedule& schedule, double lambda,
                      std::int64_t pad_token) {
    constexpr double tiny = 1e-30;
    auto probs = z0_probs.to(torch::kFloat64);
    auto steps = t.to(torch::kLong).reshape({-1});
    auto valid = (z0 != pad_token).to(torch::kFloat64);  // (B, L)
    auto count = valid.sum().clamp_min(1.0);

    auto model_post = posterior_step(z_t, probs, steps, schedule);  // (B, L, D)
    auto q_post = true_posterior(z_t, z0, steps, schedule);

    auto log_p = torch::log(model_post.clamp_min(tiny));
    auto kl = (torch::xlogy(q_post, q_post) - q_post * log_p).sum(-1);             // (B, L)
    auto nll_first = -log_p.gather(-1, z0.unsqueeze(-1)).squeeze(-1);               // (B, L), used at t = 1
    auto first = (steps == 1).unsqueeze(-1).expand_as(kl);
    auto vb_terms = torch::where(first, nll_first, kl);
    auto vb = (vb_terms * valid).sum() / count;

    auto ce_terms = -torch::log(probs.gather(-1, z0.unsqueeze(-1)).squeeze(-1).clamp_min(tiny));
    auto ce = (ce_terms * valid).sum() / count;
    return {vb + lambda * ce, vb, ce};
}

}  // namespace talecraft::layout
