#include "talecraft/layout/sampler.hpp"

#include <cmath>

#include "talecraft/common/error.hpp"

namespace talecraft::layout {

std::vector<Layout> sample_layouts(const std::vector<std::vector<int>>& conditions, LayoutDenoiser& model,
                                   const NoiseSchedule& schedule, at::Generator& rng) {
    const auto& opts = model->options();
    const auto& vocab = opts.vocab;
    const auto len = model->sequence_length();
    const auto batch = static_cast<std::int64_t>(conditions.size());
    if (batch == 0) return {};
    if (schedule.vocab_size() != vocab.size()) {
        throw ConfigError("schedule and denoiser disagree on vocabulary size");
    }

    torch::NoGradGuard no_grad;
    auto z = torch::full({batch, len}, vocab.pad(), torch::kLong);
    auto free = torch::zeros({batch, len}, torch::kBool);
    for (std::int64_t b = 0; b < batch; ++b) {
        const auto& cats = conditions[static_cast<std::size_t>(b)];
        if (static_cast<int>(cats.size()) > opts.n_max) {
            throw CapacityError("condition has " + std::to_string(cats.size()) + " objects, capacity is " +
                                std::to_string(opts.n_max));
        }
        for (std::size_t i = 0; i < cats.size(); ++i) {
            const auto base = static_cast<std::int64_t>(i) * kFieldsPerObject;
            z.index_put_({b, base + 4}, vocab.category_token(cats[i]));
            free.index_put_({b, torch::indexing::Slice(base, base + 4)}, true);
        }
    }

    // z_T: draw free positions from the fully corrupted marginal.
    const int steps = schedule.timesteps();
    auto start = torch::zeros_like(z);  // bin 1 as the arbitrary source token
    auto z_T = forward_corrupt(start, steps, schedule, rng);
    z = torch::where(free, z_T, z);

    auto pad_tokens = torch::full_like(z, vocab.pad());
    auto pad_one_hot = torch::one_hot(pad_tokens, vocab.size()).to(torch::kFloat64);
    for (int t = steps; t >= 1; --t) {
        auto t_vec = torch::full({batch}, t, torch::kLong);
        auto p0 = model->probs(z, t_vec);
        // Clamped tokens need not be reachable under the schedule; give those
        // positions the trivially consistent PAD pair instead.
        auto free3 = free.unsqueeze(-1);
        auto z_post = torch::where(free, z, pad_tokens);
        auto p_post = torch::where(free3, p0, pad_one_hot);
        auto post = posterior_step(z_post, p_post, t, schedule);
        auto flat = post.reshape({-1, post.size(-1)});
        auto drawn = torch::multinomial(flat, 1, false, rng).reshape({batch, len});
        z = torch::where(free, drawn, z);
    }

    std::vector<Layout> out;
    out.reserve(conditions.size());
    auto zc = z.contiguous();
    for (std::int64_t b = 0; b < batch; ++b) {
        TokenSequence seq;
        auto row = zc[b];
        seq.tokens.assign(row.data_ptr<std::int64_t>(), row.data_ptr<std::int64_t>() + len);
        out.push_back(unflatten(seq, vocab));
    }
    return out;
}

Layout sample_layout(const std::vector<int>& categories, LayoutDenoiser& model, const NoiseSchedule& schedule,
                     at::Generator& rng) {
    return sample_layouts({categories}, model, schedule, rng).front();
}

std::vector<double> train_layout_denoiser(LayoutDenoiser& model, const std::vector<Layout>& corpus,
                                          const NoiseSchedule& schedule, const LayoutTrainOptions& options,
                                          const std::function<void(int, double)>& on_epoch) {
    if (corpus.empty()) {
        throw InvalidRequestError("layout corpus is empty");
    }
    const auto& opts = model->options();
    const auto n = static_cast<std::int64_t>(corpus.size());
    std::vector<torch::Tensor> rows;
    rows.reserve(corpus.size());
    for (const auto& layout : corpus) {
        rows.push_back(torch::tensor(flatten(layout, opts.vocab, opts.n_max).tokens, torch::kLong));
    }
    auto data = torch::stack(rows);

    auto rng = make_generator(options.seed);
    model->train();
    torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(options.lr));
    const auto batches_per_epoch = (n + options.batch_size - 1) / options.batch_size;
    const auto total_steps = batches_per_epoch * options.epochs;
    std::int64_t step = 0;
    const int T = schedule.timesteps();

    std::vector<double> epoch_losses;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        auto order = torch::randperm(n, rng, torch::kLong);
        // Stratified timesteps over the whole epoch: an evenly spaced comb with a
        // random offset, dealt to the examples in random order.
        auto offset = torch::randint(0, T, {1}, rng, torch::kLong);
        auto comb = (torch::arange(n, torch::kLong) * T / n + offset).remainder(T) + 1;
        auto epoch_t = comb.index_select(0, torch::randperm(n, rng, torch::kLong));
        double sum = 0.0;
        std::int64_t seen = 0;
        for (std::int64_t start = 0; start < n; start += options.batch_size) {
            const auto end = std::min(n, start + options.batch_size);
            auto idx = order.slice(0, start, end);
            auto z0 = data.index_select(0, idx);
            const auto b = z0.size(0);
            auto t = epoch_t.slice(0, start, end);
            auto zt = forward_corrupt(z0, t, schedule, rng);
            auto probs = model->probs(zt, t);
            auto terms = hybrid_loss(z0, zt, t, probs, schedule, options.lambda, opts.vocab.pad());

            const double progress = static_cast<double>(step) / static_cast<double>(std::max<std::int64_t>(1, total_steps));
            const double lr = options.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
            for (auto& group : optimizer.param_groups()) {
                static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
            }
            optimizer.zero_grad();
            terms.total.backward();
            torch::nn::utils::clip_grad_norm_(model->parameters(), 1.0);
            optimizer.step();
            ++step;

            const double value = terms.total.item<double>();
            if (!std::isfinite(value)) {
                throw NumericalError("layout loss is not finite", "epoch " + std::to_string(epoch));
            }
            sum += value * static_cast<double>(b);
            seen += b;
        }
        const double mean = sum / static_cast<double>(seen);
        epoch_losses.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    model->eval();
    return epoch_losses;
}

bool is_valid_layout(const Layout& layout, int m_bins) {
    for (const auto& o : layout.objects) {
        if (o.box.w < 1 || o.box.h < 1) return false;
        if (o.box.x < 1 || o.box.x > m_bins || o.box.y < 1 || o.box.y > m_bins) return false;
    }
    return true;
}

bool is_contained_layout(const Layout& layout, int m_bins) {
    const double slack = 1.0 / m_bins;
    for (const auto& o : layout.objects) {
        auto b = dequantize_box(o.box, m_bins);
        if (b.x - b.w / 2 < -slack || b.x + b.w / 2 > 1 + slack) return false;
        if (b.y - b.h / 2 < -slack || b.y + b.h / 2 > 1 + slack) return false;
    }
    return true;
}

}  // namespace talecraft::layout
