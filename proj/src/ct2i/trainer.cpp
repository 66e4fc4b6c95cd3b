#include "talecraft/ct2i/trainer.hpp"

#include <cmath>

#include "talecraft/common/error.hpp"
#include "talecraft/ct2i/sketch.hpp"
#include "talecraft/layout/schedule.hpp"

namespace talecraft::ct2i {

double train_codec(LatentCodecImpl& codec, const std::vector<torch::Tensor>& images,
                   const CodecTrainOptions& options) {
    if (codec.mode() == LatentMode::identity) return 0.0;
    if (images.empty()) throw InvalidRequestError("no images to fit the autoencoder on");
    auto data = torch::stack(images).to(torch::kFloat32);
    auto rng = layout::make_generator(options.seed);
    auto params = codec.parameters();
    for (auto& p : params) p.set_requires_grad(true);
    torch::optim::Adam optimizer(params, torch::optim::AdamOptions(options.lr));
    double last = 0.0;
    const auto n = data.size(0);
    const auto b = std::min<std::int64_t>(options.batch_size, n);
    for (int step = 0; step < options.steps; ++step) {
        auto idx = torch::randperm(n, rng, torch::kLong).narrow(0, 0, b);
        auto batch = data.index_select(0, idx);
        optimizer.zero_grad();
        auto loss = torch::mse_loss(codec.reconstruct(batch), batch);
        loss.backward();
        optimizer.step();
        last = loss.item<double>();
        if (!std::isfinite(last)) throw NumericalError("autoencoder loss is not finite", "ct2i.train_codec");
    }
    torch::NoGradGuard no_grad;
    codec.set_scale(1.0);
    const auto std = codec.encode(data).std().item<double>();
    codec.set_scale(std > 0 ? 1.0 / std : 1.0);
    auto recon = codec.reconstruct(data);
    return torch::mse_loss(recon, data).item<double>();
}

TrainingExample make_training_example(ControllableT2IImpl& model, const ToyScene& scene, bool with_grounding,
                                      bool with_sketch, double sketch_beta) {
    TrainingExample ex;
    {
        torch::NoGradGuard no_grad;
        const auto dtype = model.unet->conv_in->weight.scalar_type();
        ex.latent = model.codec->encode(scene.image.unsqueeze(0).to(dtype)).squeeze(0);
    }
    ex.cond.prompt = scene.prompt;
    if (with_grounding) {
        for (const auto& obj : scene.layout.objects) ex.cond.grounding.push_back({obj.phrase, obj.bbox});
    }
    if (with_sketch) {
        const auto size = model.options().image_size;
        std::vector<torch::Tensor> canvases;
        for (std::size_t i = 0; i < scene.sketches.size(); ++i) {
            canvases.push_back(compose_sketch_canvas(scene.sketches[i], scene.layout.objects[i].bbox, size));
        }
        ex.cond.sketch = merge_sketch_canvases(canvases, size);
        ex.cond.sketch_beta = sketch_beta;
    }
    return ex;
}

std::vector<double> train_denoiser(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                                   const std::vector<TrainingExample>& examples, const DenoiserTrainOptions& options,
                                   const std::function<void(int, double)>& progress) {
    if (examples.empty()) throw InvalidRequestError("no training examples");
    if (options.batch_size < 1) throw InvalidRequestError("batch size must be positive");
    auto params = model.set_trainable(options.phase);
    torch::optim::Adam optimizer(params, torch::optim::AdamOptions(options.lr));
    auto rng = layout::make_generator(options.seed);
    TrainStepOptions step;
    step.cond_dropout = options.cond_dropout;
    step.inpaint_probability = options.inpaint_probability;
    step.high_noise_fraction = options.high_noise_fraction;
    model.train();

    std::vector<double> epoch_losses;
    const auto n = static_cast<std::int64_t>(examples.size());
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        if (options.cosine_decay) {
            const double lr = 0.5 * options.lr * (1.0 + std::cos(M_PI * epoch / options.epochs));
            for (auto& group : optimizer.param_groups()) {
                static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
            }
        }
        auto order = torch::randperm(n, rng, torch::kLong);
        double total = 0.0;
        int batches = 0;
        for (std::int64_t start = 0; start < n; start += options.batch_size) {
            std::vector<TrainingExample> batch;
            for (std::int64_t i = start; i < std::min<std::int64_t>(n, start + options.batch_size); ++i) {
                batch.push_back(examples[static_cast<std::size_t>(order[i].item<std::int64_t>())]);
            }
            total += train_step(model, schedule, batch, optimizer, rng, step);
            ++batches;
        }
        epoch_losses.push_back(total / batches);
        if (progress) progress(epoch, epoch_losses.back());
        const auto window = static_cast<std::size_t>(std::max(1, options.stop_window));
        if (options.stop_below > 0 && epoch_losses.size() >= window) {
            double recent = 0;
            for (auto it = epoch_losses.end() - static_cast<std::ptrdiff_t>(window); it != epoch_losses.end(); ++it) {
                recent += *it;
            }
            if (recent / static_cast<double>(window) < options.stop_below) break;
        }
    }
    model.eval();
    model.set_trainable(TrainPhase::all);
    return epoch_losses;
}

}  // namespace talecraft::ct2i
