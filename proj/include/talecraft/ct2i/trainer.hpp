#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <vector>

#include "talecraft/ct2i/diffusion.hpp"
#include "talecraft/ct2i/toy_data.hpp"

namespace talecraft::ct2i {

struct CodecTrainOptions {
    int steps = 600;
    int batch_size = 16;
    double lr = 2e-3;
    std::uint64_t seed = 0;
};

/// Fits the autoencoder to `images` by pixel MSE and sets the latent scale to
/// the inverse standard deviation of their latents. Returns the final MSE.
/// Identity mode has nothing to fit and returns 0.
double train_codec(LatentCodecImpl& codec, const std::vector<torch::Tensor>& images,
                   const CodecTrainOptions& options = {});

/// Encodes a toy scene into a training example, optionally with its boxes and
/// sketch canvas as conditions.
TrainingExample make_training_example(ControllableT2IImpl& model, const ToyScene& scene, bool with_grounding,
                                      bool with_sketch, double sketch_beta = 1.0);

struct DenoiserTrainOptions {
    TrainPhase phase = TrainPhase::all;
    int epochs = 50;
    int batch_size = 8;
    double lr = 1e-3;
    double cond_dropout = 0.1;
    double inpaint_probability = 0.0;
    double high_noise_fraction = 0.0;
    /// Anneals the learning rate to zero over `epochs` along a half cosine.
    bool cosine_decay = false;
    /// Stops early once the mean loss of the last `stop_window` epochs is below
    /// this value; 0 disables.
    double stop_below = 0.0;
    int stop_window = 20;
    std::uint64_t seed = 0;
};

/// Shuffled mini-batch epochs of the noise-prediction objective. Returns the
/// mean loss of every epoch run. `progress(epoch, mean_loss)` runs after each epoch.
std::vector<double> train_denoiser(ControllableT2IImpl& model, const DiffusionSchedule& schedule,
                                   const std::vector<TrainingExample>& examples, const DenoiserTrainOptions& options,
                                   const std::function<void(int, double)>& progress = {});

}  // namespace talecraft::ct2i
