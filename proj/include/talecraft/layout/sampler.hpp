#pragma once

#include <functional>
#include <vector>

#include "talecraft/layout/denoiser.hpp"
#include "talecraft/layout/schedule.hpp"

namespace talecraft::layout {

/// Generates geometry for the given categories. Category positions are clamped
/// for every step, unused slots stay PAD, and geometry runs the reverse chain
/// from T down to 1. Throws CapacityError when more categories than N_max.
Layout sample_layout(const std::vector<int>& categories, LayoutDenoiser& model, const NoiseSchedule& schedule,
                     at::Generator& rng);

/// Batched form; one layout per condition.
std::vector<Layout> sample_layouts(const std::vector<std::vector<int>>& conditions, LayoutDenoiser& model,
                                   const NoiseSchedule& schedule, at::Generator& rng);

struct LayoutTrainOptions {
    int epochs = 20;
    int batch_size = 32;
    double lr = 5e-4;
    double lambda = 0.1;
    std::uint64_t seed = 0;
};

/// Adam with cosine decay on the hybrid loss. Timesteps are stratified over
/// each epoch and dealt to batches at random. Returns the mean loss of every epoch.
std::vector<double> train_layout_denoiser(LayoutDenoiser& model, const std::vector<Layout>& corpus,
                                          const NoiseSchedule& schedule, const LayoutTrainOptions& options,
                                          const std::function<void(int, double)>& on_epoch = {});

/// Validity used for sampled layouts: every box has w, h >= 1 bin and its center
/// inside the canvas.
bool is_valid_layout(const Layout& layout, int m_bins);

/// Stricter check: the dequantized box extent stays within one bin of the canvas.
bool is_contained_layout(const Layout& layout, int m_bins);

}  // namespace talecraft::layout
