#pragma once

#include <cstdint>
#include <string>

#include "wmseg/unet.hpp"
#include "wmseg/volume.hpp"

namespace wmseg::fusion {

enum class Strategy { Mean, Majority, Fcnn };

Strategy parse_strategy(const std::string& name);
const char* to_string(Strategy s);

/// Stacked channel of tract k seen from orientation o.
inline int64_t stacked_channel(int64_t tract, Orientation o) { return 3 * tract + static_cast<int64_t>(o); }

/// Runs the model on every slice along all three axes and interleaves the
/// results tract-major (3K channels). The input must be a cube of side
/// input_size.
Volume predict_orientations(const nn::UNet<float>& model, const Volume& input, int64_t batch_size = 8);

/// Voxelwise mean of each tract's three orientation probabilities.
Volume fuse_mean(const Volume& stacked);

/// Binary vote: a voxel is set when at least two orientations reach theta.
Volume fuse_majority(const Volume& stacked, double theta = 0.5);

/// Applies the fusion network (3K inputs, K outputs) slice-wise along each
/// axis and averages the three resulting probability volumes.
Volume fuse_fcnn(const nn::UNet<float>& fusion_model, const Volume& stacked, int64_t batch_size = 8);

}  // namespace wmseg::fusion
