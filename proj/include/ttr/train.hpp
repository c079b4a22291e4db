#pragma once

#include <string>
#include <vector>

#include "ttr/heatmap.hpp"
#include "ttr/nn.hpp"
#include "ttr/volume.hpp"

namespace ttr {

/// A disconnection volume preprocessed for crop assembly: component masks
/// are separated once so per-epoch cropping is cheap.
struct PreparedSample {
  Volume3D largest_mask;  // main component only
  Volume3D kp2_mask;      // detached component only
  std::vector<Coord3> kp2_voxels;
  Coord3 kp1{}, kp2{};
  std::vector<Coord3> fixed_centers;  // 3 stored centres for val/test
};

/// Splits a volume into the largest component and the component containing
/// kp2 (everything else — noise — is dropped from both masks).
PreparedSample prepare_sample(const Volume3D& vol, const Coord3& kp1, const Coord3& kp2,
                              std::vector<Coord3> fixed_centers = {});

/// Crop-and-stack shared by training and whole-volume inference.
/// channels == 2: channel 0 = largest mask, channel 1 = comp mask;
/// channels == 1: their union.
Tensor<float> make_net_input(const Volume3D& largest_mask, const Volume3D& comp_mask,
                             const Coord3& center, const Dims3& extent, int channels);

/// Input tensor plus the crop-frame keypoint target for one crop.
std::pair<Tensor<float>, KeypointTarget> make_training_input(const PreparedSample& sample,
                                                             const Coord3& crop_center,
                                                             int channels,
                                                             const Dims3& extent);

/// Batch KMSE (mean over the batch of the per-sample loss) and its gradient
/// with respect to pred: (1/N)(2/K) [V_k] (pred - target).
double kmse_batch_with_grad(const Tensor<float>& pred,
                            const std::vector<HeatmapTensor>& targets,
                            const std::vector<std::vector<bool>>& visibility,
                            Tensor<float>& grad_out);

struct TrainConfig {
  int batch_size = 16;
  int crop_extent = 32;  // cubic; 80 mirrors the full-scale protocol
  int patience = 10;     // epochs without val improvement before stopping
  int max_epochs = 200;
  double sigma = 2.5;
  std::uint64_t seed = 0;
  std::string init_from;  // optional checkpoint path
};

struct TrainResult {
  std::vector<double> step_loss;  // one entry per optimizer step
  std::vector<double> val_loss;   // one entry per epoch
  int best_epoch = -1;            // 0-based
  double best_val = 0.0;
  int epochs_run = 0;
  StateDict best_state;
};

/// Epoch loop: fresh kp2-component crop centres and a fresh shuffle per
/// epoch, AdamW steps on batch KMSE, eval-mode validation on the stored
/// centres, early stopping on patience, best-validation state retained.
/// Non-finite training loss raises numeric_error.
TrainResult train(UNet3D<float>& net, const std::vector<PreparedSample>& train_set,
                  const std::vector<PreparedSample>& val_set, const TrainConfig& cfg);

}  // namespace ttr
