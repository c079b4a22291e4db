#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ttr/heatmap.hpp"
#include "ttr/nn.hpp"
#include "ttr/volume.hpp"

namespace ttr {

/// Anything that turns an assembled crop input into a K-channel heatmap.
/// `origin` is the crop's global position, which lets oracle models render
/// ground truth in the crop frame; a real net ignores it.
struct CropModel {
  virtual ~CropModel() = default;
  virtual int in_channels() const = 0;
  virtual int out_channels() const = 0;
  virtual Tensor<float> predict(const Tensor<float>& x, const Coord3& origin) = 0;
};

/// Eval-mode wrapper around a trained net.
struct NetModel final : CropModel {
  UNet3D<float>* net;
  explicit NetModel(UNet3D<float>& n) : net(&n) { net->eval(); }
  int in_channels() const override { return net->cfg.in_channels; }
  int out_channels() const override { return net->cfg.out_channels; }
  Tensor<float> predict(const Tensor<float>& x, const Coord3&) override {
    return net->forward(x);
  }
};

/// Perfect detector: renders the ground-truth Gaussians for whatever crop it
/// is shown. Used by --oracle evaluation and as a test harness.
struct OracleModel final : CropModel {
  Coord3 kp1, kp2;
  double sigma;
  int channels;
  OracleModel(const Coord3& a, const Coord3& b, double sig = 2.5, int in_ch = 2)
      : kp1(a), kp2(b), sigma(sig), channels(in_ch) {}
  int in_channels() const override { return channels; }
  int out_channels() const override { return 2; }
  Tensor<float> predict(const Tensor<float>& x, const Coord3& origin) override;
};

enum class InferenceMode { pooled, per_component };
std::string mode_name(InferenceMode m);
InferenceMode mode_from_name(const std::string& name);

struct InferenceConfig {
  int T = 3;                 // crops per candidate component
  int noise_min_voxels = 5;  // components below this are ignored
  int crop_extent = 32;
  InferenceMode mode = InferenceMode::pooled;
  bool raw_crop = false;  // feed raw-volume crops instead of component masks
  std::uint64_t seed = 0;
};

struct ComponentDetection {
  std::uint32_t label = 0;             // label in the noise-filtered CCL
  std::vector<Coord3> keypoints;       // per-channel argmax of this component's crops
};

struct InferenceResult {
  InferenceConfig cfg;
  std::vector<Coord3> keypoints;  // pooled per-channel argmax; empty if no candidates
  std::vector<ComponentDetection> per_component;
  std::vector<std::uint32_t> candidate_components;
  HeatmapTensor accumulator;  // K channels at full volume extent
};

/// Whole-volume detection: noise-filtered CCL, drop the largest component,
/// T seeded crops per remaining candidate, accumulate crop heatmaps into a
/// full-volume buffer, then argmax (global, and per candidate).
InferenceResult detect_whole_volume(const Volume3D& vol, CropModel& model,
                                    const InferenceConfig& cfg);

struct PairedComponent {
  std::uint32_t label = 0;
  Coord3 kp1, kp2;
  double snap1 = 0.0, snap2 = 0.0;  // distance moved onto foreground
};

struct PairingResult {
  std::vector<PairedComponent> pairs;
  std::vector<std::string> warnings;
};

/// Associates detected keypoint pairs with components for repair: kp2 snaps
/// to the nearest voxel of its candidate (pooled mode: the candidate nearest
/// to kp2), kp1 to the nearest voxel of the largest component.
PairingResult pair_components(const InferenceResult& result, const Volume3D& vol);

/// {"version":1,"mode",...,"keypoints","per_component","config_echo"}
std::string inference_result_json(const InferenceResult& result, const PairingResult& paired);

struct SampleEval {
  std::array<Coord3, 2> keypoints{};        // decoded accumulator argmax
  std::array<bool, 2> visible{false, false};  // ground truth inside >=1 crop
  std::array<double, 2> dist{0.0, 0.0};     // decoded-to-ground-truth, voxels
};

/// The fixed-centre validation/test protocol: accumulate the model over the
/// sample's stored crop centres (training channel layout: largest component
/// plus the component under the centres) and decode by global argmax.
SampleEval eval_fixed_crops(const Volume3D& vol, CropModel& model,
                            const std::vector<Coord3>& centers, int crop_extent,
                            const Coord3& gt_kp1, const Coord3& gt_kp2);

}  // namespace ttr
