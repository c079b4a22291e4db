#pragma once

#include <vector>

#include "ttr/coord.hpp"
#include "ttr/errors.hpp"

namespace ttr {

// K-channel float field over a crop, channel-major then x-fastest.
struct HeatmapTensor {
  int channels = 0;
  Dims3 extent{};
  std::vector<float> data;

  HeatmapTensor() = default;
  HeatmapTensor(int k, Dims3 e) : channels(k), extent(e) {
    data.assign(static_cast<std::size_t>(k) * e.voxel_count(), 0.0f);
  }

  float at(int k, int z, int y, int x) const {
    return data[static_cast<std::size_t>(k) * extent.voxel_count() + extent.index(z, y, x)];
  }
  float& at(int k, int z, int y, int x) {
    return data[static_cast<std::size_t>(k) * extent.voxel_count() + extent.index(z, y, x)];
  }
};

// Crop-frame keypoint annotation. Coordinates may fall outside the crop;
// visibility[k] must mirror the bounds check.
struct KeypointTarget {
  std::vector<Coord3> coords;
  std::vector<bool> visibility;
};

KeypointTarget make_target(const std::vector<Coord3>& local_coords, Dims3 extent);

// Peak-1 Gaussian per visible channel, evaluated over the full grid
// (no truncation window). Invisible channels are all-zero.
HeatmapTensor render_gaussian(const KeypointTarget& target, Dims3 extent, double sigma = 2.5);

// (1/K) * sum_k [visible_k] * sum-of-squared differences over channel k.
// The inner norm is a plain sum, not a voxel average.
double kmse_loss(const HeatmapTensor& pred, const HeatmapTensor& gt,
                 const std::vector<bool>& visibility);

// Per-channel argmax coordinate; ties resolve to the smallest linear index.
std::vector<Coord3> decode_argmax(const HeatmapTensor& hm);

}  // namespace ttr
