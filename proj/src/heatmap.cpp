#include "ttr/heatmap.hpp"

#include <cmath>

namespace ttr {

KeypointTarget make_target(const std::vector<Coord3>& local_coords, Dims3 extent) {
  KeypointTarget t;
  t.coords = local_coords;
  t.visibility.reserve(local_coords.size());
  for (const auto& c : local_coords) t.visibility.push_back(extent.contains(c));
  return t;
}

HeatmapTensor render_gaussian(const KeypointTarget& target, Dims3 extent, double sigma) {
  if (sigma <= 0.0) throw validation_error("sigma must be positive");
  if (target.coords.size() != target.visibility.size())
    throw validation_error("keypoint target coord/visibility size mismatch");
  const int k_count = static_cast<int>(target.coords.size());
  HeatmapTensor hm(k_count, extent);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int k = 0; k < k_count; ++k) {
    if (!target.visibility[k]) continue;
    const Coord3 c = target.coords[k];
    std::size_t idx = static_cast<std::size_t>(k) * extent.voxel_count();
    for (int z = 0; z < extent.d; ++z) {
      const double dz2 = static_cast<double>(z - c.z) * (z - c.z);
      for (int y = 0; y < extent.h; ++y) {
        const double dy2 = static_cast<double>(y - c.y) * (y - c.y);
        for (int x = 0; x < extent.w; ++x, ++idx) {
          const double dx2 = static_cast<double>(x - c.x) * (x - c.x);
          hm.data[idx] = static_cast<float>(std::exp(-(dz2 + dy2 + dx2) * inv));
        }
      }
    }
  }
  return hm;
}

double kmse_loss(const HeatmapTensor& pred, const HeatmapTensor& gt,
                 const std::vector<bool>& visibility) {
  if (pred.channels != gt.channels || !(pred.extent == gt.extent))
    throw validation_error("heatmap shape mismatch");
  if (static_cast<int>(visibility.size()) != pred.channels)
    throw validation_error("visibility size mismatch");
  const std::size_t per_channel = static_cast<std::size_t>(pred.extent.voxel_count());
  double total = 0.0;
  for (int k = 0; k < pred.channels; ++k) {
    if (!visibility[k]) continue;
    const std::size_t base = static_cast<std::size_t>(k) * per_channel;
    double acc = 0.0;
    for (std::size_t i = 0; i < per_channel; ++i) {
      const double diff = static_cast<double>(pred.data[base + i]) - gt.data[base + i];
      acc += diff * diff;
    }
    total += acc;
  }
  return total / pred.channels;
}

std::vector<Coord3> decode_argmax(const HeatmapTensor& hm) {
  const std::size_t per_channel = static_cast<std::size_t>(hm.extent.voxel_count());
  std::vector<Coord3> out;
  out.reserve(hm.channels);
  for (int k = 0; k < hm.channels; ++k) {
    const std::size_t base = static_cast<std::size_t>(k) * per_channel;
    std::size_t best = 0;
    for (std::size_t i = 1; i < per_channel; ++i)
      if (hm.data[base + i] > hm.data[base + best]) best = i;
    out.push_back(hm.extent.coord(static_cast<std::int64_t>(best)));
  }
  return out;
}

}  // namespace ttr
