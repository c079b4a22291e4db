#include "ttr/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "ttr/rng.hpp"

namespace ttr {

namespace {
void require(bool cond, const std::string& msg) {
  if (!cond) throw validation_error(msg);
}
}  // namespace

PreparedSample prepare_sample(const Volume3D& vol, const Coord3& kp1, const Coord3& kp2,
                              std::vector<Coord3> fixed_centers) {
  require(vol.dims.contains(kp1) && vol.at(kp1), "kp1 is not a foreground voxel");
  require(vol.dims.contains(kp2) && vol.at(kp2), "kp2 is not a foreground voxel");
  const LabelVolume lab = connected_components(vol, 26);
  require(lab.label_count() >= 2, "sample volume must have at least two components");
  const std::uint32_t largest = 1;
  const std::uint32_t kp2_label = lab.at(kp2);
  require(lab.at(kp1) == largest, "kp1 is not in the largest component");
  require(kp2_label != largest, "kp2 lies in the largest component");

  PreparedSample out;
  out.largest_mask = lab.component_mask(largest);
  out.largest_mask.spacing = vol.spacing;
  out.kp2_mask = lab.component_mask(kp2_label);
  out.kp2_mask.spacing = vol.spacing;
  out.kp2_voxels = lab.component_voxels(kp2_label);
  out.kp1 = kp1;
  out.kp2 = kp2;
  out.fixed_centers = std::move(fixed_centers);
  return out;
}

Tensor<float> make_net_input(const Volume3D& largest_mask, const Volume3D& comp_mask,
                             const Coord3& center, const Dims3& extent, int channels) {
  require(channels == 1 || channels == 2, "net input must have 1 or 2 channels");
  require(largest_mask.dims == comp_mask.dims, "component masks disagree on dims");
  const Crop3D main_crop = crop_centered(largest_mask, center, extent);
  const Crop3D comp_crop = crop_centered(comp_mask, center, extent);
  Tensor<float> x = Tensor<float>::zeros5(1, channels, extent.d, extent.h, extent.w);
  const std::int64_t nvox = extent.voxel_count();
  if (channels == 2) {
    float* a = x.channel(0, 0);
    float* b = x.channel(0, 1);
    for (std::int64_t i = 0; i < nvox; ++i) {
      a[i] = main_crop.data[i] ? 1.0f : 0.0f;
      b[i] = comp_crop.data[i] ? 1.0f : 0.0f;
    }
  } else {
    float* a = x.channel(0, 0);
    for (std::int64_t i = 0; i < nvox; ++i)
      a[i] = (main_crop.data[i] || comp_crop.data[i]) ? 1.0f : 0.0f;
  }
  return x;
}

std::pair<Tensor<float>, KeypointTarget> make_training_input(const PreparedSample& sample,
                                                             const Coord3& crop_center,
                                                             int channels, const Dims3& extent) {
  Tensor<float> x = make_net_input(sample.largest_mask, sample.kp2_mask, crop_center, extent,
                                   channels);
  const Coord3 origin{crop_center.z - extent.d / 2, crop_center.y - extent.h / 2,
                      crop_center.x - extent.w / 2};
  const std::vector<Coord3> local = {
      {sample.kp1.z - origin.z, sample.kp1.y - origin.y, sample.kp1.x - origin.x},
      {sample.kp2.z - origin.z, sample.kp2.y - origin.y, sample.kp2.x - origin.x}};
  return {std::move(x), make_target(local, extent)};
}

double kmse_batch_with_grad(const Tensor<float>& pred,
                            const std::vector<HeatmapTensor>& targets,
                            const std::vector<std::vector<bool>>& visibility,
                            Tensor<float>& grad_out) {
  const int n = pred.n();
  const int k = pred.c();
  require(static_cast<int>(targets.size()) == n, "target count does not match batch");
  require(static_cast<int>(visibility.size()) == n, "visibility count does not match batch");
  const Dims3 extent{pred.d(), pred.h(), pred.w()};
  const std::int64_t nvox = extent.voxel_count();

  grad_out = Tensor<float>(pred.dims);
  double total = 0.0;
  for (int ni = 0; ni < n; ++ni) {
    require(targets[ni].channels == k && targets[ni].extent == extent,
            "target shape does not match prediction");
    require(static_cast<int>(visibility[ni].size()) == k,
            "visibility length does not match channels");
    const double scale = 2.0 / (static_cast<double>(k) * n);
    double sample_loss = 0.0;
    for (int ki = 0; ki < k; ++ki) {
      if (!visibility[ni][ki]) continue;  // hidden channel: no loss, no gradient
      const float* p = pred.channel(ni, ki);
      const float* g = targets[ni].data.data() + static_cast<std::size_t>(ki) * nvox;
      float* go = grad_out.channel(ni, ki);
      double ssd = 0.0;
      for (std::int64_t i = 0; i < nvox; ++i) {
        const double diff = static_cast<double>(p[i]) - g[i];
        ssd += diff * diff;
        go[i] = static_cast<float>(scale * diff);
      }
      sample_loss += ssd;
    }
    total += sample_loss / k;
  }
  return total / n;
}

namespace {

struct CropBatch {
  Tensor<float> x;
  std::vector<HeatmapTensor> gts;
  std::vector<std::vector<bool>> vis;
};

CropBatch assemble_batch(const std::vector<std::pair<const PreparedSample*, Coord3>>& crops,
                         int channels, const Dims3& extent, double sigma) {
  const int n = static_cast<int>(crops.size());
  CropBatch batch;
  batch.x = Tensor<float>::zeros5(n, channels, extent.d, extent.h, extent.w);
  batch.gts.reserve(n);
  batch.vis.reserve(n);
  const std::int64_t row = static_cast<std::int64_t>(channels) * extent.voxel_count();
  for (int b = 0; b < n; ++b) {
    const auto& [sample, center] = crops[b];
    auto [xi, target] = make_training_input(*sample, center, channels, extent);
    std::copy(xi.data.begin(), xi.data.end(), batch.x.data.begin() + b * row);
    batch.gts.push_back(render_gaussian(target, extent, sigma));
    batch.vis.push_back(target.visibility);
  }
  return batch;
}

}  // namespace

TrainResult train(UNet3D<float>& net, const std::vector<PreparedSample>& train_set,
                  const std::vector<PreparedSample>& val_set, const TrainConfig& cfg) {
  require(!train_set.empty(), "training set is empty");
  require(!val_set.empty(), "validation set is empty");
  require(cfg.batch_size >= 1, "batch_size must be positive");
  require(cfg.max_epochs >= 1, "max_epochs must be positive");
  require(cfg.patience >= 0, "patience must be non-negative");
  require(cfg.crop_extent >= 8 && cfg.crop_extent % 8 == 0,
          "crop_extent must be a positive multiple of 8");
  for (const auto& s : val_set)
    require(!s.fixed_centers.empty(), "val sample has no stored crop centres");
  for (const auto& s : train_set)
    require(!s.kp2_voxels.empty(), "train sample has an empty kp2 component");

  if (!cfg.init_from.empty()) load_state(net, load_checkpoint(cfg.init_from));

  const int channels = net.cfg.in_channels;
  const Dims3 extent{cfg.crop_extent, cfg.crop_extent, cfg.crop_extent};
  AdamW<float> opt;
  const auto params = net.parameters();

  TrainResult res;
  res.best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng er(mix_seed(cfg.seed, 0x45504f43ULL + static_cast<std::uint64_t>(epoch)));

    // Fresh crop centre per sample (drawn in dataset order, before shuffling,
    // so the stream does not depend on the visit order).
    std::vector<Coord3> centers(train_set.size());
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      const auto& vox = train_set[i].kp2_voxels;
      centers[i] = vox[er.next_index(vox.size())];
    }
    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[er.next_index(i)]);

    net.train();
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), pos + cfg.batch_size);
      std::vector<std::pair<const PreparedSample*, Coord3>> crops;
      crops.reserve(end - pos);
      for (std::size_t i = pos; i < end; ++i)
        crops.emplace_back(&train_set[order[i]], centers[order[i]]);

      CropBatch batch = assemble_batch(crops, channels, extent, cfg.sigma);
      Tensor<float> pred = net.forward(batch.x);
      Tensor<float> grad;
      const double loss = kmse_batch_with_grad(pred, batch.gts, batch.vis, grad);
      if (!std::isfinite(loss)) throw numeric_error("non-finite training loss");
      net.zero_grad();
      net.backward(grad);
      opt.step(params);
      res.step_loss.push_back(loss);
    }

    net.eval();
    double vsum = 0.0;
    std::int64_t vcrops = 0;
    for (const auto& s : val_set) {
      for (const auto& center : s.fixed_centers) {
        CropBatch one = assemble_batch({{&s, center}}, channels, extent, cfg.sigma);
        Tensor<float> pred = net.forward(one.x);
        Tensor<float> grad;
        vsum += kmse_batch_with_grad(pred, one.gts, one.vis, grad);
        ++vcrops;
      }
    }
    const double vloss = vsum / static_cast<double>(vcrops);
    if (!std::isfinite(vloss)) throw numeric_error("non-finite validation loss");
    res.val_loss.push_back(vloss);
    res.epochs_run = epoch + 1;

    if (vloss < res.best_val) {
      res.best_val = vloss;
      res.best_epoch = epoch;
      res.best_state = state_dict(net);
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }

  load_state(net, res.best_state);  // leave the caller with the selected model
  return res;
}

}  // namespace ttr
