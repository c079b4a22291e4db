#include "ttr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <json.hpp>

#include "ttr/rng.hpp"
#include "ttr/train.hpp"

namespace ttr {

using nlohmann::json;

Tensor<float> OracleModel::predict(const Tensor<float>& x, const Coord3& origin) {
  const Dims3 extent{x.d(), x.h(), x.w()};
  const std::vector<Coord3> local = {{kp1.z - origin.z, kp1.y - origin.y, kp1.x - origin.x},
                                     {kp2.z - origin.z, kp2.y - origin.y, kp2.x - origin.x}};
  const HeatmapTensor hm = render_gaussian(make_target(local, extent), extent, sigma);
  Tensor<float> out = Tensor<float>::zeros5(1, 2, extent.d, extent.h, extent.w);
  std::copy(hm.data.begin(), hm.data.end(), out.data.begin());
  return out;
}

std::string mode_name(InferenceMode m) {
  return m == InferenceMode::pooled ? "pooled" : "per_component";
}

InferenceMode mode_from_name(const std::string& name) {
  if (name == "pooled") return InferenceMode::pooled;
  if (name == "per_component") return InferenceMode::per_component;
  throw validation_error("unknown inference mode: " + name);
}

namespace {

Coord3 crop_origin(const Coord3& center, const Dims3& extent) {
  return {center.z - extent.d / 2, center.y - extent.h / 2, center.x - extent.w / 2};
}

Tensor<float> raw_input(const Volume3D& vol, const Coord3& center, const Dims3& extent,
                        int channels) {
  const Crop3D crop = crop_centered(vol, center, extent);
  Tensor<float> x = Tensor<float>::zeros5(1, channels, extent.d, extent.h, extent.w);
  for (int c = 0; c < channels; ++c) {
    float* dst = x.channel(0, c);
    for (std::int64_t i = 0; i < extent.voxel_count(); ++i) dst[i] = crop.data[i] ? 1.0f : 0.0f;
  }
  return x;
}

/// accumulator[k][origin + local] += crop[k][local], clipped to the volume.
void add_crop(HeatmapTensor& acc, const Tensor<float>& crop, const Coord3& origin) {
  const Dims3 extent{crop.d(), crop.h(), crop.w()};
  const int k = crop.c();
  const std::int64_t nvox = extent.voxel_count();
  for (int ki = 0; ki < k; ++ki) {
    const float* src = crop.channel(0, ki);
    for (std::int64_t i = 0; i < nvox; ++i) {
      const Coord3 local = extent.coord(i);
      const Coord3 global{origin.z + local.z, origin.y + local.y, origin.x + local.x};
      if (acc.extent.contains(global)) acc.at(ki, global.z, global.y, global.x) += src[i];
    }
  }
}

/// Per-channel argmax over [lo, hi) of the accumulator; ties go to the
/// smaller linear index, matching decode_argmax.
std::vector<Coord3> argmax_in_box(const HeatmapTensor& acc, const Coord3& lo, const Coord3& hi) {
  std::vector<Coord3> out(acc.channels);
  for (int k = 0; k < acc.channels; ++k) {
    float best = -std::numeric_limits<float>::infinity();
    Coord3 best_c{};
    for (int z = lo.z; z < hi.z; ++z)
      for (int y = lo.y; y < hi.y; ++y)
        for (int x = lo.x; x < hi.x; ++x)
          if (acc.at(k, z, y, x) > best) {
            best = acc.at(k, z, y, x);
            best_c = {z, y, x};
          }
    out[k] = best_c;
  }
  return out;
}

Coord3 clamp_to(const Coord3& c, const Dims3& dims) {
  return {std::clamp(c.z, 0, dims.d), std::clamp(c.y, 0, dims.h), std::clamp(c.x, 0, dims.w)};
}

}  // namespace

InferenceResult detect_whole_volume(const Volume3D& vol, CropModel& model,
                                    const InferenceConfig& cfg) {
  if (cfg.T < 1) throw validation_error("inference T must be at least 1");
  if (vol.dims.voxel_count() <= 0) throw validation_error("inference volume is empty");
  const int k = model.out_channels();
  const Dims3 extent{cfg.crop_extent, cfg.crop_extent, cfg.crop_extent};

  InferenceResult res;
  res.cfg = cfg;
  res.accumulator = HeatmapTensor(k, vol.dims);

  const LabelVolume lab =
      filter_small_components(connected_components(vol, 26), cfg.noise_min_voxels);
  if (lab.label_count() < 2) return res;  // nothing left after dropping the largest

  const Volume3D largest_mask = lab.component_mask(1);
  HeatmapTensor own(k, vol.dims);  // this candidate's contributions only

  for (std::uint32_t label = 2; label <= lab.label_count(); ++label) {
    res.candidate_components.push_back(label);
    const std::vector<Coord3> voxels = lab.component_voxels(label);
    const Volume3D comp_mask = lab.component_mask(label);
    Rng rng(mix_seed(cfg.seed, label));

    std::fill(own.data.begin(), own.data.end(), 0.0f);
    Coord3 lo = vol.dims.coord(vol.dims.voxel_count() - 1), hi{0, 0, 0};
    for (int t = 0; t < cfg.T; ++t) {
      const Coord3 center = voxels[rng.next_index(voxels.size())];
      const Coord3 origin = crop_origin(center, extent);
      const Tensor<float> x =
          cfg.raw_crop ? raw_input(vol, center, extent, model.in_channels())
                       : make_net_input(largest_mask, comp_mask, center, extent,
                                        model.in_channels());
      const Tensor<float> pred = model.predict(x, origin);
      add_crop(res.accumulator, pred, origin);
      add_crop(own, pred, origin);
      const Coord3 a = clamp_to(origin, vol.dims);
      const Coord3 b = clamp_to({origin.z + extent.d, origin.y + extent.h, origin.x + extent.w},
                                vol.dims);
      lo = {std::min(lo.z, a.z), std::min(lo.y, a.y), std::min(lo.x, a.x)};
      hi = {std::max(hi.z, b.z), std::max(hi.y, b.y), std::max(hi.x, b.x)};
    }
    res.per_component.push_back({label, argmax_in_box(own, lo, hi)});
  }

  res.keypoints = argmax_in_box(res.accumulator, {0, 0, 0},
                                {vol.dims.d, vol.dims.h, vol.dims.w});
  return res;
}

namespace {

std::pair<Coord3, double> snap_to_component(const Coord3& p, const std::vector<Coord3>& voxels) {
  Coord3 best = voxels.front();
  std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
  for (const Coord3& v : voxels) {
    const std::int64_t d2 = squared_distance(p, v);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = v;
    }
  }
  return {best, std::sqrt(static_cast<double>(best_d2))};
}

}  // namespace

SampleEval eval_fixed_crops(const Volume3D& vol, CropModel& model,
                            const std::vector<Coord3>& centers, int crop_extent,
                            const Coord3& gt_kp1, const Coord3& gt_kp2) {
  if (centers.empty()) throw validation_error("fixed-crop evaluation needs crop centres");
  if (crop_extent < 8 || crop_extent % 8 != 0)
    throw validation_error("crop extent must be a positive multiple of 8");
  const Dims3 extent{crop_extent, crop_extent, crop_extent};

  const LabelVolume lab = connected_components(vol, 26);
  if (lab.label_count() < 2)
    throw validation_error("evaluation sample has no candidate component");
  const std::uint32_t cand =
      lab.labels[lab.dims.index(centers[0].z, centers[0].y, centers[0].x)];
  if (cand < 2) throw validation_error("crop centre is not on a candidate component");

  const Volume3D largest_mask = lab.component_mask(1);
  const Volume3D comp_mask = lab.component_mask(cand);
  HeatmapTensor acc(model.out_channels(), vol.dims);

  SampleEval ev;
  const Coord3 gts[2] = {gt_kp1, gt_kp2};
  for (const Coord3& center : centers) {
    const Coord3 origin = crop_origin(center, extent);
    const Tensor<float> x =
        make_net_input(largest_mask, comp_mask, center, extent, model.in_channels());
    add_crop(acc, model.predict(x, origin), origin);
    for (int kk = 0; kk < 2; ++kk) {
      const Coord3 local{gts[kk].z - origin.z, gts[kk].y - origin.y, gts[kk].x - origin.x};
      if (extent.contains(local)) ev.visible[kk] = true;
    }
  }
  const std::vector<Coord3> dec =
      argmax_in_box(acc, {0, 0, 0}, {vol.dims.d, vol.dims.h, vol.dims.w});
  for (int kk = 0; kk < 2 && kk < static_cast<int>(dec.size()); ++kk) {
    ev.keypoints[kk] = dec[kk];
    ev.dist[kk] = distance(dec[kk], gts[kk]);
  }
  return ev;
}

PairingResult pair_components(const InferenceResult& result, const Volume3D& vol) {
  PairingResult out;
  if (result.candidate_components.empty()) return out;

  const LabelVolume lab =
      filter_small_components(connected_components(vol, 26), result.cfg.noise_min_voxels);
  const std::vector<Coord3> largest_voxels = lab.component_voxels(1);
  if (largest_voxels.empty()) {
    out.warnings.push_back("largest component is empty; nothing to pair");
    return out;
  }

  auto pair_one = [&](std::uint32_t label, const std::vector<Coord3>& kps) {
    if (kps.size() < 2) {
      out.warnings.push_back("component " + std::to_string(label) + ": missing keypoints");
      return;
    }
    const std::vector<Coord3> comp_voxels = lab.component_voxels(label);
    if (comp_voxels.empty()) {
      out.warnings.push_back("component " + std::to_string(label) + " is empty; skipped");
      return;
    }
    PairedComponent pc;
    pc.label = label;
    std::tie(pc.kp1, pc.snap1) = snap_to_component(kps[0], largest_voxels);
    std::tie(pc.kp2, pc.snap2) = snap_to_component(kps[1], comp_voxels);
    out.pairs.push_back(pc);
  };

  if (result.cfg.mode == InferenceMode::per_component) {
    for (const ComponentDetection& det : result.per_component) pair_one(det.label, det.keypoints);
  } else if (!result.keypoints.empty()) {
    // pooled: one pair, attributed to the candidate nearest to kp2
    std::uint32_t best_label = 0;
    std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
    for (std::uint32_t label : result.candidate_components) {
      for (const Coord3& v : lab.component_voxels(label)) {
        const std::int64_t d2 = squared_distance(result.keypoints[1], v);
        if (d2 < best_d2) {
          best_d2 = d2;
          best_label = label;
        }
      }
    }
    if (best_label == 0) {
      out.warnings.push_back("all candidate components are empty; skipped");
      return out;
    }
    pair_one(best_label, result.keypoints);
  }
  return out;
}

namespace {
json coord_json(const Coord3& c) { return json::array({c.z, c.y, c.x}); }
}  // namespace

std::string inference_result_json(const InferenceResult& result, const PairingResult& paired) {
  json j;
  j["version"] = 1;
  j["mode"] = mode_name(result.cfg.mode);
  json kps = json::array();
  for (const Coord3& c : result.keypoints) kps.push_back(coord_json(c));
  j["keypoints"] = kps;
  json per = json::array();
  for (const PairedComponent& pc : paired.pairs) {
    per.push_back({{"label", pc.label},
                   {"kp1", coord_json(pc.kp1)},
                   {"kp2", coord_json(pc.kp2)},
                   {"snap_distances", json::array({pc.snap1, pc.snap2})}});
  }
  j["per_component"] = per;
  json cands = json::array();
  for (std::uint32_t c : result.candidate_components) cands.push_back(c);
  j["candidate_components"] = cands;
  if (!paired.warnings.empty()) j["warnings"] = paired.warnings;
  j["config_echo"] = {{"T", result.cfg.T},
                      {"noise_min_voxels", result.cfg.noise_min_voxels},
                      {"crop_extent", result.cfg.crop_extent},
                      {"mode", mode_name(result.cfg.mode)},
                      {"raw_crop", result.cfg.raw_crop},
                      {"seed", result.cfg.seed}};
  return j.dump(2) + "\n";
}

}  // namespace ttr
