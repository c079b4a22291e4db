#include "ttr/repair.hpp"

#include <algorithm>

#include "json.hpp"

namespace ttr {

using nlohmann::json;

namespace {

json coord_json(const Coord3& c) { return json::array({c.z, c.y, c.x}); }

}  // namespace

Volume3D link_keypoints(const Volume3D& vol, const Coord3& kp1, const Coord3& kp2, double r) {
  Volume3D out = vol;
  paint_capsule(out, Vec3(kp1), Vec3(kp2), r);
  return out;
}

RepairResult repair_volume(const Volume3D& vol, const PairingResult& pairs,
                           const std::vector<double>& radii) {
  RepairResult res;
  res.volume = vol;
  if (pairs.pairs.empty()) return res;

  // Fallback radii come from the input volume's distance field, not the
  // progressively repaired one: the bridge should match the original vessel.
  FloatGrid edt;
  const bool need_edt = radii.size() < pairs.pairs.size();
  if (need_edt) edt = euclidean_distance_transform(vol);

  for (std::size_t i = 0; i < pairs.pairs.size(); ++i) {
    const PairedComponent& pair = pairs.pairs[i];
    RepairEntry entry;
    entry.kp1 = pair.kp1;
    entry.kp2 = pair.kp2;
    const double raw = i < radii.size()
                           ? radii[i]
                           : static_cast<double>(
                                 edt.data[edt.dims.index(pair.kp1.z, pair.kp1.y, pair.kp1.x)]);
    entry.radius = std::max(raw, 0.5);
    entry.pre_components = connected_components(res.volume, 26).label_count();
    paint_capsule(res.volume, Vec3(pair.kp1), Vec3(pair.kp2), entry.radius);
    entry.post_components = connected_components(res.volume, 26).label_count();
    res.log.push_back(entry);
  }
  return res;
}

std::string repair_log_json(const RepairResult& result) {
  json pairs = json::array();
  for (const RepairEntry& e : result.log)
    pairs.push_back({{"kp1", coord_json(e.kp1)},
                     {"kp2", coord_json(e.kp2)},
                     {"radius", e.radius},
                     {"pre_components", e.pre_components},
                     {"post_components", e.post_components}});
  const json doc = {{"version", 1}, {"pairs", pairs}};
  return doc.dump(2) + "\n";
}

}  // namespace ttr
