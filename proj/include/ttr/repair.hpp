#ifndef TTR_REPAIR_HPP
#define TTR_REPAIR_HPP

#include <string>
#include <vector>

#include "ttr/coord.hpp"
#include "ttr/inference.hpp"
#include "ttr/volume.hpp"

namespace ttr {

// Bridge one break: union the volume with the capsule of radius r around the
// segment [kp1, kp2] (cylinder plus hemispherical caps; kp1 == kp2 degrades
// to a ball). Expects r >= 0.5 so at least the endpoint voxels are covered.
// Existing foreground is never removed.
Volume3D link_keypoints(const Volume3D& vol, const Coord3& kp1, const Coord3& kp2, double r);

struct RepairEntry {
  Coord3 kp1, kp2;
  double radius = 0.0;
  std::uint32_t pre_components = 0;
  std::uint32_t post_components = 0;
};

struct RepairResult {
  Volume3D volume;
  std::vector<RepairEntry> log;
};

// Bridge every detected pair, in order. The bridge radius for pair i is
// radii[i] when given (branch metadata), otherwise the distance-transform
// value at the pair's snapped kp1 voxel; either way it is floored at 0.5.
// Component counts are logged before and after each bridge (26-connected).
RepairResult repair_volume(const Volume3D& vol, const PairingResult& pairs,
                           const std::vector<double>& radii = {});

// Repair log as a JSON document: {"version":1,"pairs":[{kp1,kp2,radius,
// pre_components,post_components}]}.
std::string repair_log_json(const RepairResult& result);

}  // namespace ttr

#endif
