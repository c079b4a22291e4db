#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "ttr/repair.hpp"
#include "ttr/rng.hpp"
#include "ttr/synth.hpp"

using namespace ttr;

namespace {

// Independent point-to-segment distance: clamped projection, written out
// long-hand so the library helper is not the oracle for itself.
double seg_dist(double pz, double py, double px, double az, double ay, double ax, double bz,
                double by, double bx) {
  const double dz = bz - az, dy = by - ay, dx = bx - ax;
  const double len2 = dz * dz + dy * dy + dx * dx;
  double t = 0.0;
  if (len2 > 0.0) {
    t = ((pz - az) * dz + (py - ay) * dy + (px - ax) * dx) / len2;
    t = std::clamp(t, 0.0, 1.0);
  }
  const double qz = az + t * dz, qy = ay + t * dy, qx = ax + t * dx;
  return std::sqrt((pz - qz) * (pz - qz) + (py - qy) * (py - qy) + (px - qx) * (px - qx));
}

std::pair<Volume3D, BranchGraph> first_valid_phantom(PhantomParams params,
                                                     std::uint64_t seed_start = 1) {
  for (std::uint64_t s = seed_start; s < seed_start + 50; ++s) {
    params.seed = s;
    try {
      return generate_phantom_tree(params);
    } catch (const validation_error&) {
      continue;
    }
  }
  throw std::runtime_error("no fitting phantom seed in range");
}

DisconnectionSample first_break_sample() {
  PhantomParams p;
  p.dims = {56, 48, 48};
  p.depth = 2;
  auto [vol, graph] = first_valid_phantom(p);
  Rng rng(mix_seed(77, 1));
  for (int attempt = 0; attempt < 20; ++attempt) {
    try {
      return synthesize_sample(vol, graph, select_branch(graph, rng), rng);
    } catch (const validation_error&) {
      continue;
    }
  }
  throw std::runtime_error("no valid break sample");
}

std::uint64_t count_fg(const Volume3D& v) {
  return static_cast<std::uint64_t>(std::count(v.data.begin(), v.data.end(), std::uint8_t(1)));
}

// slab plus two detached stubs: three 26-connected components
Volume3D two_stub_fixture() {
  Volume3D v({26, 16, 16});
  for (int z = 0; z < 6; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) v.data[v.dims.index(z, y, x)] = 1;
  for (int z = 12; z < 16; ++z)
    for (int y = 3; y < 6; ++y)
      for (int x = 3; x < 6; ++x) v.data[v.dims.index(z, y, x)] = 1;
  for (int z = 14; z < 18; ++z)
    for (int y = 10; y < 13; ++y)
      for (int x = 10; x < 13; ++x) v.data[v.dims.index(z, y, x)] = 1;
  return v;
}

}  // namespace

TEST_SUITE("repair.link") {
  TEST_CASE("degenerate segment paints a ball") {
    Volume3D vol({16, 16, 16});
    const Coord3 kp{8, 7, 9};
    const Volume3D out = link_keypoints(vol, kp, kp, 2.5);
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          const double d = std::sqrt(double((z - kp.z) * (z - kp.z) + (y - kp.y) * (y - kp.y) +
                                            (x - kp.x) * (x - kp.x)));
          CAPTURE(z);
          CAPTURE(y);
          CAPTURE(x);
          REQUIRE(out.data[out.dims.index(z, y, x)] == (d <= 2.5 ? 1 : 0));
        }
  }

  TEST_CASE("axis-aligned capsule matches the exhaustive segment oracle") {
    Volume3D vol({12, 16, 20});
    const Coord3 a{5, 8, 4}, b{5, 8, 14};
    const Volume3D out = link_keypoints(vol, a, b, 2.0);
    std::uint64_t added = 0;
    for (int z = 0; z < 12; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 20; ++x) {
          const double d = seg_dist(z, y, x, a.z, a.y, a.x, b.z, b.y, b.x);
          CAPTURE(z);
          CAPTURE(y);
          CAPTURE(x);
          REQUIRE(out.data[out.dims.index(z, y, x)] == (d <= 2.0 ? 1 : 0));
          added += out.data[out.dims.index(z, y, x)];
        }
    // voxelized capsule stays under the analytic volume plus discretization slack
    const double bound = 3.14159265358979 * 4.0 * (10.0 + 8.0 / 3.0) * 1.5;
    CHECK(static_cast<double>(added) <= bound);
  }

  TEST_CASE("oblique capsule matches the oracle and keeps old foreground") {
    Volume3D vol({20, 20, 20});
    vol.data[vol.dims.index(1, 1, 1)] = 1;  // far from the capsule
    const Coord3 a{4, 5, 6}, b{15, 13, 11};
    const Volume3D out = link_keypoints(vol, a, b, 1.8);
    for (int z = 0; z < 20; ++z)
      for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
          const bool inside = seg_dist(z, y, x, a.z, a.y, a.x, b.z, b.y, b.x) <= 1.8;
          const bool old_fg = z == 1 && y == 1 && x == 1;
          CAPTURE(z);
          CAPTURE(y);
          CAPTURE(x);
          REQUIRE(out.data[out.dims.index(z, y, x)] == ((inside || old_fg) ? 1 : 0));
        }
  }

  TEST_CASE("ground-truth bridge reconnects a synthesized break") {
    const DisconnectionSample s = first_break_sample();
    CHECK(connected_components(s.disconnected, 26).label_count() == 2);
    const Volume3D repaired =
        link_keypoints(s.disconnected, s.kp1, s.kp2, s.branch_mean_radius);
    const LabelVolume lab = connected_components(repaired, 26);
    CHECK(lab.label_count() == 1);
    CHECK(lab.labels[lab.dims.index(s.kp1.z, s.kp1.y, s.kp1.x)] ==
          lab.labels[lab.dims.index(s.kp2.z, s.kp2.y, s.kp2.x)]);
    // monotone: nothing was removed
    for (std::size_t i = 0; i < repaired.data.size(); ++i)
      if (s.disconnected.data[i]) REQUIRE(repaired.data[i] == 1);
  }
}

TEST_SUITE("repair.volume") {
  TEST_CASE("zero pairs is the identity") {
    const Volume3D vol = two_stub_fixture();
    const RepairResult res = repair_volume(vol, PairingResult{});
    CHECK(res.volume.data == vol.data);
    CHECK(res.log.empty());
  }

  TEST_CASE("metadata radius bridges a synthesized break") {
    const DisconnectionSample s = first_break_sample();
    PairingResult pairs;
    pairs.pairs.push_back({2, s.kp1, s.kp2, 0.0, 0.0});
    const RepairResult res =
        repair_volume(s.disconnected, pairs, {s.branch_mean_radius});
    REQUIRE(res.log.size() == 1);
    CHECK(res.log[0].radius == doctest::Approx(std::max(s.branch_mean_radius, 0.5)));
    CHECK(res.log[0].pre_components == 2);
    CHECK(res.log[0].post_components == 1);
    CHECK(connected_components(res.volume, 26).label_count() == 1);
  }

  TEST_CASE("fallback radius is the distance-field value at snapped kp1") {
    Volume3D vol({12, 12, 12});
    for (int z = 2; z <= 8; ++z)
      for (int y = 2; y <= 8; ++y)
        for (int x = 2; x <= 8; ++x) vol.data[vol.dims.index(z, y, x)] = 1;
    vol.data[vol.dims.index(11, 11, 11)] = 1;  // second component
    PairingResult pairs;
    pairs.pairs.push_back({2, Coord3{5, 5, 5}, Coord3{11, 11, 11}, 0.0, 0.0});
    const RepairResult res = repair_volume(vol, pairs);
    REQUIRE(res.log.size() == 1);
    // centre of the 7-cube: nearest background voxel centre is 4 away
    CHECK(res.log[0].radius == doctest::Approx(4.0));
    CHECK(res.log[0].pre_components == 2);
    CHECK(res.log[0].post_components == 1);
  }

  TEST_CASE("tiny radii are floored so endpoints are painted") {
    Volume3D vol({8, 8, 8});
    PairingResult pairs;
    pairs.pairs.push_back({2, Coord3{2, 2, 2}, Coord3{5, 5, 5}, 0.0, 0.0});
    const RepairResult res = repair_volume(vol, pairs, {0.1});
    CHECK(res.log[0].radius == doctest::Approx(0.5));
    CHECK(res.volume.data[res.volume.dims.index(2, 2, 2)] == 1);
    CHECK(res.volume.data[res.volume.dims.index(5, 5, 5)] == 1);
  }

  TEST_CASE("two pairs bridge three components into one") {
    const Volume3D vol = two_stub_fixture();
    CHECK(connected_components(vol, 26).label_count() == 3);
    PairingResult pairs;
    pairs.pairs.push_back({2, Coord3{5, 4, 4}, Coord3{12, 4, 4}, 0.0, 0.0});
    pairs.pairs.push_back({3, Coord3{5, 11, 11}, Coord3{14, 11, 11}, 0.0, 0.0});
    const RepairResult res = repair_volume(vol, pairs, {1.5, 1.5});
    REQUIRE(res.log.size() == 2);
    CHECK(res.log[0].pre_components == 3);
    CHECK(res.log[0].post_components == 2);
    CHECK(res.log[1].pre_components == 2);
    CHECK(res.log[1].post_components == 1);
    CHECK(connected_components(res.volume, 26).label_count() == 1);
  }

  TEST_CASE("repair log round-trips through JSON") {
    const Volume3D vol = two_stub_fixture();
    PairingResult pairs;
    pairs.pairs.push_back({2, Coord3{5, 4, 4}, Coord3{12, 4, 4}, 0.0, 0.0});
    const RepairResult res = repair_volume(vol, pairs, {2.0});
    const auto doc = nlohmann::json::parse(repair_log_json(res));
    CHECK(doc.at("version") == 1);
    REQUIRE(doc.at("pairs").size() == 1);
    const auto& e = doc.at("pairs")[0];
    CHECK(e.at("kp1") == nlohmann::json::array({5, 4, 4}));
    CHECK(e.at("kp2") == nlohmann::json::array({12, 4, 4}));
    CHECK(e.at("radius") == doctest::Approx(2.0));
    CHECK(e.at("pre_components") == 3);
    CHECK(e.at("post_components") == 2);
  }
}

TEST_SUITE("repair.properties") {
  TEST_CASE("repaired foreground is always a superset") {
    Rng rng(mix_seed(4242, 0));
    for (int trial = 0; trial < 20; ++trial) {
      Volume3D vol({14, 14, 14});
      for (auto& v : vol.data) v = rng.next_double() < 0.2 ? 1 : 0;
      const Coord3 a{static_cast<int>(rng.next_index(14)), static_cast<int>(rng.next_index(14)),
                     static_cast<int>(rng.next_index(14))};
      const Coord3 b{static_cast<int>(rng.next_index(14)), static_cast<int>(rng.next_index(14)),
                     static_cast<int>(rng.next_index(14))};
      const double r = 0.5 + 2.5 * rng.next_double();
      const Volume3D out = link_keypoints(vol, a, b, r);
      for (std::size_t i = 0; i < vol.data.size(); ++i)
        if (vol.data[i]) REQUIRE(out.data[i] == 1);
    }
  }
}
