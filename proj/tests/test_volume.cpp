#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "oracles.hpp"
#include "ttr/volume.hpp"

using namespace ttr;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

// Same partition, impl side additionally sorted by component size.
void check_labels_match_oracle(const Volume3D& vol, int connectivity) {
  const LabelVolume lab = connected_components(vol, connectivity);
  const auto [ref, ref_count] = oracle::flood_fill_components(vol, connectivity);
  REQUIRE(lab.label_count() == ref_count);
  std::map<std::uint32_t, std::uint32_t> fwd, bwd;
  for (std::int64_t i = 0; i < vol.dims.voxel_count(); ++i) {
    REQUIRE((lab.labels[i] == 0) == (ref[i] == 0));
    if (lab.labels[i] == 0) continue;
    auto [it, inserted] = fwd.emplace(lab.labels[i], ref[i]);
    REQUIRE(it->second == ref[i]);
    auto [it2, inserted2] = bwd.emplace(ref[i], lab.labels[i]);
    REQUIRE(it2->second == lab.labels[i]);
  }
  // size ordering invariant
  for (std::uint32_t l = 2; l <= lab.label_count(); ++l)
    REQUIRE(lab.component_sizes[l - 1] <= lab.component_sizes[l - 2]);
  // sizes are exact counts
  std::vector<std::uint64_t> counts(lab.label_count(), 0);
  for (auto l : lab.labels)
    if (l) ++counts[l - 1];
  for (std::uint32_t l = 1; l <= lab.label_count(); ++l)
    REQUIRE(counts[l - 1] == lab.component_sizes[l - 1]);
}

}  // namespace

TEST_SUITE("volume.ccl") {
  TEST_CASE("single foreground voxel is one component of size 1") {
    Volume3D vol({3, 3, 3});
    vol.set(1, 1, 1, true);
    const auto lab = connected_components(vol, 26);
    CHECK(lab.label_count() == 1);
    CHECK(lab.size_of(1) == 1);
  }

  TEST_CASE("diagonal voxels merge under 26 but not 6") {
    Volume3D vol({2, 2, 2});
    vol.set(0, 0, 0, true);
    vol.set(1, 1, 1, true);
    CHECK(connected_components(vol, 26).label_count() == 1);
    CHECK(connected_components(vol, 6).label_count() == 2);
  }

  TEST_CASE("two parallel tubes labeled by size order") {
    Volume3D vol({20, 12, 12});
    for (int z = 0; z < 18; ++z) vol.set(z, 2, 2, true);
    for (int z = 0; z < 9; ++z) vol.set(z, 2, 7, true);  // 5 voxels apart, shorter
    const auto lab = connected_components(vol, 26);
    REQUIRE(lab.label_count() == 2);
    CHECK(lab.size_of(1) == 18);
    CHECK(lab.size_of(2) == 9);
    CHECK(lab.at({0, 2, 2}) == 1);
    CHECK(lab.at({0, 2, 7}) == 2);
  }

  TEST_CASE("empty volume yields zero components") {
    Volume3D vol({4, 4, 4});
    CHECK(connected_components(vol, 26).label_count() == 0);
  }

  TEST_CASE("matches flood-fill oracle on random volumes") {
    Rng rng(20240601);
    for (int trial = 0; trial < 40; ++trial) {
      const Dims3 dims{rng.uniform_int(3, 24), rng.uniform_int(3, 24), rng.uniform_int(3, 24)};
      const double density = rng.uniform(0.05, 0.6);
      const Volume3D vol = oracle::random_volume(rng, dims, density);
      for (int conn : {6, 18, 26}) check_labels_match_oracle(vol, conn);
    }
  }
}

TEST_SUITE("volume.filtering") {
  namespace {
    // blobs of the requested sizes, far enough apart to stay separate
    Volume3D blob_volume(const std::vector<int>& sizes) {
      Volume3D vol({static_cast<int>(sizes.size()) * 4, 8, 128});
      for (std::size_t b = 0; b < sizes.size(); ++b)
        for (int i = 0; i < sizes[b]; ++i)
          vol.set(static_cast<int>(b) * 4, 2, i, true);
      return vol;
    }
  }

  TEST_CASE("min_voxels 1 is the identity") {
    const auto lab = connected_components(blob_volume({7, 3}), 26);
    const auto filtered = filter_small_components(lab, 1);
    CHECK(filtered.labels == lab.labels);
    CHECK(filtered.component_sizes == lab.component_sizes);
  }

  TEST_CASE("drops components below threshold") {
    const auto lab = connected_components(blob_volume({100, 3}), 26);
    const auto filtered = filter_small_components(lab, 5);
    REQUIRE(filtered.label_count() == 1);
    CHECK(filtered.size_of(1) == 100);
  }

  TEST_CASE("recompacts labels preserving size order") {
    const auto lab = connected_components(blob_volume({50, 5, 4}), 26);
    const auto filtered = filter_small_components(lab, 5);
    REQUIRE(filtered.label_count() == 2);
    CHECK(filtered.size_of(1) == 50);
    CHECK(filtered.size_of(2) == 5);
  }

  TEST_CASE("remove_largest_component") {
    SUBCASE("single component leaves empty labeling") {
      const auto lab = connected_components(blob_volume({9}), 26);
      CHECK(remove_largest_component(lab).label_count() == 0);
    }
    SUBCASE("drops label 1, recompacts the rest") {
      const auto lab = connected_components(blob_volume({100, 7, 3}), 26);
      const auto rest = remove_largest_component(lab);
      REQUIRE(rest.label_count() == 2);
      CHECK(rest.size_of(1) == 7);
      CHECK(rest.size_of(2) == 3);
    }
    SUBCASE("empty labeling throws") {
      const auto lab = connected_components(Volume3D({2, 2, 2}), 26);
      CHECK_THROWS_WITH_AS(remove_largest_component(lab), doctest::Contains("no components"),
                           validation_error);
    }
    SUBCASE("size tie removes the smaller minimum linear index") {
      Volume3D vol({1, 1, 10});
      vol.set(0, 0, 1, true);
      vol.set(0, 0, 2, true);
      vol.set(0, 0, 6, true);
      vol.set(0, 0, 7, true);
      const auto lab = connected_components(vol, 26);
      const auto rest = remove_largest_component(lab);
      REQUIRE(rest.label_count() == 1);
      CHECK(rest.at({0, 0, 6}) == 1);  // earlier-index tie winner was removed
      CHECK(rest.at({0, 0, 1}) == 0);
    }
  }
}

TEST_SUITE("volume.crop") {
  TEST_CASE("corner crop zero-fills out-of-bounds region") {
    Volume3D vol({10, 10, 10});
    for (auto& v : vol.data) v = 1;
    const auto crop = crop_centered(vol, {0, 0, 0}, {8, 8, 8});
    CHECK(crop.origin == Coord3{-4, -4, -4});
    std::int64_t ones = 0;
    for (auto v : crop.data) ones += v;
    CHECK(ones == 4 * 4 * 4);
    CHECK(!crop.at(0, 0, 0));
    CHECK(crop.at(4, 4, 4));
  }

  TEST_CASE("full-extent crop of odd volume is the identity") {
    Rng rng(7);
    const Volume3D vol = oracle::random_volume(rng, {9, 9, 9}, 0.4);
    const auto crop = crop_centered(vol, {4, 4, 4}, {9, 9, 9});
    CHECK(crop.origin == Coord3{0, 0, 0});
    CHECK(crop.data == vol.data);
  }

  TEST_CASE("origin arithmetic") {
    Volume3D vol({100, 100, 100});
    const auto crop = crop_centered(vol, {50, 50, 50}, {80, 80, 80});
    CHECK(crop.origin == Coord3{10, 10, 10});
  }

  TEST_CASE("center outside volume throws") {
    Volume3D vol({10, 10, 10});
    CHECK_THROWS_AS(crop_centered(vol, {10, 0, 0}, {4, 4, 4}), validation_error);
  }

  TEST_CASE("in-bounds voxels map losslessly") {
    Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
      const Volume3D vol = oracle::random_volume(rng, {12, 10, 14}, 0.3);
      const Coord3 center{rng.uniform_int(0, 11), rng.uniform_int(0, 9), rng.uniform_int(0, 13)};
      const Dims3 extent{rng.uniform_int(1, 9), rng.uniform_int(1, 9), rng.uniform_int(1, 9)};
      const auto crop = crop_centered(vol, center, extent);
      for (int z = 0; z < extent.d; ++z)
        for (int y = 0; y < extent.h; ++y)
          for (int x = 0; x < extent.w; ++x) {
            const Coord3 parent = crop.to_parent({z, y, x});
            const bool expect = vol.dims.contains(parent) && vol.at(parent);
            CHECK(crop.at(z, y, x) == expect);
          }
    }
  }
}

TEST_SUITE("volume.morphology") {
  TEST_CASE("radius 0 is the identity") {
    Rng rng(11);
    const Volume3D vol = oracle::random_volume(rng, {8, 8, 8}, 0.3);
    CHECK(dilate_ball(vol, 0).data == vol.data);
    CHECK(erode_ball(vol, 0).data == vol.data);
  }

  TEST_CASE("single voxel dilated by 1 is the 6-neighborhood plus center") {
    Volume3D vol({5, 5, 5});
    vol.set(2, 2, 2, true);
    const auto dil = dilate_ball(vol, 1);
    CHECK(dil.foreground_count() == 7);
    CHECK(dil.at(2, 2, 2));
    CHECK(dil.at(1, 2, 2));
    CHECK(dil.at(3, 2, 2));
    CHECK(dil.at(2, 1, 2));
    CHECK(dil.at(2, 3, 2));
    CHECK(dil.at(2, 2, 1));
    CHECK(dil.at(2, 2, 3));
    CHECK(!dil.at(1, 1, 2));
  }

  TEST_CASE("closing a solid ball is a superset of it") {
    Volume3D ball({16, 16, 16});
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          if ((z - 8) * (z - 8) + (y - 8) * (y - 8) + (x - 8) * (x - 8) <= 25)
            ball.set(z, y, x, true);
    const auto closed = erode_ball(dilate_ball(ball, 2), 2);
    for (std::int64_t i = 0; i < ball.dims.voxel_count(); ++i)
      if (ball.data[i]) REQUIRE(closed.data[i]);
  }

  TEST_CASE("matches offset-enumeration oracle on random volumes") {
    Rng rng(20240602);
    for (int trial = 0; trial < 25; ++trial) {
      const Dims3 dims{rng.uniform_int(3, 20), rng.uniform_int(3, 20), rng.uniform_int(3, 20)};
      const Volume3D vol = oracle::random_volume(rng, dims, rng.uniform(0.1, 0.7));
      const double radius = rng.uniform(0.5, 3.5);
      CHECK(dilate_ball(vol, radius).data == oracle::dilate_by_offsets(vol, radius).data);
      CHECK(erode_ball(vol, radius).data == oracle::erode_by_offsets(vol, radius).data);
    }
  }

  TEST_CASE("monotone dilation, anti-extensive erosion, duality on padded domain") {
    Rng rng(20240603);
    for (int trial = 0; trial < 10; ++trial) {
      const Dims3 dims{14, 14, 14};
      Volume3D a = oracle::random_volume(rng, dims, 0.25);
      Volume3D b = a;
      for (std::int64_t i = 0; i < dims.voxel_count(); ++i)
        if (rng.next_double() < 0.1) b.data[i] = 1;  // a subset of b
      const double r = rng.uniform(0.5, 2.5);
      const auto da = dilate_ball(a, r), db = dilate_ball(b, r);
      const auto ea = erode_ball(a, r);
      for (std::int64_t i = 0; i < dims.voxel_count(); ++i) {
        if (da.data[i]) CHECK(db.data[i]);
        if (ea.data[i]) CHECK(a.data[i]);
      }
      // erode(A,r) == complement(dilate(complement(A),r)) away from the border:
      // embed in a padded domain so border effects vanish.
      const int pad = 4;
      Volume3D padded({dims.d + 2 * pad, dims.h + 2 * pad, dims.w + 2 * pad});
      for (int z = 0; z < dims.d; ++z)
        for (int y = 0; y < dims.h; ++y)
          for (int x = 0; x < dims.w; ++x)
            padded.set(z + pad, y + pad, x + pad, a.at(z, y, x));
      Volume3D comp = padded;
      for (auto& v : comp.data) v = v ? 0 : 1;
      const auto lhs = erode_ball(padded, r);
      const auto rhs = dilate_ball(comp, r);
      for (int z = pad; z < dims.d + pad; ++z)
        for (int y = pad; y < dims.h + pad; ++y)
          for (int x = pad; x < dims.w + pad; ++x)
            CHECK(lhs.at(z, y, x) == !rhs.at(z, y, x));
    }
  }
}

TEST_SUITE("volume.edt") {
  TEST_CASE("fully background volume maps to zero") {
    const auto edt = euclidean_distance_transform(Volume3D({5, 6, 7}));
    for (auto v : edt.data) CHECK(v == 0.0f);
  }

  TEST_CASE("single foreground voxel has distance 1") {
    Volume3D vol({5, 5, 5});
    vol.set(2, 2, 2, true);
    const auto edt = euclidean_distance_transform(vol);
    CHECK(edt.at(2, 2, 2) == doctest::Approx(1.0));
  }

  TEST_CASE("solid ball radius 4 has center distance 5") {
    // "radius 4" here means every voxel strictly closer than 5 to the center,
    // so the nearest background voxel sits at distance exactly 5.
    Volume3D vol({13, 13, 13});
    for (int z = 0; z < 13; ++z)
      for (int y = 0; y < 13; ++y)
        for (int x = 0; x < 13; ++x)
          if ((z - 6) * (z - 6) + (y - 6) * (y - 6) + (x - 6) * (x - 6) < 25)
            vol.set(z, y, x, true);
    const auto edt = euclidean_distance_transform(vol);
    CHECK(edt.at(6, 6, 6) == doctest::Approx(5.0));
  }

  TEST_CASE("matches all-pairs oracle exactly on random volumes") {
    Rng rng(20240604);
    for (int trial = 0; trial < 25; ++trial) {
      const Dims3 dims{rng.uniform_int(3, 24), rng.uniform_int(3, 24), rng.uniform_int(3, 24)};
      const Volume3D vol = oracle::random_volume(rng, dims, rng.uniform(0.2, 0.95));
      const auto d2 = squared_edt(vol, {1.0, 1.0, 1.0});
      const auto ref = oracle::all_pairs_squared_edt(vol);
      for (std::int64_t i = 0; i < dims.voxel_count(); ++i) REQUIRE(d2[i] == ref[i]);
    }
  }

  TEST_CASE("respects anisotropic spacing") {
    Volume3D vol({1, 1, 5}, {1.0, 1.0, 0.5});
    for (int x = 0; x < 5; ++x) vol.set(0, 0, x, true);
    // nearest background along x does not exist; along y/z it is out of volume,
    // so only the x run matters: all-foreground row -> infinite x distance, but
    // the single-voxel y and z runs are background-free too.
    const auto d2 = squared_edt(vol, vol.spacing);
    CHECK(std::isinf(d2[0]));
    Volume3D vol2({1, 3, 5}, {1.0, 2.0, 0.5});
    vol2.set(0, 1, 2, true);
    const auto d2b = squared_edt(vol2, vol2.spacing);
    CHECK(d2b[vol2.dims.index(0, 1, 2)] == doctest::Approx(0.25));  // x step is cheapest
  }
}

TEST_SUITE("volume.io") {
  TEST_CASE("round-trip is bit exact") {
    Rng rng(20240605);
    Volume3D vol = oracle::random_volume(rng, {7, 9, 11}, 0.35);
    vol.spacing = {0.7, 1.25, 0.5};
    const auto path = temp_file("ttr_roundtrip.btv");
    write_volume(vol, path.string());
    const Volume3D back = read_volume(path.string());
    CHECK(back.dims == vol.dims);
    CHECK(back.spacing == vol.spacing);
    CHECK(back.data == vol.data);
    std::filesystem::remove(path);
  }

  TEST_CASE("truncated payload reports size mismatch") {
    Volume3D vol({4, 4, 4});
    const auto path = temp_file("ttr_truncated.btv");
    write_volume(vol, path.string());
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 10);
    CHECK_THROWS_WITH_AS(read_volume(path.string()), doctest::Contains("payload size mismatch"),
                         io_error);
    std::filesystem::remove(path);
  }

  TEST_CASE("hand-built fixture parses to the expected booleans") {
    const auto path = temp_file("ttr_fixture.btv");
    {
      std::ofstream os(path, std::ios::binary);
      os.write("BTV1", 4);
      const std::uint32_t u32s[] = {1, 2, 2, 2};
      for (auto v : u32s) os.write(reinterpret_cast<const char*>(&v), 4);
      const double f64s[] = {1.0, 1.0, 1.0};
      for (auto v : f64s) os.write(reinterpret_cast<const char*>(&v), 8);
      const char dtype = 0;
      os.write(&dtype, 1);
      const unsigned char payload[8] = {0, 1, 1, 0, 1, 0, 0, 1};
      os.write(reinterpret_cast<const char*>(payload), 8);
    }
    const Volume3D vol = read_volume(path.string());
    CHECK(vol.dims == Dims3{2, 2, 2});
    const std::vector<std::uint8_t> expect{0, 1, 1, 0, 1, 0, 0, 1};
    CHECK(vol.data == expect);
    std::filesystem::remove(path);
  }

  TEST_CASE("bad magic and bad version are distinct errors") {
    const auto path = temp_file("ttr_bad.btv");
    {
      std::ofstream os(path, std::ios::binary);
      os.write("NOPE", 4);
    }
    CHECK_THROWS_WITH_AS(read_volume(path.string()), doctest::Contains("bad magic"), io_error);
    {
      std::ofstream os(path, std::ios::binary);
      os.write("BTV1", 4);
      const std::uint32_t version = 9;
      os.write(reinterpret_cast<const char*>(&version), 4);
    }
    CHECK_THROWS_WITH_AS(read_volume(path.string()), doctest::Contains("unsupported version"),
                         io_error);
    std::filesystem::remove(path);
  }

  TEST_CASE("non 0/1 payload byte is rejected") {
    Volume3D vol({1, 1, 2});
    const auto path = temp_file("ttr_badbyte.btv");
    write_volume(vol, path.string());
    {
      std::fstream os(path, std::ios::binary | std::ios::in | std::ios::out);
      os.seekp(-1, std::ios::end);
      const char b = 2;
      os.write(&b, 1);
    }
    CHECK_THROWS_WITH_AS(read_volume(path.string()), doctest::Contains("invalid bool payload"),
                         io_error);
    std::filesystem::remove(path);
  }

  TEST_CASE("float grid round-trip") {
    FloatGrid grid({3, 2, 2}, {2.0, 1.0, 0.5});
    for (std::size_t i = 0; i < grid.data.size(); ++i) grid.data[i] = 0.25f * i - 1.0f;
    const auto path = temp_file("ttr_grid.btv");
    write_float_grid(grid, path.string());
    const FloatGrid back = read_float_grid(path.string());
    CHECK(back.dims == grid.dims);
    CHECK(back.spacing == grid.spacing);
    CHECK(back.data == grid.data);
    // dtype guard: a float grid is not a binary volume
    CHECK_THROWS_AS(read_volume(path.string()), io_error);
    std::filesystem::remove(path);
  }
}

TEST_SUITE("volume.capsule") {
  TEST_CASE("degenerate capsule is a ball") {
    Volume3D vol({9, 9, 9});
    paint_capsule(vol, {4, 4, 4}, {4, 4, 4}, 2.0);
    std::int64_t count = 0;
    for (int z = 0; z < 9; ++z)
      for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x) {
          const bool inside = (z - 4) * (z - 4) + (y - 4) * (y - 4) + (x - 4) * (x - 4) <= 4;
          CHECK(vol.at(z, y, x) == inside);
          count += inside;
        }
    CHECK(count == vol.foreground_count());
  }

  TEST_CASE("painting never removes existing foreground") {
    Rng rng(5);
    Volume3D vol = oracle::random_volume(rng, {10, 10, 10}, 0.2);
    const Volume3D before = vol;
    paint_capsule(vol, {2, 2, 2}, {7, 7, 7}, 1.5);
    for (std::int64_t i = 0; i < vol.dims.voxel_count(); ++i)
      if (before.data[i]) CHECK(vol.data[i]);
  }
}
