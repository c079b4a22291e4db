#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ttr/synth.hpp"

using namespace ttr;

namespace {

// Deterministic "first seed that fits the box" helper: generation is pure in
// the seed, so scanning from a fixed start is reproducible.
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

PhantomParams depth2_params() {
  PhantomParams p;
  p.dims = {56, 48, 48};
  p.depth = 2;
  return p;
}

PhantomParams depth3_params() {
  PhantomParams p;
  p.dims = {72, 64, 64};
  p.depth = 3;
  return p;
}

// straight synthetic edge for selection/keypoint tests
GraphEdge straight_edge(int id, int node_a, int node_b, int interior, double radius,
                        int y = 1) {
  GraphEdge e;
  e.id = id;
  e.node_a = node_a;
  e.node_b = node_b;
  for (int x = 0; x < interior; ++x) e.points.push_back({1, y, x + 1});
  e.radii.assign(e.points.size(), radius);
  e.mean_radius = e.points.empty() ? 0.0 : radius;
  e.length = e.points.empty() ? 0.0 : interior - 1;
  e.branch_volume_S = static_cast<std::uint64_t>(interior) * 10;
  return e;
}

}  // namespace

TEST_SUITE("synth.phantom") {
  TEST_CASE("depth 1 is a single connected capsule") {
    PhantomParams p = depth2_params();
    p.depth = 1;
    const auto [vol, graph] = first_valid_phantom(p);
    CHECK(connected_components(vol, 26).label_count() == 1);
    CHECK(graph.nodes.size() == 2);
    CHECK(graph.edges.size() == 1);
    CHECK(graph.edges[0].mean_radius == p.root_radius);
    CHECK(graph.edges[0].branch_volume_S == static_cast<std::uint64_t>(vol.foreground_count()));
  }

  TEST_CASE("same seed reproduces identical volume and graph") {
    PhantomParams p = depth3_params();
    const auto [vol_a, graph_a] = first_valid_phantom(p);
    p.seed = 0;  // rediscover the same seed
    const auto [vol_b, graph_b] = first_valid_phantom(p);
    CHECK(vol_a.data == vol_b.data);
    CHECK(export_graph_json(graph_a) == export_graph_json(graph_b));
  }

  TEST_CASE("binary tree anatomy and exact radius decay") {
    const auto [vol, graph] = first_valid_phantom(depth3_params());
    CHECK(graph.edges.size() == 7);
    CHECK(graph.nodes.size() == 8);
    int endpoints = 0, bifurcations = 0;
    for (const auto& n : graph.nodes)
      (n.kind == NodeKind::endpoint ? endpoints : bifurcations)++;
    CHECK(endpoints == 5);  // root entry + 4 leaf tips
    CHECK(bifurcations == 3);
    for (const auto& e : graph.edges) {
      REQUIRE(!e.points.empty());
      // every interior point is foreground and the chain is 26-connected
      for (const auto& pt : e.points) CHECK(vol.at(pt));
      for (std::size_t k = 1; k < e.points.size(); ++k)
        CHECK(squared_distance(e.points[k - 1], e.points[k]) <= 3);
    }
    std::multiset<double> radii;
    for (const auto& e : graph.edges) radii.insert(e.mean_radius);
    CHECK(radii.count(4.0) == 1);
    CHECK(radii.count(4.0 * 0.7) == 2);
    CHECK(radii.count(4.0 * 0.7 * 0.7) == 4);  // leaf radii 1.96 exactly
    std::uint64_t total = 0;
    for (const auto& e : graph.edges) total += e.branch_volume_S;
    CHECK(total == static_cast<std::uint64_t>(vol.foreground_count()));
  }

  TEST_CASE("rejects bad parameters") {
    PhantomParams p = depth2_params();
    p.root_radius = 1.0;
    CHECK_THROWS_AS(generate_phantom_tree(p), validation_error);
    p = depth2_params();
    p.depth = 0;
    CHECK_THROWS_AS(generate_phantom_tree(p), validation_error);
    p = depth2_params();
    p.radius_decay = 1.0;
    CHECK_THROWS_AS(generate_phantom_tree(p), validation_error);
  }

  TEST_CASE("overflowing the box is reported") {
    PhantomParams p;
    p.dims = {24, 24, 24};
    p.depth = 4;  // cannot fit four levels of 12+ voxel branches
    p.seed = 3;
    CHECK_THROWS_WITH_AS(generate_phantom_tree(p), doctest::Contains("phantom out of bounds"),
                         validation_error);
  }

  TEST_CASE("extracted skeleton graph matches constructive anatomy") {
    for (const PhantomParams& p : {depth2_params(), depth3_params()}) {
      const auto [vol, graph] = first_valid_phantom(p);
      const auto extracted = build_graph(skeletonize(vol), euclidean_distance_transform(vol));
      std::map<NodeKind, int> want, got;
      for (const auto& n : graph.nodes) ++want[n.kind];
      for (const auto& n : extracted.nodes) ++got[n.kind];
      CHECK(got[NodeKind::endpoint] == want[NodeKind::endpoint]);
      CHECK(got[NodeKind::bifurcation] == want[NodeKind::bifurcation]);
      CHECK(extracted.edges.size() == graph.edges.size());
      CHECK(!extracted.contains_cycles);
    }
  }
}

TEST_SUITE("synth.select") {
  namespace {
    BranchGraph selection_graph() {
      BranchGraph g;
      g.dims = {4, 40, 40};
      for (int i = 0; i < 5; ++i) g.nodes.push_back({i, {1, 1, 1}, NodeKind::endpoint, {}});
      g.edges.push_back(straight_edge(0, 0, 1, 20, 5.0));  // trunk: unique max radius
      g.edges.push_back(straight_edge(1, 1, 2, 12, 2.0));
      g.edges.push_back(straight_edge(2, 1, 3, 12, 2.0));
      g.edges.push_back(straight_edge(3, 2, 4, 5, 2.0));   // too short
      g.edges.push_back(straight_edge(4, 3, 4, 12, 0.5));  // too thin
      return g;
    }
  }

  TEST_CASE("single eligible edge is always chosen") {
    auto g = selection_graph();
    g.edges.erase(g.edges.begin() + 2);  // leave edge 1 the only eligible one
    Rng rng(5);
    for (int i = 0; i < 10; ++i) CHECK(select_branch(g, rng) == 1);
  }

  TEST_CASE("criteria filter short, thin, and trunk edges") {
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
      const int id = select_branch(selection_graph(), rng);
      CHECK((id == 1 || id == 2));
    }
  }

  TEST_CASE("no eligible branch is an error") {
    BranchGraph g;
    g.dims = {4, 4, 4};
    g.nodes.push_back({0, {1, 1, 1}, NodeKind::endpoint, {}});
    g.nodes.push_back({1, {1, 1, 2}, NodeKind::endpoint, {}});
    g.edges.push_back(straight_edge(0, 0, 1, 5, 2.0));  // shorter than 8 points
    Rng rng(7);
    CHECK_THROWS_WITH_AS(select_branch(g, rng), doctest::Contains("no eligible branch"),
                         validation_error);
  }

  TEST_CASE("tied maximum radius disables trunk exclusion") {
    BranchGraph g;
    g.dims = {4, 40, 40};
    for (int i = 0; i < 3; ++i) g.nodes.push_back({i, {1, 1, 1}, NodeKind::endpoint, {}});
    g.edges.push_back(straight_edge(0, 0, 1, 12, 3.0));
    g.edges.push_back(straight_edge(1, 1, 2, 12, 3.0));
    Rng rng(8);
    std::set<int> seen;
    for (int i = 0; i < 40; ++i) seen.insert(select_branch(g, rng));
    CHECK(seen == std::set<int>{0, 1});
  }

  TEST_CASE("uniform frequency over ten eligible edges") {
    BranchGraph g;
    g.dims = {4, 200, 200};
    for (int i = 0; i <= 10; ++i) g.nodes.push_back({i, {1, 1, 1}, NodeKind::endpoint, {}});
    for (int i = 0; i < 10; ++i) g.edges.push_back(straight_edge(i, i, i + 1, 12, 2.0, i + 1));
    Rng rng(20240608);
    std::map<int, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) ++counts[select_branch(g, rng, {8, 1.0, false})];
    REQUIRE(counts.size() == 10);
    for (const auto& [id, count] : counts) {
      const double freq = static_cast<double>(count) / draws;
      CHECK(freq > 0.08);
      CHECK(freq < 0.12);
    }
  }

  TEST_CASE("excluding used edges narrows the pool") {
    Rng rng(9);
    const auto g = selection_graph();
    const int first = select_branch_excluding(g, rng, {1});
    CHECK(first == 2);
    CHECK_THROWS_AS(select_branch_excluding(g, rng, {1, 2}), validation_error);
  }
}

TEST_SUITE("synth.keypoints") {
  namespace {
    BranchGraph keypoint_graph(int interior, std::uint64_t s_side_a, std::uint64_t s_side_b) {
      BranchGraph g;
      g.dims = {4, 10, 64};
      for (int i = 0; i < 4; ++i) g.nodes.push_back({i, {1, 1, 1}, NodeKind::endpoint, {}});
      auto feeder_a = straight_edge(0, 0, 1, 10, 2.0, 3);
      feeder_a.branch_volume_S = s_side_a;
      auto chosen = straight_edge(1, 1, 2, interior, 2.0, 5);
      auto feeder_b = straight_edge(2, 2, 3, 10, 2.0, 7);
      feeder_b.branch_volume_S = s_side_b;
      g.edges = {feeder_a, chosen, feeder_b};
      return g;
    }
  }

  TEST_CASE("bounds, separation, and distance-from-ends hold") {
    const auto g = keypoint_graph(18, 100, 10);
    Rng rng(11);
    for (int t = 0; t < 200; ++t) {
      const auto [a, b] = sample_keypoints(g, 1, rng, 4, 12);
      const int lo = std::min(a, b), hi = std::max(a, b);
      CHECK(lo >= 2);
      CHECK(hi <= 15);  // n-3
      CHECK(hi - lo >= 4);
      CHECK(hi - lo <= 12);
    }
  }

  TEST_CASE("minimal feasible edge still yields a pair") {
    const auto g = keypoint_graph(4 + 6, 100, 10);  // min_sep + 6 interior points
    Rng rng(12);
    const auto [a, b] = sample_keypoints(g, 1, rng, 4, 12);
    CHECK(std::abs(a - b) >= 4);
  }

  TEST_CASE("forced separation when min equals max") {
    const auto g = keypoint_graph(20, 100, 10);
    Rng rng(13);
    for (int t = 0; t < 50; ++t) {
      const auto [a, b] = sample_keypoints(g, 1, rng, 4, 4);
      CHECK(std::abs(a - b) == 4);
    }
  }

  TEST_CASE("infeasible separation throws") {
    const auto g = keypoint_graph(8, 100, 10);  // n-5 = 3 < min_sep
    Rng rng(14);
    CHECK_THROWS_WITH_AS(sample_keypoints(g, 1, rng, 4, 12),
                         doctest::Contains("separation infeasible"), validation_error);
  }

  TEST_CASE("kp1 faces the heavier side") {
    Rng rng(15);
    const auto [a1, b1] = sample_keypoints(keypoint_graph(18, 1000, 10), 1, rng, 4, 12);
    CHECK(a1 < b1);  // node_a side heavier: kp1 is the lower index
    const auto [a2, b2] = sample_keypoints(keypoint_graph(18, 10, 1000), 1, rng, 4, 12);
    CHECK(a2 > b2);
  }

  TEST_CASE("seeded draw reproduces") {
    const auto g = keypoint_graph(18, 100, 10);
    Rng rng_a(77), rng_b(77);
    CHECK(sample_keypoints(g, 1, rng_a) == sample_keypoints(g, 1, rng_b));
  }
}

TEST_SUITE("synth.carve") {
  namespace {
    struct TubeFixture {
      Volume3D vol;
      BranchGraph graph;
      TubeFixture() {
        PhantomParams p;
        p.dims = {56, 24, 24};
        p.depth = 1;
        p.root_radius = 3.0;
        p.branch_length_range = {36.0, 40.0};
        std::tie(vol, graph) = first_valid_phantom(p);
      }
    };
  }

  TEST_CASE("mid-tube carve yields exactly two components") {
    const TubeFixture f;
    const auto& edge = f.graph.edges[0];
    const int mid = static_cast<int>(edge.points.size()) / 2;
    const auto [carved, gap_radius] = carve_gap(f.vol, edge, mid - 3, mid + 3);
    CHECK(connected_components(carved, 26).label_count() == 2);
    CHECK(gap_radius == doctest::Approx(4.5));  // radius 3 + margin 1.5
    // keypoints survive
    CHECK(carved.at(edge.points[mid - 3]));
    CHECK(carved.at(edge.points[mid + 3]));
  }

  TEST_CASE("carve removes a subset, all of it near the gap polyline") {
    const TubeFixture f;
    const auto& edge = f.graph.edges[0];
    const int mid = static_cast<int>(edge.points.size()) / 2;
    const int lo = mid - 4, hi = mid + 4;
    const auto [carved, gap_radius] = carve_gap(f.vol, edge, lo, hi);
    std::int64_t removed = 0;
    for (std::int64_t i = 0; i < f.vol.dims.voxel_count(); ++i) {
      CHECK(carved.data[i] <= f.vol.data[i]);  // never adds voxels
      if (f.vol.data[i] && !carved.data[i]) {
        ++removed;
        const Coord3 c = f.vol.dims.coord(i);
        double best = 1e18;
        for (int k = lo; k < hi; ++k)
          best = std::min(best, point_segment_distance2(Vec3(c), Vec3(edge.points[k]),
                                                         Vec3(edge.points[k + 1])));
        CHECK(best <= gap_radius * gap_radius + 1e-9);
      }
    }
    CHECK(removed > 0);
  }

  TEST_CASE("too-close keypoint indices are rejected") {
    const TubeFixture f;
    CHECK_THROWS_AS(carve_gap(f.vol, f.graph.edges[0], 10, 11), validation_error);
    CHECK_THROWS_AS(carve_gap(f.vol, f.graph.edges[0], 10, 200), validation_error);
  }
}

TEST_SUITE("synth.samples") {
  TEST_CASE("synthesized sample on a depth-2 phantom validates") {
    const auto [vol, graph] = first_valid_phantom(depth2_params());
    Rng rng(21);
    const int edge_id = select_branch(graph, rng);
    const auto sample = synthesize_sample(vol, graph, edge_id, rng);
    CHECK(validate_sample(sample).empty());
    CHECK(sample.kp1_component_label == 1);
    CHECK(sample.kp2_component_label > 1);
    CHECK(sample.gap_radius > 0.0);
    CHECK(sample.disconnected.foreground_count() < vol.foreground_count());
    // keypoints sit on the source centerline
    const auto& pts = graph.edge(edge_id).points;
    CHECK(std::find(pts.begin(), pts.end(), sample.kp1) != pts.end());
    CHECK(std::find(pts.begin(), pts.end(), sample.kp2) != pts.end());
  }

  TEST_CASE("validate_sample flags corrupted fixtures") {
    const auto [vol, graph] = first_valid_phantom(depth2_params());
    Rng rng(22);
    auto sample = synthesize_sample(vol, graph, select_branch(graph, rng), rng);

    auto swapped = sample;
    std::swap(swapped.kp1, swapped.kp2);
    bool kp2_in_largest = false;
    for (const auto& v : validate_sample(swapped))
      kp2_in_largest |= v.find("kp2 in largest") != std::string::npos;
    CHECK(kp2_in_largest);

    auto three = sample;
    three.disconnected.set(1, 1, 1, true);  // far-away speck: a third component
    bool extra = false;
    for (const auto& v : validate_sample(three))
      extra |= v.find("found 3") != std::string::npos;
    CHECK(extra);
  }

  TEST_CASE("deterministic for a fixed rng seed") {
    const auto [vol, graph] = first_valid_phantom(depth2_params());
    Rng rng_a(33), rng_b(33);
    const int e_a = select_branch(graph, rng_a);
    const int e_b = select_branch(graph, rng_b);
    REQUIRE(e_a == e_b);
    const auto s_a = synthesize_sample(vol, graph, e_a, rng_a);
    const auto s_b = synthesize_sample(vol, graph, e_b, rng_b);
    CHECK(s_a.disconnected.data == s_b.disconnected.data);
    CHECK(s_a.kp1 == s_b.kp1);
    CHECK(s_a.kp2 == s_b.kp2);
  }
}

TEST_SUITE("synth.dataset") {
  namespace {
    std::vector<SourceVolume> make_sources(int n) {
      std::vector<SourceVolume> sources;
      PhantomParams p = depth2_params();
      for (int i = 0; i < n; ++i) {
        auto [vol, graph] = first_valid_phantom(p, 100 + 50 * i);
        char id[16];
        std::snprintf(id, sizeof(id), "vol_%03d", i);
        sources.push_back({id, std::move(vol), std::move(graph)});
      }
      return sources;
    }

    std::filesystem::path fresh_dir(const std::string& name) {
      const auto dir = std::filesystem::temp_directory_path() / name;
      std::filesystem::remove_all(dir);
      return dir;
    }
  }

  TEST_CASE("ten volumes split 7/1/2 with valid, reloadable samples") {
    const auto sources = make_sources(10);
    const auto root = fresh_dir("ttr_dataset_a");
    DatasetParams params;
    params.branches_per_volume = 2;
    params.seed = 424242;
    const auto manifest = generate_dataset(sources, root.string(), params);

    CHECK(manifest.split_volumes.at("train").size() == 7);
    CHECK(manifest.split_volumes.at("val").size() == 1);
    CHECK(manifest.split_volumes.at("test").size() == 2);
    // splits partition the volumes
    std::set<std::string> all;
    for (const auto& [name, ids] : manifest.split_volumes)
      for (const auto& id : ids) CHECK(all.insert(id).second);
    CHECK(all.size() == 10);

    CHECK(manifest.records.size() == 20);
    CHECK(manifest.shortfalls.empty());
    std::map<std::string, Split> vol_split;
    for (const auto& [name, ids] : manifest.split_volumes)
      for (const auto& id : ids) vol_split[id] = split_from_name(name);

    for (const auto& rec : manifest.records) {
      CHECK(rec.split == vol_split.at(rec.source_volume_id));
      if (rec.split == Split::train)
        CHECK(rec.fixed_crop_centers.empty());
      else
        CHECK(rec.fixed_crop_centers.size() == 3);

      DisconnectionSample sample;
      sample.disconnected = load_sample_volume(root.string(), rec);
      sample.kp1 = rec.kp1;
      sample.kp2 = rec.kp2;
      sample.kp1_component_label = rec.kp1_component_label;
      sample.kp2_component_label = rec.kp2_component_label;
      sample.gap_radius = rec.gap_radius;
      CHECK(validate_sample(sample).empty());

      // fixed crop centers live in kp2's component
      const auto lab = connected_components(sample.disconnected, 26);
      for (const auto& c : rec.fixed_crop_centers)
        CHECK(lab.at(c) == rec.kp2_component_label);
      CHECK(std::filesystem::exists(root / rec.meta_path));
    }

    // source volumes and graphs round-trip
    const auto src = load_source_volume(root.string(), "vol_003");
    CHECK(src.volume.data == sources[3].volume.data);
    CHECK(export_graph_json(src.graph) == export_graph_json(sources[3].graph));

    std::filesystem::remove_all(root);
  }

  TEST_CASE("same seed gives byte-identical manifests") {
    const auto sources = make_sources(4);
    const auto root_a = fresh_dir("ttr_dataset_b1");
    const auto root_b = fresh_dir("ttr_dataset_b2");
    DatasetParams params;
    params.branches_per_volume = 2;
    params.seed = 777;
    generate_dataset(sources, root_a.string(), params);
    generate_dataset(sources, root_b.string(), params);
    const auto slurp = [](const std::filesystem::path& p) {
      std::ifstream is(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
    };
    const auto text_a = slurp(root_a / "manifest.json");
    CHECK(!text_a.empty());
    CHECK(text_a == slurp(root_b / "manifest.json"));

    // reload equals in-memory result
    const auto loaded = load_manifest(root_a.string());
    CHECK(loaded.seed == 777);
    CHECK(loaded.records.size() == generate_dataset(sources, root_b.string(), params).records.size());
    std::filesystem::remove_all(root_a);
    std::filesystem::remove_all(root_b);
  }

  TEST_CASE("shortfall recorded when branches run out") {
    const auto sources = make_sources(1);
    const auto root = fresh_dir("ttr_dataset_c");
    DatasetParams params;
    params.branches_per_volume = 30;  // a depth-2 phantom has only 2 eligible edges
    params.seed = 99;
    const auto manifest = generate_dataset(sources, root.string(), params);
    CHECK(manifest.records.size() <= 2);
    REQUIRE(manifest.shortfalls.count("vol_000"));
    CHECK(manifest.shortfalls.at("vol_000") ==
          30 - static_cast<int>(manifest.records.size()));
    std::filesystem::remove_all(root);
  }

  TEST_CASE("manifest loader names missing keys") {
    const auto root = fresh_dir("ttr_dataset_d");
    std::filesystem::create_directories(root);
    write_text_atomic((root / "manifest.json").string(), R"({"version":1,"seed":5})");
    CHECK_THROWS_WITH_AS(load_manifest(root.string()), doctest::Contains("'splits'"),
                         validation_error);
    CHECK_THROWS_AS(load_manifest((root / "nope").string()), io_error);
    std::filesystem::remove_all(root);
  }
}
