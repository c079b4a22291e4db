#include "ttr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

namespace ttr {

namespace {

// 26-connected voxel line, endpoints included; consecutive entries differ by
// at most one step per axis.
std::vector<Coord3> raster_line(Coord3 a, Coord3 b) {
  const int steps = std::max({std::abs(a.z - b.z), std::abs(a.y - b.y), std::abs(a.x - b.x)});
  std::vector<Coord3> out;
  out.reserve(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    const double t = steps == 0 ? 0.0 : static_cast<double>(i) / steps;
    const Coord3 p = round_to_voxel(Vec3(a) + (Vec3(b) - Vec3(a)) * t);
    if (out.empty() || !(out.back() == p)) out.push_back(p);
  }
  return out;
}

// paint_capsule with first-painter voxel ownership for constructive S.
void paint_capsule_owned(Volume3D& vol, std::vector<int>& owners, const Vec3& a, const Vec3& b,
                         double radius, int edge_id) {
  const double r2 = radius * radius;
  const int pad = static_cast<int>(std::ceil(radius));
  const int z0 = std::max(0, static_cast<int>(std::floor(std::min(a.z, b.z))) - pad);
  const int z1 = std::min(vol.dims.d - 1, static_cast<int>(std::ceil(std::max(a.z, b.z))) + pad);
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y))) - pad);
  const int y1 = std::min(vol.dims.h - 1, static_cast<int>(std::ceil(std::max(a.y, b.y))) + pad);
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x))) - pad);
  const int x1 = std::min(vol.dims.w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x))) + pad);
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const std::int64_t i = vol.dims.index(z, y, x);
        if (vol.data[i]) continue;
        if (point_segment_distance2({double(z), double(y), double(x)}, a, b) <= r2) {
          vol.data[i] = 1;
          owners[i] = edge_id;
        }
      }
}

Vec3 perpendicular(const Vec3& dir) {
  const Vec3 axis = std::abs(dir.x) < 0.9 ? Vec3{0, 0, 1} : Vec3{0, 1, 0};
  return dir.cross(axis).normalized();
}

// Child direction: rotate the parent direction by `angle` about a random
// azimuth, then pull back toward +z until within ~66 degrees of it so deep
// trees keep growing away from the entry face.
Vec3 child_direction(const Vec3& parent, double angle, double azimuth) {
  const Vec3 u = perpendicular(parent);
  const Vec3 v = parent.cross(u).normalized();
  Vec3 dir = parent * std::cos(angle) +
             (u * std::cos(azimuth) + v * std::sin(azimuth)) * std::sin(angle);
  dir = dir.normalized();
  const Vec3 zhat{1, 0, 0};
  while (dir.dot(zhat) < std::cos(1.15)) dir = (dir + zhat * 0.4).normalized();
  return dir;
}

struct PhantomBuilder {
  const PhantomParams& params;
  Rng rng;
  Volume3D vol;
  BranchGraph graph;
  std::vector<int> owners;

  explicit PhantomBuilder(const PhantomParams& p)
      : params(p), rng(p.seed), vol(p.dims), owners(p.dims.voxel_count(), -1) {
    graph.dims = p.dims;
  }

  void check_bounds(Coord3 c, double radius) const {
    const int pad = static_cast<int>(std::ceil(radius)) + 2;
    if (c.z < pad || c.z >= params.dims.d - pad || c.y < pad || c.y >= params.dims.h - pad ||
        c.x < pad || c.x >= params.dims.w - pad)
      throw validation_error("phantom out of bounds");
  }

  void grow(int parent_node, Coord3 start, Vec3 dir, double radius, int level) {
    const double length =
        rng.uniform(params.branch_length_range.first, params.branch_length_range.second);
    const Coord3 end = round_to_voxel(Vec3(start) + dir * length);
    check_bounds(end, radius);

    const bool leaf = level >= params.depth;
    const int end_node = static_cast<int>(graph.nodes.size());
    graph.nodes.push_back(
        {end_node, end, leaf ? NodeKind::endpoint : NodeKind::bifurcation, {end}});

    GraphEdge edge;
    edge.id = static_cast<int>(graph.edges.size());
    edge.node_a = parent_node;
    edge.node_b = end_node;
    const auto line = raster_line(start, end);
    if (line.size() > 2) edge.points.assign(line.begin() + 1, line.end() - 1);
    edge.radii.assign(edge.points.size(), radius);
    edge.mean_radius = edge.points.empty() ? 0.0 : radius;
    for (std::size_t k = 1; k < edge.points.size(); ++k)
      edge.length += distance(edge.points[k - 1], edge.points[k]);
    const int edge_id = edge.id;
    graph.edges.push_back(std::move(edge));

    paint_capsule_owned(vol, owners, Vec3(start), Vec3(end), radius, edge_id);

    if (!leaf) {
      const double a1 = rng.uniform(params.branching_angle_range.first,
                                    params.branching_angle_range.second);
      const double phi1 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      const double a2 = rng.uniform(params.branching_angle_range.first,
                                    params.branching_angle_range.second);
      const double phi2 = phi1 + 3.14159265358979323846 + rng.uniform(-0.4, 0.4);
      const double child_radius = radius * params.radius_decay;
      grow(end_node, end, child_direction(dir, a1, phi1), child_radius, level + 1);
      grow(end_node, end, child_direction(dir, a2, phi2), child_radius, level + 1);
    }
  }
};

}  // namespace

std::pair<Volume3D, BranchGraph> generate_phantom_tree(const PhantomParams& params) {
  if (params.root_radius < 1.5) throw validation_error("root radius must be >= 1.5");
  if (params.depth < 1) throw validation_error("depth must be >= 1");
  if (params.radius_decay <= 0.0 || params.radius_decay >= 1.0)
    throw validation_error("radius decay must lie in (0,1)");

  PhantomBuilder b(params);
  const Coord3 start{static_cast<int>(std::ceil(params.root_radius)) + 2, params.dims.h / 2,
                     params.dims.w / 2};
  b.check_bounds(start, params.root_radius);
  b.graph.nodes.push_back({0, start, NodeKind::endpoint, {start}});
  b.grow(0, start, {1, 0, 0}, params.root_radius, 1);

  // constructive branch volumes: each foreground voxel counted for the edge
  // that painted it first (DFS paint order)
  for (std::int64_t i = 0; i < b.vol.dims.voxel_count(); ++i)
    if (b.owners[i] >= 0) ++b.graph.edges[b.owners[i]].branch_volume_S;
  return {std::move(b.vol), std::move(b.graph)};
}

// ---- branch selection ------------------------------------------------------

namespace {

std::vector<int> eligible_edges(const BranchGraph& graph, const BranchCriteria& criteria) {
  double max_radius = -1.0;
  int max_count = 0;
  for (const auto& e : graph.edges) {
    if (e.mean_radius > max_radius) {
      max_radius = e.mean_radius;
      max_count = 1;
    } else if (e.mean_radius == max_radius) {
      ++max_count;
    }
  }
  std::vector<int> out;
  for (const auto& e : graph.edges) {
    if (static_cast<int>(e.points.size()) < criteria.min_interior_points) continue;
    if (e.mean_radius < criteria.min_mean_radius) continue;
    if (criteria.exclude_trunk && max_count == 1 && e.mean_radius == max_radius) continue;
    out.push_back(e.id);
  }
  return out;
}

}  // namespace

int select_branch(const BranchGraph& graph, Rng& rng, const BranchCriteria& criteria) {
  return select_branch_excluding(graph, rng, {}, criteria);
}

int select_branch_excluding(const BranchGraph& graph, Rng& rng, const std::vector<int>& used,
                            const BranchCriteria& criteria) {
  if (graph.edges.empty()) throw validation_error("no eligible branch");
  auto pool = eligible_edges(graph, criteria);
  if (!used.empty()) {
    const std::set<int> drop(used.begin(), used.end());
    pool.erase(std::remove_if(pool.begin(), pool.end(),
                              [&](int id) { return drop.count(id) > 0; }),
               pool.end());
  }
  if (pool.empty()) throw validation_error("no eligible branch");
  return pool[rng.next_index(pool.size())];
}

// ---- keypoints ---------------------------------------------------------------

namespace {

// Total branch volume reachable from `node` without crossing `edge_id`.
std::uint64_t side_volume(const BranchGraph& graph, int edge_id, int node) {
  std::set<int> seen_nodes{node};
  std::set<int> seen_edges;
  std::vector<int> stack{node};
  std::uint64_t total = 0;
  while (!stack.empty()) {
    const int cur = stack.back();
    stack.pop_back();
    for (const auto& e : graph.edges) {
      if (e.id == edge_id || seen_edges.count(e.id)) continue;
      int other = -1;
      if (e.node_a == cur)
        other = e.node_b;
      else if (e.node_b == cur)
        other = e.node_a;
      else
        continue;
      seen_edges.insert(e.id);
      total += e.branch_volume_S;
      if (seen_nodes.insert(other).second) stack.push_back(other);
    }
  }
  return total;
}

}  // namespace

std::pair<int, int> sample_keypoints(const BranchGraph& graph, int edge_id, Rng& rng, int min_sep,
                                     int max_sep) {
  const GraphEdge& edge = graph.edge(edge_id);
  const int n = static_cast<int>(edge.points.size());
  const int max_feasible = std::min(max_sep, n - 5);
  if (min_sep < 1 || max_feasible < min_sep)
    throw validation_error("keypoint separation infeasible");
  const int sep = rng.uniform_int(min_sep, max_feasible);
  const int i = rng.uniform_int(2, n - 3 - sep);
  const int j = i + sep;
  // KP1 sits on the side whose remaining tree owns more volume.
  const std::uint64_t va = side_volume(graph, edge_id, edge.node_a);
  const std::uint64_t vb = side_volume(graph, edge_id, edge.node_b);
  return va >= vb ? std::make_pair(i, j) : std::make_pair(j, i);
}

std::pair<Volume3D, double> carve_gap(const Volume3D& vol, const GraphEdge& edge, int kp1_idx,
                                      int kp2_idx, double margin) {
  const int n = static_cast<int>(edge.points.size());
  const int lo = std::min(kp1_idx, kp2_idx), hi = std::max(kp1_idx, kp2_idx);
  if (lo < 0 || hi >= n) throw validation_error("keypoint index out of range");
  if (hi - lo < 2) throw validation_error("keypoint indices too close");

  // Segment radii, and the carve's overall reach.
  double gap_radius = 0.0;
  std::vector<double> seg_radius(hi - lo);
  for (int k = lo; k < hi; ++k) {
    seg_radius[k - lo] = std::max(edge.radii[k], edge.radii[k + 1]) + margin;
    gap_radius = std::max(gap_radius, seg_radius[k - lo]);
  }

  // Half-space gates keep the keypoints' own cross-sections: only voxels
  // strictly past both keypoint planes (toward the gap interior) may go.
  const Vec3 p_lo(edge.points[lo]), p_hi(edge.points[hi]);
  const Vec3 t_lo = (Vec3(edge.points[lo + 1]) - p_lo).normalized();
  const Vec3 t_hi = (Vec3(edge.points[hi - 1]) - p_hi).normalized();

  Coord3 bb_min = edge.points[lo], bb_max = edge.points[lo];
  for (int k = lo; k <= hi; ++k) {
    bb_min = {std::min(bb_min.z, edge.points[k].z), std::min(bb_min.y, edge.points[k].y),
              std::min(bb_min.x, edge.points[k].x)};
    bb_max = {std::max(bb_max.z, edge.points[k].z), std::max(bb_max.y, edge.points[k].y),
              std::max(bb_max.x, edge.points[k].x)};
  }
  const int pad = static_cast<int>(std::ceil(gap_radius)) + 1;

  Volume3D out = vol;
  for (int z = std::max(0, bb_min.z - pad); z <= std::min(vol.dims.d - 1, bb_max.z + pad); ++z)
    for (int y = std::max(0, bb_min.y - pad); y <= std::min(vol.dims.h - 1, bb_max.y + pad); ++y)
      for (int x = std::max(0, bb_min.x - pad); x <= std::min(vol.dims.w - 1, bb_max.x + pad);
           ++x) {
        const std::int64_t i = vol.dims.index(z, y, x);
        if (!out.data[i]) continue;
        const Vec3 v{double(z), double(y), double(x)};
        if ((v - p_lo).dot(t_lo) <= 0.0 || (v - p_hi).dot(t_hi) <= 0.0) continue;
        for (int k = lo; k < hi; ++k) {
          const double r = seg_radius[k - lo];
          if (point_segment_distance2(v, Vec3(edge.points[k]), Vec3(edge.points[k + 1])) <=
              r * r) {
            out.data[i] = 0;
            break;
          }
        }
      }
  return {std::move(out), gap_radius};
}

// ---- validation --------------------------------------------------------------

std::vector<std::string> validate_sample(const DisconnectionSample& sample) {
  std::vector<std::string> violations;
  const auto lab = connected_components(sample.disconnected, 26);
  if (lab.label_count() != 2) {
    std::string msg = "expected 2 components, found " + std::to_string(lab.label_count());
    if (lab.label_count() > 2) {
      msg += " (extra labels:";
      for (std::uint32_t l = 3; l <= lab.label_count(); ++l) msg += " " + std::to_string(l);
      msg += ")";
    }
    violations.push_back(msg);
    return violations;
  }
  const std::uint32_t l1 = lab.at(sample.kp1);
  const std::uint32_t l2 = lab.at(sample.kp2);
  if (l1 == 0) violations.push_back("kp1 not foreground");
  if (l2 == 0) violations.push_back("kp2 not foreground");
  if (l1 != 0 && l1 != 1) violations.push_back("kp1 not in largest component");
  if (l2 == 1) violations.push_back("kp2 in largest");
  if (l1 == 1 && l2 == 2) {
    if (sample.kp1_component_label != l1) violations.push_back("kp1_component_label mismatch");
    if (sample.kp2_component_label != l2) violations.push_back("kp2_component_label mismatch");
    if (2 * lab.size_of(l2) >= lab.size_of(l1))
      violations.push_back("kp2 component not smaller than half of kp1 component");
  }
  if (sample.gap_radius <= 0.0) violations.push_back("gap radius not positive");
  return violations;
}

DisconnectionSample synthesize_sample(const Volume3D& vol, const BranchGraph& graph, int edge_id,
                                      Rng& rng, const SynthParams& params) {
  const GraphEdge& edge = graph.edge(edge_id);
  const auto [kp1_idx, kp2_idx] =
      sample_keypoints(graph, edge_id, rng, params.min_sep, params.max_sep);
  auto [carved, gap_radius] = carve_gap(vol, edge, kp1_idx, kp2_idx, params.margin);

  DisconnectionSample sample;
  sample.edge_id = edge_id;
  sample.kp1 = edge.points[kp1_idx];
  sample.kp2 = edge.points[kp2_idx];
  sample.gap_radius = gap_radius;
  sample.disconnected = std::move(carved);
  sample.branch_mean_radius = edge.mean_radius;
  sample.branch_volume_S = edge.branch_volume_S;

  const auto lab = connected_components(sample.disconnected, 26);
  sample.kp1_component_label = lab.at(sample.kp1);
  sample.kp2_component_label = lab.at(sample.kp2);

  // the carve must leave something behind
  if (sample.disconnected.foreground_count() >= vol.foreground_count())
    throw validation_error("carve produced invalid topology");
  if (!validate_sample(sample).empty())
    throw validation_error("carve produced invalid topology");
  return sample;
}

// ---- dataset -----------------------------------------------------------------

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw validation_error("unknown split '" + name + "'");
}

void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open " + tmp + " for writing");
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw io_error("write failure on " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

void write_volume_atomic(const Volume3D& vol, const std::string& path) {
  const std::string tmp = path + ".tmp";
  write_volume(vol, tmp);
  std::filesystem::rename(tmp, path);
}

using nlohmann::json;

json coord_json(const Coord3& c) { return json::array({c.z, c.y, c.x}); }

Coord3 coord_from_json(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) throw validation_error(
      std::string("manifest json: missing or invalid key '") + key + "'");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

json record_json(const SampleRecord& r) {
  json centers = json::array();
  for (const auto& c : r.fixed_crop_centers) centers.push_back(coord_json(c));
  return {{"sample_id", r.sample_id},
          {"source_volume_id", r.source_volume_id},
          {"edge_id", r.edge_id},
          {"kp1", coord_json(r.kp1)},
          {"kp2", coord_json(r.kp2)},
          {"gap_radius", r.gap_radius},
          {"branch_mean_radius", r.branch_mean_radius},
          {"branch_volume_S", r.branch_volume_S},
          {"kp1_component_label", r.kp1_component_label},
          {"kp2_component_label", r.kp2_component_label},
          {"split", split_name(r.split)},
          {"fixed_crop_centers", centers},
          {"disconnected_path", r.disconnected_path},
          {"meta_path", r.meta_path}};
}

template <typename T>
T manifest_field(const json& j, const char* key) {
  if (!j.contains(key))
    throw validation_error(std::string("manifest json: missing or invalid key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw validation_error(std::string("manifest json: missing or invalid key '") + key + "'");
  }
}

SampleRecord record_from_json(const json& j) {
  SampleRecord r;
  r.sample_id = manifest_field<std::string>(j, "sample_id");
  r.source_volume_id = manifest_field<std::string>(j, "source_volume_id");
  r.edge_id = manifest_field<int>(j, "edge_id");
  if (!j.contains("kp1")) throw validation_error("manifest json: missing or invalid key 'kp1'");
  r.kp1 = coord_from_json(j.at("kp1"), "kp1");
  if (!j.contains("kp2")) throw validation_error("manifest json: missing or invalid key 'kp2'");
  r.kp2 = coord_from_json(j.at("kp2"), "kp2");
  r.gap_radius = manifest_field<double>(j, "gap_radius");
  r.branch_mean_radius = manifest_field<double>(j, "branch_mean_radius");
  r.branch_volume_S = manifest_field<std::uint64_t>(j, "branch_volume_S");
  r.kp1_component_label = manifest_field<std::uint32_t>(j, "kp1_component_label");
  r.kp2_component_label = manifest_field<std::uint32_t>(j, "kp2_component_label");
  r.split = split_from_name(manifest_field<std::string>(j, "split"));
  if (!j.contains("fixed_crop_centers") || !j.at("fixed_crop_centers").is_array())
    throw validation_error("manifest json: missing or invalid key 'fixed_crop_centers'");
  for (const auto& cj : j.at("fixed_crop_centers"))
    r.fixed_crop_centers.push_back(coord_from_json(cj, "fixed_crop_centers"));
  r.disconnected_path = manifest_field<std::string>(j, "disconnected_path");
  r.meta_path = manifest_field<std::string>(j, "meta_path");
  return r;
}

// floor(n * r_i / total) plus largest-remainder distribution of the leftovers;
// remainder ties go to the earlier split.
std::array<int, 3> split_counts(int n, const std::array<int, 3>& ratio) {
  const int total = ratio[0] + ratio[1] + ratio[2];
  if (total <= 0) throw validation_error("split ratio must be positive");
  std::array<int, 3> counts{};
  std::array<std::pair<double, int>, 3> remainders;
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * ratio[i] / total;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    remainders[i] = {exact - counts[i], i};
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < n - assigned; ++k) ++counts[remainders[k % 3].second];
  return counts;
}

}  // namespace

DatasetManifest generate_dataset(const std::vector<SourceVolume>& sources, const std::string& root,
                                 const DatasetParams& params) {
  if (sources.empty()) throw validation_error("no source volumes");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "volumes");
  fs::create_directories(fs::path(root) / "samples");

  DatasetManifest manifest;
  manifest.seed = params.seed;

  // Per-volume split assignment by seeded shuffle.
  std::vector<int> order(sources.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(mix_seed(params.seed, 0x5157));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[shuffle_rng.next_index(i)]);
  const auto counts = split_counts(static_cast<int>(sources.size()), params.split_ratio);
  std::vector<Split> split_of(sources.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Split s = k < static_cast<std::size_t>(counts[0])           ? Split::train
                    : k < static_cast<std::size_t>(counts[0] + counts[1]) ? Split::val
                                                                          : Split::test;
    split_of[order[k]] = s;
  }
  manifest.split_volumes = {{"train", {}}, {"val", {}}, {"test", {}}};
  for (std::size_t v = 0; v < sources.size(); ++v)
    manifest.split_volumes[split_name(split_of[v])].push_back(sources[v].volume_id);

  for (std::size_t v = 0; v < sources.size(); ++v) {
    const auto& src = sources[v];
    write_volume_atomic(src.volume, (fs::path(root) / "volumes" / (src.volume_id + ".btv")).string());
    write_text_atomic((fs::path(root) / "volumes" / (src.volume_id + ".graph.json")).string(),
                      export_graph_json(src.graph));

    Rng rng(mix_seed(params.seed, static_cast<std::uint64_t>(v)));
    std::vector<int> used;
    int emitted = 0;
    for (int slot = 0; slot < params.branches_per_volume; ++slot) {
      bool done = false;
      for (int attempt = 0; attempt < 10 && !done; ++attempt) {
        int edge_id = -1;
        try {
          edge_id = select_branch_excluding(src.graph, rng, used, params.synth.criteria);
        } catch (const validation_error&) {
          break;  // eligible pool exhausted
        }
        try {
          DisconnectionSample sample = synthesize_sample(src.volume, src.graph, edge_id, rng,
                                                         params.synth);
          sample.split = split_of[v];
          char suffix[16];
          std::snprintf(suffix, sizeof(suffix), "_b%02d", emitted);
          sample.sample_id = src.volume_id + suffix;
          sample.source_volume_id = src.volume_id;
          if (sample.split != Split::train) {
            const auto lab = connected_components(sample.disconnected, 26);
            const auto pool = lab.component_voxels(sample.kp2_component_label);
            for (int c = 0; c < 3; ++c)
              sample.fixed_crop_centers.push_back(pool[rng.next_index(pool.size())]);
          }
          used.push_back(edge_id);
          ++emitted;

          const fs::path dir = fs::path(root) / "samples" / sample.sample_id;
          fs::create_directories(dir);
          write_volume_atomic(sample.disconnected, (dir / "disconnected.btv").string());

          SampleRecord rec;
          rec.sample_id = sample.sample_id;
          rec.source_volume_id = sample.source_volume_id;
          rec.edge_id = sample.edge_id;
          rec.kp1 = sample.kp1;
          rec.kp2 = sample.kp2;
          rec.gap_radius = sample.gap_radius;
          rec.branch_mean_radius = sample.branch_mean_radius;
          rec.branch_volume_S = sample.branch_volume_S;
          rec.kp1_component_label = sample.kp1_component_label;
          rec.kp2_component_label = sample.kp2_component_label;
          rec.split = sample.split;
          rec.fixed_crop_centers = sample.fixed_crop_centers;
          rec.disconnected_path = "samples/" + sample.sample_id + "/disconnected.btv";
          rec.meta_path = "samples/" + sample.sample_id + "/meta.json";
          write_text_atomic((dir / "meta.json").string(), record_json(rec).dump(2));
          manifest.records.push_back(std::move(rec));
          done = true;
        } catch (const validation_error&) {
          // carve failed; burn this attempt and redraw
        }
      }
      if (!done && static_cast<int>(used.size()) == emitted &&
          eligible_edges(src.graph, params.synth.criteria).size() <= used.size())
        break;  // no branches left to try
    }
    if (emitted < params.branches_per_volume)
      manifest.shortfalls[src.volume_id] = params.branches_per_volume - emitted;
  }

  json j;
  j["version"] = manifest.version;
  j["seed"] = manifest.seed;
  j["splits"] = manifest.split_volumes;
  j["shortfalls"] = manifest.shortfalls;
  j["samples"] = json::array();
  for (const auto& r : manifest.records) j["samples"].push_back(record_json(r));
  write_text_atomic((fs::path(root) / "manifest.json").string(), j.dump(2));
  return manifest;
}

DatasetManifest load_manifest(const std::string& root) {
  namespace fs = std::filesystem;
  const auto path = fs::path(root) / "manifest.json";
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw validation_error(std::string("manifest json: parse failure: ") + e.what());
  }
  DatasetManifest manifest;
  manifest.version = manifest_field<int>(j, "version");
  if (manifest.version != 1) throw validation_error("manifest json: unsupported version");
  manifest.seed = manifest_field<std::uint64_t>(j, "seed");
  if (!j.contains("splits") || !j.at("splits").is_object())
    throw validation_error("manifest json: missing or invalid key 'splits'");
  for (const auto& [name, ids] : j.at("splits").items()) {
    split_from_name(name);
    manifest.split_volumes[name] = ids.get<std::vector<std::string>>();
  }
  if (j.contains("shortfalls"))
    manifest.shortfalls = j.at("shortfalls").get<std::map<std::string, int>>();
  if (!j.contains("samples") || !j.at("samples").is_array())
    throw validation_error("manifest json: missing or invalid key 'samples'");
  for (const auto& rj : j.at("samples")) manifest.records.push_back(record_from_json(rj));
  return manifest;
}

Volume3D load_sample_volume(const std::string& root, const SampleRecord& record) {
  return read_volume((std::filesystem::path(root) / record.disconnected_path).string());
}

SourceVolume load_source_volume(const std::string& root, const std::string& volume_id) {
  namespace fs = std::filesystem;
  SourceVolume src;
  src.volume_id = volume_id;
  src.volume = read_volume((fs::path(root) / "volumes" / (volume_id + ".btv")).string());
  const auto gpath = fs::path(root) / "volumes" / (volume_id + ".graph.json");
  std::ifstream is(gpath, std::ios::binary);
  if (!is) throw io_error("cannot open " + gpath.string());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  src.graph = import_graph_json(text);
  return src;
}

}  // namespace ttr
