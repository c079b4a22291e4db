#include "ttr/skeleton.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

namespace ttr {

namespace {

// ---- 3x3x3 neighborhood tables ------------------------------------------
// Cells are indexed 0..26 by (dz+1)*9 + (dy+1)*3 + (dx+1); 13 is the center.

struct NeighborhoodTables {
  std::array<Coord3, 27> offset{};
  std::array<std::vector<int>, 27> adj26;  // 26-adjacency between cells
  std::array<std::vector<int>, 27> adj6;   // 6-adjacency restricted to N18 cells
  std::array<bool, 27> in18{};
  std::array<bool, 27> face{};
};

const NeighborhoodTables& tables() {
  static const NeighborhoodTables t = [] {
    NeighborhoodTables t;
    for (int c = 0; c < 27; ++c)
      t.offset[c] = {c / 9 - 1, (c / 3) % 3 - 1, c % 3 - 1};
    for (int c = 0; c < 27; ++c) {
      const auto& o = t.offset[c];
      const int manhattan = std::abs(o.z) + std::abs(o.y) + std::abs(o.x);
      t.in18[c] = manhattan == 1 || manhattan == 2;
      t.face[c] = manhattan == 1;
    }
    for (int a = 0; a < 27; ++a) {
      if (a == 13) continue;
      for (int b = 0; b < 27; ++b) {
        if (b == 13 || b == a) continue;
        const int dz = std::abs(t.offset[a].z - t.offset[b].z);
        const int dy = std::abs(t.offset[a].y - t.offset[b].y);
        const int dx = std::abs(t.offset[a].x - t.offset[b].x);
        if (std::max({dz, dy, dx}) == 1) t.adj26[a].push_back(b);
        if (dz + dy + dx == 1 && t.in18[a] && t.in18[b]) t.adj6[a].push_back(b);
      }
    }
    return t;
  }();
  return t;
}

// neigh[c] = foreground flag of the cell; neigh[13] is ignored.
// A voxel is simple iff exactly one 26-component of foreground exists among
// its 26 neighbors AND exactly one 6-component of background in its
// 18-neighborhood touches a face neighbor. Removing such a voxel cannot
// change connectivity, holes, or cavities.
bool is_simple(const std::array<bool, 27>& neigh) {
  const auto& t = tables();
  std::array<bool, 27> seen{};

  int fg_components = 0;
  for (int c = 0; c < 27 && fg_components < 2; ++c) {
    if (c == 13 || !neigh[c] || seen[c]) continue;
    ++fg_components;
    std::array<int, 27> stack;
    int top = 0;
    stack[top++] = c;
    seen[c] = true;
    while (top) {
      const int u = stack[--top];
      for (int v : t.adj26[u])
        if (neigh[v] && !seen[v]) {
          seen[v] = true;
          stack[top++] = v;
        }
    }
  }
  if (fg_components != 1) return false;

  seen.fill(false);
  int bg_components = 0;
  for (int c = 0; c < 27 && bg_components < 2; ++c) {
    if (!t.in18[c] || neigh[c] || seen[c]) continue;
    bool touches_face = t.face[c];
    std::array<int, 27> stack;
    int top = 0;
    stack[top++] = c;
    seen[c] = true;
    while (top) {
      const int u = stack[--top];
      for (int v : t.adj6[u])
        if (!neigh[v] && !seen[v]) {
          seen[v] = true;
          touches_face = touches_face || t.face[v];
          stack[top++] = v;
        }
    }
    if (touches_face) ++bg_components;
  }
  return bg_components == 1;
}

std::array<bool, 27> gather(const Volume3D& vol, Coord3 p) {
  std::array<bool, 27> neigh{};
  int c = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx, ++c) {
        const Coord3 q{p.z + dz, p.y + dy, p.x + dx};
        neigh[c] = vol.dims.contains(q) && vol.at(q);
      }
  return neigh;
}

int foreground_neighbors26(const std::array<bool, 27>& neigh) {
  int n = 0;
  for (int c = 0; c < 27; ++c)
    if (c != 13 && neigh[c]) ++n;
  return n;
}

}  // namespace

SkeletonVoxels skeletonize(const Volume3D& vol) {
  if (vol.foreground_count() == 0) throw validation_error("empty volume");
  Volume3D work = vol;
  const Dims3 dims = vol.dims;

  // Fixed subiteration order keeps the result deterministic.
  static constexpr Coord3 kDirections[6] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0},
                                            {0, 1, 0},  {0, 0, -1}, {0, 0, 1}};
  std::vector<std::int64_t> candidates;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Coord3& dir : kDirections) {
      candidates.clear();
      for (std::int64_t i = 0; i < dims.voxel_count(); ++i) {
        if (!work.data[i]) continue;
        const Coord3 p = dims.coord(i);
        const Coord3 q{p.z + dir.z, p.y + dir.y, p.x + dir.x};
        if (!dims.contains(q) || !work.at(q)) candidates.push_back(i);
      }
      // Sequential re-checked deletion: each removal sees all prior ones, so
      // the simple-point guarantee applies at every step.
      for (std::int64_t i : candidates) {
        if (!work.data[i]) continue;
        const Coord3 p = dims.coord(i);
        const Coord3 q{p.z + dir.z, p.y + dir.y, p.x + dir.x};
        if (dims.contains(q) && work.at(q)) continue;  // no longer a border
        const auto neigh = gather(work, p);
        const int n = foreground_neighbors26(neigh);
        if (n <= 1) continue;  // keep curve endpoints and isolated voxels
        if (!is_simple(neigh)) continue;
        work.data[i] = 0;
        changed = true;
      }
    }
  }

  SkeletonVoxels skel;
  skel.source_dims = dims;
  for (std::int64_t i = 0; i < dims.voxel_count(); ++i)
    if (work.data[i]) skel.voxels.push_back(dims.coord(i));
  return skel;
}

// ---- graph assembly -------------------------------------------------------

namespace {

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  // returns false when already joined (a cycle for edge insertion)
  bool join(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

std::vector<std::int64_t> skeleton_neighbors(const Dims3& dims,
                                             const std::vector<std::uint8_t>& mask, Coord3 p) {
  std::vector<std::int64_t> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dz && !dy && !dx) continue;
        const Coord3 q{p.z + dz, p.y + dy, p.x + dx};
        if (dims.contains(q) && mask[dims.index(q.z, q.y, q.x)])
          out.push_back(dims.index(q.z, q.y, q.x));
      }
  return out;
}

}  // namespace

BranchGraph build_graph(const SkeletonVoxels& skel, const FloatGrid& edt) {
  if (skel.voxels.empty()) throw validation_error("empty skeleton");
  const Dims3 dims = skel.source_dims;
  if (!(edt.dims == dims)) throw validation_error("edt/skeleton dims mismatch");

  std::vector<std::uint8_t> mask(dims.voxel_count(), 0);
  for (const auto& v : skel.voxels) mask[dims.index(v.z, v.y, v.x)] = 1;

  std::vector<std::int64_t> skel_idx;
  skel_idx.reserve(skel.voxels.size());
  for (std::int64_t i = 0; i < dims.voxel_count(); ++i)
    if (mask[i]) skel_idx.push_back(i);

  std::map<std::int64_t, int> degree;
  for (std::int64_t i : skel_idx)
    degree[i] = static_cast<int>(skeleton_neighbors(dims, mask, dims.coord(i)).size());

  // Node voxels (degree != 2); adjacent bifurcation voxels merge into one node.
  std::vector<std::int64_t> node_voxels;
  for (std::int64_t i : skel_idx)
    if (degree[i] != 2) node_voxels.push_back(i);
  std::map<std::int64_t, int> node_voxel_pos;
  for (std::size_t k = 0; k < node_voxels.size(); ++k) node_voxel_pos[node_voxels[k]] = static_cast<int>(k);

  DisjointSet clusters(static_cast<int>(node_voxels.size()));
  for (std::int64_t i : node_voxels) {
    if (degree[i] < 3) continue;
    for (std::int64_t j : skeleton_neighbors(dims, mask, dims.coord(i)))
      if (j > i && degree[j] >= 3) clusters.join(node_voxel_pos[i], node_voxel_pos[j]);
  }

  BranchGraph graph;
  graph.dims = dims;

  std::map<int, int> root_to_node;  // cluster root -> node id (ascending min index)
  std::map<std::int64_t, int> voxel_node;
  for (std::size_t k = 0; k < node_voxels.size(); ++k) {
    const int root = clusters.find(static_cast<int>(k));
    auto [it, fresh] = root_to_node.emplace(root, static_cast<int>(graph.nodes.size()));
    if (fresh) graph.nodes.push_back({it->second, {}, NodeKind::endpoint, {}});
    graph.nodes[it->second].voxels.push_back(dims.coord(node_voxels[k]));
    voxel_node[node_voxels[k]] = it->second;
  }
  for (auto& node : graph.nodes) {
    double z = 0, y = 0, x = 0;
    for (const auto& v : node.voxels) {
      z += v.z;
      y += v.y;
      x += v.x;
    }
    const double n = static_cast<double>(node.voxels.size());
    node.coord = {static_cast<int>(std::llround(z / n)), static_cast<int>(std::llround(y / n)),
                  static_cast<int>(std::llround(x / n))};
    node.kind = (node.voxels.size() == 1 &&
                 degree[dims.index(node.voxels[0].z, node.voxels[0].y, node.voxels[0].x)] <= 1)
                    ? NodeKind::endpoint
                    : NodeKind::bifurcation;
  }

  // Walk maximal degree-2 chains. Each chain is discovered at its
  // smallest-linear-index voxel that touches a node.
  std::vector<std::uint8_t> visited(dims.voxel_count(), 0);
  auto walk = [&](std::int64_t node_voxel, std::int64_t first) {
    GraphEdge edge;
    edge.id = static_cast<int>(graph.edges.size());
    edge.node_a = voxel_node.at(node_voxel);
    std::int64_t prev = node_voxel, cur = first;
    while (true) {
      edge.points.push_back(dims.coord(cur));
      visited[cur] = 1;
      const auto neigh = skeleton_neighbors(dims, mask, dims.coord(cur));
      std::int64_t nxt = -1;
      for (std::int64_t cand : neigh)
        if (cand != prev) nxt = cand;
      prev = cur;
      cur = nxt;
      if (degree[cur] != 2) break;
    }
    edge.node_b = voxel_node.at(cur);
    graph.edges.push_back(std::move(edge));
  };

  for (std::int64_t i : skel_idx) {
    if (degree[i] != 2 || visited[i]) continue;
    std::int64_t start_node = -1;
    for (std::int64_t j : skeleton_neighbors(dims, mask, dims.coord(i)))
      if (degree[j] != 2) {
        start_node = j;
        break;  // neighbors come in ascending linear order
      }
    if (start_node >= 0) walk(start_node, i);
  }

  // Leftover degree-2 voxels are pure loops: promote the smallest-index voxel
  // of each to a synthetic junction so the loop can be serialized as an edge.
  for (std::int64_t i : skel_idx) {
    if (degree[i] != 2 || visited[i]) continue;
    const int node_id = static_cast<int>(graph.nodes.size());
    graph.nodes.push_back({node_id, dims.coord(i), NodeKind::bifurcation, {dims.coord(i)}});
    voxel_node[i] = node_id;
    visited[i] = 1;
    GraphEdge edge;
    edge.id = static_cast<int>(graph.edges.size());
    edge.node_a = edge.node_b = node_id;
    std::int64_t prev = i, cur = skeleton_neighbors(dims, mask, dims.coord(i)).front();
    while (cur != i) {
      edge.points.push_back(dims.coord(cur));
      visited[cur] = 1;
      const auto neigh = skeleton_neighbors(dims, mask, dims.coord(cur));
      std::int64_t nxt = neigh[0] == prev ? neigh[1] : neigh[0];
      prev = cur;
      cur = nxt;
    }
    graph.edges.push_back(std::move(edge));
  }

  // Directly touching nodes (no interior voxels between them).
  std::set<std::pair<int, int>> contact_pairs;
  for (std::int64_t i : node_voxels) {
    for (std::int64_t j : skeleton_neighbors(dims, mask, dims.coord(i))) {
      if (j <= i || degree[j] == 2) continue;
      const int a = voxel_node.at(i), b = voxel_node.at(j);
      if (a == b) continue;
      const auto key = std::minmax(a, b);
      if (!contact_pairs.insert(key).second) continue;
      GraphEdge edge;
      edge.id = static_cast<int>(graph.edges.size());
      edge.node_a = a;
      edge.node_b = b;
      graph.edges.push_back(std::move(edge));
    }
  }

  DisjointSet acyclic(static_cast<int>(graph.nodes.size()));
  for (const auto& e : graph.edges)
    if (e.node_a == e.node_b || !acyclic.join(e.node_a, e.node_b)) graph.contains_cycles = true;

  // Radii and length from the EDT.
  for (auto& e : graph.edges) {
    e.radii.reserve(e.points.size());
    for (const auto& p : e.points) e.radii.push_back(edt.at(p.z, p.y, p.x));
    if (!e.radii.empty())
      e.mean_radius = std::accumulate(e.radii.begin(), e.radii.end(), 0.0) / e.radii.size();
    for (std::size_t k = 1; k < e.points.size(); ++k)
      e.length += distance(e.points[k - 1], e.points[k]);
  }

  // Every skeleton voxel gets an owning edge (interiors their own edge, node
  // voxels the smallest incident edge id), then each foreground voxel counts
  // toward the owner of its nearest skeleton voxel. Ties on distance resolve
  // to the smallest linear index, which lexicographic offset order delivers.
  std::vector<int> owner(dims.voxel_count(), -1);
  for (const auto& e : graph.edges)
    for (const auto& p : e.points) owner[dims.index(p.z, p.y, p.x)] = e.id;
  for (auto it = graph.edges.rbegin(); it != graph.edges.rend(); ++it)
    for (int node_id : {it->node_a, it->node_b})
      for (const auto& v : graph.nodes[node_id].voxels) owner[dims.index(v.z, v.y, v.x)] = it->id;

  Volume3D sites(dims);
  for (std::int64_t i = 0; i < dims.voxel_count(); ++i) sites.data[i] = mask[i] ? 0 : 1;
  const auto d2 = squared_edt(sites, {1.0, 1.0, 1.0});

  double max_d2 = 0.0;
  for (std::int64_t i = 0; i < dims.voxel_count(); ++i)
    if (edt.data[i] > 0.0f) max_d2 = std::max(max_d2, d2[i]);
  const int reach = static_cast<int>(std::ceil(std::sqrt(max_d2)));
  std::map<std::int64_t, std::vector<Coord3>> by_norm;  // offsets in lexicographic order
  for (int dz = -reach; dz <= reach; ++dz)
    for (int dy = -reach; dy <= reach; ++dy)
      for (int dx = -reach; dx <= reach; ++dx) {
        const std::int64_t n2 = static_cast<std::int64_t>(dz) * dz +
                                static_cast<std::int64_t>(dy) * dy +
                                static_cast<std::int64_t>(dx) * dx;
        if (n2 <= max_d2) by_norm[n2].push_back({dz, dy, dx});
      }

  for (std::int64_t i = 0; i < dims.voxel_count(); ++i) {
    if (!(edt.data[i] > 0.0f)) continue;  // background
    const Coord3 p = dims.coord(i);
    const auto norm = static_cast<std::int64_t>(std::llround(d2[i]));
    int own = -1;
    for (const auto& o : by_norm.at(norm)) {
      const Coord3 q{p.z + o.z, p.y + o.y, p.x + o.x};
      if (!dims.contains(q)) continue;
      const std::int64_t qi = dims.index(q.z, q.y, q.x);
      if (mask[qi]) {
        own = owner[qi];
        break;
      }
    }
    if (own >= 0) ++graph.edges[own].branch_volume_S;
  }

  return graph;
}

const GraphNode& BranchGraph::node(int id) const {
  for (const auto& n : nodes)
    if (n.id == id) return n;
  throw validation_error("unknown node id");
}

const GraphEdge& BranchGraph::edge(int id) const {
  for (const auto& e : edges)
    if (e.id == id) return e;
  throw validation_error("unknown edge id");
}

// ---- JSON -----------------------------------------------------------------

namespace {

using nlohmann::json;

json coord_json(const Coord3& c) { return json::array({c.z, c.y, c.x}); }

[[noreturn]] void schema_error(const std::string& key) {
  throw validation_error("graph json: missing or invalid key '" + key + "'");
}

Coord3 parse_coord(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number_integer() ||
      !j[1].is_number_integer() || !j[2].is_number_integer())
    schema_error(key);
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

template <typename T>
T field(const json& j, const std::string& key, bool (json::*check)() const) {
  if (!j.contains(key) || !((j.at(key)).*check)()) schema_error(key);
  return j.at(key).get<T>();
}

}  // namespace

std::string export_graph_json(const BranchGraph& graph) {
  json j;
  j["version"] = 1;
  j["dims"] = {graph.dims.d, graph.dims.h, graph.dims.w};
  j["contains_cycles"] = graph.contains_cycles;
  j["nodes"] = json::array();
  for (const auto& n : graph.nodes) {
    json voxels = json::array();
    for (const auto& v : n.voxels) voxels.push_back(coord_json(v));
    j["nodes"].push_back({{"id", n.id},
                          {"coord", coord_json(n.coord)},
                          {"kind", n.kind == NodeKind::endpoint ? "endpoint" : "bifurcation"},
                          {"voxels", voxels}});
  }
  j["edges"] = json::array();
  for (const auto& e : graph.edges) {
    json points = json::array(), radii = json::array();
    for (const auto& p : e.points) points.push_back(coord_json(p));
    for (double r : e.radii) radii.push_back(r);
    j["edges"].push_back({{"id", e.id},
                          {"node_a", e.node_a},
                          {"node_b", e.node_b},
                          {"points", points},
                          {"radii", radii},
                          {"mean_radius", e.mean_radius},
                          {"length", e.length},
                          {"branch_volume_S", e.branch_volume_S}});
  }
  return j.dump(2);
}

BranchGraph import_graph_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw validation_error(std::string("graph json: parse failure: ") + e.what());
  }
  if (field<int>(j, "version", &json::is_number_integer) != 1)
    throw validation_error("graph json: unsupported version");

  BranchGraph graph;
  if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 3) schema_error("dims");
  graph.dims = {j["dims"][0].get<int>(), j["dims"][1].get<int>(), j["dims"][2].get<int>()};
  graph.contains_cycles = field<bool>(j, "contains_cycles", &json::is_boolean);

  if (!j.contains("nodes") || !j["nodes"].is_array()) schema_error("nodes");
  for (const auto& nj : j["nodes"]) {
    GraphNode n;
    n.id = field<int>(nj, "id", &json::is_number_integer);
    n.coord = parse_coord(nj.contains("coord") ? nj.at("coord") : json(), "coord");
    const auto kind = field<std::string>(nj, "kind", &json::is_string);
    if (kind == "endpoint")
      n.kind = NodeKind::endpoint;
    else if (kind == "bifurcation")
      n.kind = NodeKind::bifurcation;
    else
      schema_error("kind");
    if (nj.contains("voxels")) {
      if (!nj["voxels"].is_array()) schema_error("voxels");
      for (const auto& vj : nj["voxels"]) n.voxels.push_back(parse_coord(vj, "voxels"));
    } else {
      n.voxels.push_back(n.coord);  // minimal files omit the cluster listing
    }
    graph.nodes.push_back(std::move(n));
  }

  if (!j.contains("edges") || !j["edges"].is_array()) schema_error("edges");
  for (const auto& ej : j["edges"]) {
    GraphEdge e;
    e.id = field<int>(ej, "id", &json::is_number_integer);
    e.node_a = field<int>(ej, "node_a", &json::is_number_integer);
    e.node_b = field<int>(ej, "node_b", &json::is_number_integer);
    if (!ej.contains("points") || !ej["points"].is_array()) schema_error("points");
    for (const auto& pj : ej["points"]) e.points.push_back(parse_coord(pj, "points"));
    if (!ej.contains("radii") || !ej["radii"].is_array()) schema_error("radii");
    for (const auto& rj : ej["radii"]) {
      if (!rj.is_number()) schema_error("radii");
      e.radii.push_back(rj.get<double>());
    }
    if (e.radii.size() != e.points.size()) schema_error("radii");
    if (!ej.contains("mean_radius") || !ej["mean_radius"].is_number()) schema_error("mean_radius");
    e.mean_radius = ej["mean_radius"].get<double>();
    if (!ej.contains("length") || !ej["length"].is_number()) schema_error("length");
    e.length = ej["length"].get<double>();
    e.branch_volume_S = field<std::uint64_t>(ej, "branch_volume_S", &json::is_number_unsigned);
    graph.edges.push_back(std::move(e));
  }

  for (const auto& e : graph.edges) {
    graph.node(e.node_a);  // throws on dangling references
    graph.node(e.node_b);
  }
  return graph;
}

}  // namespace ttr
