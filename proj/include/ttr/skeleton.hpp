#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttr/coord.hpp"
#include "ttr/errors.hpp"
#include "ttr/volume.hpp"

namespace ttr {

// Unit-width curve skeleton; voxels are kept sorted by linear index.
struct SkeletonVoxels {
  Dims3 source_dims{};
  std::vector<Coord3> voxels;
};

enum class NodeKind { endpoint, bifurcation };

// A node owns one or more skeleton voxels (junction clusters are merged);
// coord is the rounded centroid of that set, which for multi-voxel clusters
// need not itself be a skeleton voxel.
struct GraphNode {
  int id = 0;
  Coord3 coord{};
  NodeKind kind = NodeKind::endpoint;
  std::vector<Coord3> voxels;
};

struct GraphEdge {
  int id = 0;
  int node_a = 0;
  int node_b = 0;
  std::vector<Coord3> points;   // interior path, ordered node_a -> node_b
  std::vector<double> radii;    // per interior point, voxel units
  double mean_radius = 0.0;     // 0 when the edge has no interior points
  double length = 0.0;          // sum of consecutive interior steps
  std::uint64_t branch_volume_S = 0;
};

struct BranchGraph {
  Dims3 dims{};
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  bool contains_cycles = false;

  const GraphNode& node(int id) const;
  const GraphEdge& edge(int id) const;
};

// Topology-preserving sequential thinning (6 fixed directional subiterations,
// simple-point test on the 26-neighborhood, curve endpoints kept).
SkeletonVoxels skeletonize(const Volume3D& vol);

// Assemble nodes/edges from a unit-width skeleton. `edt` is the Euclidean
// distance transform of the source volume: it supplies per-point radii and,
// through its support (edt > 0 iff foreground), the voxel set distributed
// into branch_volume_S by nearest-skeleton-voxel ownership.
BranchGraph build_graph(const SkeletonVoxels& skel, const FloatGrid& edt);

std::string export_graph_json(const BranchGraph& graph);
BranchGraph import_graph_json(const std::string& text);

}  // namespace ttr
