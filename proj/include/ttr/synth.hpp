#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ttr/coord.hpp"
#include "ttr/errors.hpp"
#include "ttr/rng.hpp"
#include "ttr/skeleton.hpp"
#include "ttr/volume.hpp"

namespace ttr {

// ---- procedural phantoms ----------------------------------------------------

struct PhantomParams {
  Dims3 dims{64, 64, 64};
  int depth = 3;  // tree levels; 1 = a single trunk
  double root_radius = 4.0;
  double radius_decay = 0.7;
  std::pair<double, double> branch_length_range{12.0, 20.0};
  std::pair<double, double> branching_angle_range{0.35, 0.70};  // radians
  std::uint64_t seed = 0;
};

// Binary capsule tree plus its constructive ground-truth graph (not
// re-extracted from the volume). Bit-identical for equal params.
std::pair<Volume3D, BranchGraph> generate_phantom_tree(const PhantomParams& params);

// ---- disconnection synthesis ------------------------------------------------

struct BranchCriteria {
  int min_interior_points = 8;
  double min_mean_radius = 1.0;
  bool exclude_trunk = true;  // drop the unique largest-radius edge
};

// Uniform draw over eligible edges; deterministic for a given rng state.
int select_branch(const BranchGraph& graph, Rng& rng, const BranchCriteria& criteria = {});

// As select_branch but restricted to edge ids not present in `used`.
int select_branch_excluding(const BranchGraph& graph, Rng& rng, const std::vector<int>& used,
                            const BranchCriteria& criteria = {});

// Two interior-point indices, min_sep <= |i-j| <= max_sep, both at least two
// points from either end. First index returned is KP1: the end of the pair
// nearer the node whose attached subtree owns more foreground.
std::pair<int, int> sample_keypoints(const BranchGraph& graph, int edge_id, Rng& rng,
                                     int min_sep = 4, int max_sep = 12);

// Delete foreground within (local radius + margin) of the centerline strictly
// between the keypoints; the keypoints' own cross-sections survive.
std::pair<Volume3D, double> carve_gap(const Volume3D& vol, const GraphEdge& edge, int kp1_idx,
                                      int kp2_idx, double margin = 1.5);

enum class Split { train, val, test };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct DisconnectionSample {
  std::string sample_id;
  std::string source_volume_id;
  int edge_id = 0;
  Coord3 kp1{}, kp2{};
  double gap_radius = 0.0;
  Volume3D disconnected;
  double branch_mean_radius = 0.0;
  std::uint64_t branch_volume_S = 0;
  std::uint32_t kp1_component_label = 0, kp2_component_label = 0;
  Split split = Split::train;
  std::vector<Coord3> fixed_crop_centers;  // empty for train, exactly 3 otherwise
};

// Empty result = valid sample; otherwise human-readable violations.
std::vector<std::string> validate_sample(const DisconnectionSample& sample);

struct SynthParams {
  int min_sep = 4;
  int max_sep = 12;
  double margin = 1.5;
  BranchCriteria criteria{};
};

// One carve attempt on a specific edge; throws validation_error
// "carve produced invalid topology" when the result fails validate_sample.
DisconnectionSample synthesize_sample(const Volume3D& vol, const BranchGraph& graph, int edge_id,
                                      Rng& rng, const SynthParams& params = {});

// ---- dataset ---------------------------------------------------------------

struct SourceVolume {
  std::string volume_id;
  Volume3D volume;
  BranchGraph graph;
};

struct SampleRecord {
  std::string sample_id;
  std::string source_volume_id;
  int edge_id = 0;
  Coord3 kp1{}, kp2{};
  double gap_radius = 0.0;
  double branch_mean_radius = 0.0;
  std::uint64_t branch_volume_S = 0;
  std::uint32_t kp1_component_label = 0, kp2_component_label = 0;
  Split split = Split::train;
  std::vector<Coord3> fixed_crop_centers;
  std::string disconnected_path;  // relative to the dataset root
  std::string meta_path;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<std::string>> split_volumes;  // "train"/"val"/"test"
  std::vector<SampleRecord> records;
  std::map<std::string, int> shortfalls;  // volume id -> missing sample count
};

struct DatasetParams {
  int branches_per_volume = 30;
  std::array<int, 3> split_ratio{7, 1, 2};
  std::uint64_t seed = 0;
  SynthParams synth{};
};

// Generates, writes (atomically) and describes the dataset under `root`:
// manifest.json, volumes/<id>.btv + <id>.graph.json,
// samples/<sample_id>/disconnected.btv + meta.json.
DatasetManifest generate_dataset(const std::vector<SourceVolume>& sources,
                                 const std::string& root, const DatasetParams& params);

DatasetManifest load_manifest(const std::string& root);
Volume3D load_sample_volume(const std::string& root, const SampleRecord& record);
SourceVolume load_source_volume(const std::string& root, const std::string& volume_id);

// Temp-file-then-rename write used for every dataset artifact.
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace ttr
