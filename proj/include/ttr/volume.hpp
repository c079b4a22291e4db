#ifndef TTR_VOLUME_HPP
#define TTR_VOLUME_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ttr/coord.hpp"
#include "ttr/errors.hpp"

namespace ttr {

/// Dense binary 3D voxel grid, x-fastest linear order.
struct Volume3D {
  Dims3 dims;
  Spacing3 spacing;
  std::vector<std::uint8_t> data;  // 0 = background, 1 = foreground

  Volume3D() = default;
  Volume3D(Dims3 d, Spacing3 s = {}) : dims(d), spacing(s), data(d.voxel_count(), 0) {}

  bool at(int z, int y, int x) const { return data[dims.index(z, y, x)] != 0; }
  bool at(const Coord3& c) const { return data[dims.index(c)] != 0; }
  void set(int z, int y, int x, bool v) { data[dims.index(z, y, x)] = v ? 1 : 0; }
  void set(const Coord3& c, bool v) { data[dims.index(c)] = v ? 1 : 0; }

  std::int64_t foreground_count() const;
};

/// Dense float grid sharing Volume3D's layout (distance maps, accumulators).
struct FloatGrid {
  Dims3 dims;
  Spacing3 spacing;
  std::vector<float> data;

  FloatGrid() = default;
  FloatGrid(Dims3 d, Spacing3 s = {}) : dims(d), spacing(s), data(d.voxel_count(), 0.0f) {}

  float at(int z, int y, int x) const { return data[dims.index(z, y, x)]; }
  float at(const Coord3& c) const { return data[dims.index(c)]; }
};

/// Connected-component labeling. Label 0 is background; labels 1..M are
/// components ordered by descending voxel count, ties broken by the smaller
/// minimum linear index.
struct LabelVolume {
  Dims3 dims;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint64_t> component_sizes;  // component_sizes[l-1] = size of label l

  std::uint32_t label_count() const { return static_cast<std::uint32_t>(component_sizes.size()); }
  std::uint32_t at(const Coord3& c) const { return labels[dims.index(c)]; }
  std::uint64_t size_of(std::uint32_t label) const { return component_sizes[label - 1]; }

  /// Foreground mask of a single component.
  Volume3D component_mask(std::uint32_t label) const;
  /// All voxels carrying the given label, in linear-index order.
  std::vector<Coord3> component_voxels(std::uint32_t label) const;
};

/// Axis-aligned crop. `origin` is in the parent frame and may be negative;
/// voxels outside the parent are zero-filled.
struct Crop3D {
  Coord3 origin;
  Dims3 extent;
  std::vector<std::uint8_t> data;

  bool at(int z, int y, int x) const { return data[extent.index(z, y, x)] != 0; }
  /// parent_coord = origin + local_coord
  Coord3 to_parent(const Coord3& local) const {
    return {origin.z + local.z, origin.y + local.y, origin.x + local.x};
  }
  Coord3 to_local(const Coord3& parent) const {
    return {parent.z - origin.z, parent.y - origin.y, parent.x - origin.x};
  }
};

/// Two voxels share a label iff they are connected under the chosen adjacency.
LabelVolume connected_components(const Volume3D& vol, int connectivity = 26);

/// Components smaller than min_voxels become background; remaining labels are
/// recompacted preserving size order.
LabelVolume filter_small_components(const LabelVolume& lab, std::uint64_t min_voxels);

/// Drops the label-1 (largest) component. Throws validation_error("no components")
/// on an empty labeling.
LabelVolume remove_largest_component(const LabelVolume& lab);

/// Crop with origin = center - floor(extent/2) per axis. `center` must lie
/// inside the volume; out-of-bounds voxels are zero-filled.
Crop3D crop_centered(const Volume3D& vol, const Coord3& center, const Dims3& extent);

/// Crop of the mask (labels == label), same geometry as crop_centered.
Crop3D crop_component(const LabelVolume& lab, std::uint32_t label, const Coord3& center,
                      const Dims3& extent);

/// Crop of the mask (labels == label_a || labels == label_b).
Crop3D crop_component_union(const LabelVolume& lab, std::uint32_t label_a, std::uint32_t label_b,
                            const Coord3& center, const Dims3& extent);

// Morphology with a Euclidean ball: offset (dz,dy,dx) belongs to the ball iff
// dz^2+dy^2+dx^2 <= radius^2, in voxel units. Erosion treats out-of-volume
// space as foreground, so erode(A,r) == complement(dilate(complement(A),r))
// holds on domains padded by >= r.
Volume3D dilate_ball(const Volume3D& vol, double radius);
Volume3D erode_ball(const Volume3D& vol, double radius);

/// Exact squared Euclidean distance to the nearest background voxel, per
/// voxel (0 for background). Distances use the given spacing. A volume with
/// no background yields +infinity everywhere.
std::vector<double> squared_edt(const Volume3D& vol, const Spacing3& spacing);

/// Exact Euclidean distance transform using the volume's own spacing.
FloatGrid euclidean_distance_transform(const Volume3D& vol);

// .btv file format, little-endian:
//   magic "BTV1" | u32 version=1 | u32 D,H,W | f64 sz,sy,sx | u8 dtype | payload
// dtype 0 = bool-as-u8 (payload bytes must be 0 or 1), dtype 1 = f32.
// Payload holds D*H*W elements in x-fastest order.
void write_volume(const Volume3D& vol, const std::string& path);
Volume3D read_volume(const std::string& path);
void write_float_grid(const FloatGrid& grid, const std::string& path);
FloatGrid read_float_grid(const std::string& path);

/// Squared distance from point p to segment [a, b] (degenerate segments allowed).
double point_segment_distance2(const Vec3& p, const Vec3& a, const Vec3& b);

/// Set every voxel within `radius` of segment [a, b] to foreground
/// (cylinder plus hemispherical caps). Regions outside the volume are clipped.
void paint_capsule(Volume3D& vol, const Vec3& a, const Vec3& b, double radius);

/// Neighbor offsets for 6/18/26 connectivity.
const std::vector<Coord3>& neighbor_offsets(int connectivity);

}  // namespace ttr

#endif
