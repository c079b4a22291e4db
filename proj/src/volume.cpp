#include "ttr/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>

namespace ttr {

namespace {

std::vector<Coord3> make_offsets(int connectivity) {
  std::vector<Coord3> offs;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int n = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (n == 0) continue;
        if (connectivity == 6 && n > 1) continue;
        if (connectivity == 18 && n > 2) continue;
        offs.push_back({dz, dy, dx});
      }
  return offs;
}

}  // namespace

const std::vector<Coord3>& neighbor_offsets(int connectivity) {
  static const std::vector<Coord3> n6 = make_offsets(6);
  static const std::vector<Coord3> n18 = make_offsets(18);
  static const std::vector<Coord3> n26 = make_offsets(26);
  switch (connectivity) {
    case 6: return n6;
    case 18: return n18;
    case 26: return n26;
    default: throw validation_error("connectivity must be 6, 18 or 26");
  }
}

std::int64_t Volume3D::foreground_count() const {
  return std::count(data.begin(), data.end(), std::uint8_t{1});
}

Volume3D LabelVolume::component_mask(std::uint32_t label) const {
  Volume3D out(dims);
  for (std::int64_t i = 0; i < dims.voxel_count(); ++i)
    out.data[i] = labels[i] == label ? 1 : 0;
  return out;
}

std::vector<Coord3> LabelVolume::component_voxels(std::uint32_t label) const {
  std::vector<Coord3> out;
  for (std::int64_t i = 0; i < dims.voxel_count(); ++i)
    if (labels[i] == label) out.push_back(dims.coord(i));
  return out;
}

LabelVolume connected_components(const Volume3D& vol, int connectivity) {
  const auto& offs = neighbor_offsets(connectivity);
  const Dims3 dims = vol.dims;
  const std::int64_t n = dims.voxel_count();

  LabelVolume out;
  out.dims = dims;
  out.labels.assign(n, 0);

  struct CompInfo {
    std::uint64_t size;
    std::int64_t min_index;
    std::uint32_t provisional;
  };
  std::vector<CompInfo> comps;
  std::vector<std::int64_t> stack;

  std::uint32_t next = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!vol.data[i] || out.labels[i] != 0) continue;
    ++next;
    CompInfo info{0, i, next};
    out.labels[i] = next;
    stack.push_back(i);
    while (!stack.empty()) {
      const std::int64_t cur = stack.back();
      stack.pop_back();
      ++info.size;
      const Coord3 c = dims.coord(cur);
      for (const auto& o : offs) {
        const Coord3 q{c.z + o.z, c.y + o.y, c.x + o.x};
        if (!dims.contains(q)) continue;
        const std::int64_t qi = dims.index(q);
        if (vol.data[qi] && out.labels[qi] == 0) {
          out.labels[qi] = next;
          stack.push_back(qi);
        }
      }
    }
    comps.push_back(info);
  }

  // Relabel by descending size, ties by smaller minimum linear index.
  std::vector<std::uint32_t> order(comps.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (comps[a].size != comps[b].size) return comps[a].size > comps[b].size;
    return comps[a].min_index < comps[b].min_index;
  });
  std::vector<std::uint32_t> remap(comps.size() + 1, 0);
  out.component_sizes.resize(comps.size());
  for (std::uint32_t rank = 0; rank < order.size(); ++rank) {
    remap[comps[order[rank]].provisional] = rank + 1;
    out.component_sizes[rank] = comps[order[rank]].size;
  }
  for (std::int64_t i = 0; i < n; ++i)
    if (out.labels[i]) out.labels[i] = remap[out.labels[i]];
  return out;
}

namespace {

// Drops labels for which keep[label] is false and recompacts. Size order of
// the survivors is preserved (they were already sorted).
LabelVolume compact_labels(const LabelVolume& lab, const std::vector<bool>& keep) {
  LabelVolume out;
  out.dims = lab.dims;
  out.labels.assign(lab.labels.size(), 0);
  std::vector<std::uint32_t> remap(lab.label_count() + 1, 0);
  std::uint32_t next = 0;
  for (std::uint32_t l = 1; l <= lab.label_count(); ++l) {
    if (keep[l]) {
      remap[l] = ++next;
      out.component_sizes.push_back(lab.component_sizes[l - 1]);
    }
  }
  for (std::size_t i = 0; i < lab.labels.size(); ++i) {
    const std::uint32_t l = lab.labels[i];
    if (l) out.labels[i] = remap[l];
  }
  return out;
}

}  // namespace

LabelVolume filter_small_components(const LabelVolume& lab, std::uint64_t min_voxels) {
  std::vector<bool> keep(lab.label_count() + 1, false);
  for (std::uint32_t l = 1; l <= lab.label_count(); ++l)
    keep[l] = lab.component_sizes[l - 1] >= min_voxels;
  return compact_labels(lab, keep);
}

LabelVolume remove_largest_component(const LabelVolume& lab) {
  if (lab.label_count() == 0) throw validation_error("no components");
  std::vector<bool> keep(lab.label_count() + 1, true);
  keep[1] = false;
  return compact_labels(lab, keep);
}

namespace {

Crop3D crop_generic(const Dims3& dims, const Coord3& center, const Dims3& extent,
                    const std::function<bool(std::int64_t)>& predicate) {
  if (!dims.contains(center)) throw validation_error("crop center outside volume");
  Crop3D crop;
  crop.origin = {center.z - extent.d / 2, center.y - extent.h / 2, center.x - extent.w / 2};
  crop.extent = extent;
  crop.data.assign(extent.voxel_count(), 0);
  const int z0 = std::max(0, -crop.origin.z), z1 = std::min(extent.d, dims.d - crop.origin.z);
  const int y0 = std::max(0, -crop.origin.y), y1 = std::min(extent.h, dims.h - crop.origin.y);
  const int x0 = std::max(0, -crop.origin.x), x1 = std::min(extent.w, dims.w - crop.origin.x);
  for (int z = z0; z < z1; ++z)
    for (int y = y0; y < y1; ++y) {
      const std::int64_t src =
          dims.index(crop.origin.z + z, crop.origin.y + y, crop.origin.x + x0);
      const std::int64_t dst = extent.index(z, y, x0);
      for (int x = 0; x < x1 - x0; ++x)
        crop.data[dst + x] = predicate(src + x) ? 1 : 0;
    }
  return crop;
}

}  // namespace

Crop3D crop_centered(const Volume3D& vol, const Coord3& center, const Dims3& extent) {
  return crop_generic(vol.dims, center, extent,
                      [&](std::int64_t i) { return vol.data[i] != 0; });
}

Crop3D crop_component(const LabelVolume& lab, std::uint32_t label, const Coord3& center,
                      const Dims3& extent) {
  return crop_generic(lab.dims, center, extent,
                      [&](std::int64_t i) { return lab.labels[i] == label; });
}

Crop3D crop_component_union(const LabelVolume& lab, std::uint32_t label_a, std::uint32_t label_b,
                            const Coord3& center, const Dims3& extent) {
  return crop_generic(lab.dims, center, extent, [&](std::int64_t i) {
    return lab.labels[i] == label_a || lab.labels[i] == label_b;
  });
}

// ---------------------------------------------------------------------------
// Exact EDT: per-axis lower envelope of parabolas (squared distances remain
// exact in double for integer grids).
// ---------------------------------------------------------------------------

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared-distance transform along a strided line. Sample positions are
// i * step. f holds input squared distances, out receives the result.
void edt_1d(const double* f, double* out, int n, double step, std::vector<int>& v,
            std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  auto sq = [](double a) { return a * a; };
  for (int q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (f[v[0]] == kInf && k == 0) {
      v[0] = q;
      continue;
    }
    double s;
    for (;;) {
      const int p = v[k];
      s = (f[q] + sq(q * step) - f[p] - sq(p * step)) / (2.0 * step * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  auto sqd = [&](int a, int b) { return sq((a - b) * step); };
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q * step) ++k;
    out[q] = (f[v[k]] == kInf) ? kInf : sqd(q, v[k]) + f[v[k]];
  }
}

}  // namespace

std::vector<double> squared_edt(const Volume3D& vol, const Spacing3& spacing) {
  const Dims3 dims = vol.dims;
  const std::int64_t n = dims.voxel_count();
  std::vector<double> dist(n);
  for (std::int64_t i = 0; i < n; ++i) dist[i] = vol.data[i] ? kInf : 0.0;

  std::vector<double> line_in, line_out;
  std::vector<int> hull_v;
  std::vector<double> hull_z;

  // x pass
  line_in.resize(dims.w);
  line_out.resize(dims.w);
  for (int z = 0; z < dims.d; ++z)
    for (int y = 0; y < dims.h; ++y) {
      double* row = &dist[dims.index(z, y, 0)];
      std::copy(row, row + dims.w, line_in.begin());
      edt_1d(line_in.data(), line_out.data(), dims.w, spacing.sx, hull_v, hull_z);
      std::copy(line_out.begin(), line_out.end(), row);
    }
  // y pass
  line_in.resize(dims.h);
  line_out.resize(dims.h);
  for (int z = 0; z < dims.d; ++z)
    for (int x = 0; x < dims.w; ++x) {
      for (int y = 0; y < dims.h; ++y) line_in[y] = dist[dims.index(z, y, x)];
      edt_1d(line_in.data(), line_out.data(), dims.h, spacing.sy, hull_v, hull_z);
      for (int y = 0; y < dims.h; ++y) dist[dims.index(z, y, x)] = line_out[y];
    }
  // z pass
  line_in.resize(dims.d);
  line_out.resize(dims.d);
  for (int y = 0; y < dims.h; ++y)
    for (int x = 0; x < dims.w; ++x) {
      for (int z = 0; z < dims.d; ++z) line_in[z] = dist[dims.index(z, y, x)];
      edt_1d(line_in.data(), line_out.data(), dims.d, spacing.sz, hull_v, hull_z);
      for (int z = 0; z < dims.d; ++z) dist[dims.index(z, y, x)] = line_out[z];
    }
  return dist;
}

FloatGrid euclidean_distance_transform(const Volume3D& vol) {
  const auto d2 = squared_edt(vol, vol.spacing);
  FloatGrid out(vol.dims, vol.spacing);
  for (std::size_t i = 0; i < d2.size(); ++i)
    out.data[i] = static_cast<float>(std::sqrt(d2[i]));
  return out;
}

Volume3D dilate_ball(const Volume3D& vol, double radius) {
  if (radius < 0) throw validation_error("morphology radius must be >= 0");
  Volume3D complement = vol;
  for (auto& v : complement.data) v = v ? 0 : 1;
  const auto d2 = squared_edt(complement, {1.0, 1.0, 1.0});  // distance to foreground
  Volume3D out(vol.dims, vol.spacing);
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = d2[i] <= r2 ? 1 : 0;
  return out;
}

Volume3D erode_ball(const Volume3D& vol, double radius) {
  if (radius < 0) throw validation_error("morphology radius must be >= 0");
  const auto d2 = squared_edt(vol, {1.0, 1.0, 1.0});  // distance to background
  Volume3D out(vol.dims, vol.spacing);
  const double r2 = radius * radius;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (vol.data[i] && d2[i] > r2) ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// .btv I/O
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw io_error("malformed header: truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw io_error("malformed header: truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

struct BtvHeader {
  Dims3 dims;
  Spacing3 spacing;
  std::uint8_t dtype;
};

void write_btv_header(std::ostream& os, const Dims3& dims, const Spacing3& sp,
                      std::uint8_t dtype) {
  os.write("BTV1", 4);
  put_u32(os, 1);
  put_u32(os, static_cast<std::uint32_t>(dims.d));
  put_u32(os, static_cast<std::uint32_t>(dims.h));
  put_u32(os, static_cast<std::uint32_t>(dims.w));
  put_f64(os, sp.sz);
  put_f64(os, sp.sy);
  put_f64(os, sp.sx);
  const char t = static_cast<char>(dtype);
  os.write(&t, 1);
}

BtvHeader read_btv_header(std::istream& is, const std::string& path) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "BTV1", 4) != 0)
    throw io_error("malformed header: bad magic in " + path);
  const std::uint32_t version = get_u32(is);
  if (version != 1) throw io_error("unsupported version " + std::to_string(version));
  BtvHeader h;
  h.dims.d = static_cast<int>(get_u32(is));
  h.dims.h = static_cast<int>(get_u32(is));
  h.dims.w = static_cast<int>(get_u32(is));
  h.spacing.sz = get_f64(is);
  h.spacing.sy = get_f64(is);
  h.spacing.sx = get_f64(is);
  char t;
  if (!is.read(&t, 1)) throw io_error("malformed header: truncated");
  h.dtype = static_cast<std::uint8_t>(t);
  if (h.dims.d <= 0 || h.dims.h <= 0 || h.dims.w <= 0)
    throw io_error("malformed header: non-positive dims");
  if (h.spacing.sz <= 0 || h.spacing.sy <= 0 || h.spacing.sx <= 0)
    throw io_error("malformed header: non-positive spacing");
  return h;
}

}  // namespace

void write_volume(const Volume3D& vol, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  write_btv_header(os, vol.dims, vol.spacing, 0);
  os.write(reinterpret_cast<const char*>(vol.data.data()),
           static_cast<std::streamsize>(vol.data.size()));
  if (!os) throw io_error("write failed: " + path);
}

Volume3D read_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path);
  const BtvHeader h = read_btv_header(is, path);
  if (h.dtype != 0) throw io_error("unsupported dtype for binary volume: " + std::to_string(h.dtype));
  Volume3D vol(h.dims, h.spacing);
  is.read(reinterpret_cast<char*>(vol.data.data()),
          static_cast<std::streamsize>(vol.data.size()));
  if (is.gcount() != static_cast<std::streamsize>(vol.data.size()))
    throw io_error("payload size mismatch in " + path);
  is.peek();
  if (!is.eof()) throw io_error("payload size mismatch in " + path);
  for (auto b : vol.data)
    if (b > 1) throw io_error("invalid bool payload byte in " + path);
  return vol;
}

void write_float_grid(const FloatGrid& grid, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  write_btv_header(os, grid.dims, grid.spacing, 1);
  os.write(reinterpret_cast<const char*>(grid.data.data()),
           static_cast<std::streamsize>(grid.data.size() * sizeof(float)));
  if (!os) throw io_error("write failed: " + path);
}

FloatGrid read_float_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path);
  const BtvHeader h = read_btv_header(is, path);
  if (h.dtype != 1) throw io_error("unsupported dtype for float grid: " + std::to_string(h.dtype));
  FloatGrid grid(h.dims, h.spacing);
  const std::streamsize bytes = static_cast<std::streamsize>(grid.data.size() * sizeof(float));
  is.read(reinterpret_cast<char*>(grid.data.data()), bytes);
  if (is.gcount() != bytes) throw io_error("payload size mismatch in " + path);
  is.peek();
  if (!is.eof()) throw io_error("payload size mismatch in " + path);
  return grid;
}

// ---------------------------------------------------------------------------
// Capsule geometry
// ---------------------------------------------------------------------------

double point_segment_distance2(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.norm2();
  if (len2 == 0.0) return (p - a).norm2();
  double t = (p - a).dot(ab) / len2;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + ab * t)).norm2();
}

void paint_capsule(Volume3D& vol, const Vec3& a, const Vec3& b, double radius) {
  const double r2 = radius * radius;
  const int z0 = std::max(0, static_cast<int>(std::floor(std::min(a.z, b.z) - radius)));
  const int z1 = std::min(vol.dims.d - 1, static_cast<int>(std::ceil(std::max(a.z, b.z) + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - radius)));
  const int y1 = std::min(vol.dims.h - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + radius)));
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - radius)));
  const int x1 = std::min(vol.dims.w - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + radius)));
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (point_segment_distance2({double(z), double(y), double(x)}, a, b) <= r2)
          vol.data[vol.dims.index(z, y, x)] = 1;
      }
}

}  // namespace ttr
