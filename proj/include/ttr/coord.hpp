#ifndef TTR_COORD_HPP
#define TTR_COORD_HPP

#include <cmath>
#include <cstdint>

namespace ttr {

/// Integer voxel coordinate, (z, y, x) order. Also used for signed offsets
/// (crop origins may be negative at volume borders).
struct Coord3 {
  int z = 0;
  int y = 0;
  int x = 0;

  friend bool operator==(const Coord3&, const Coord3&) = default;
};

using VoxelCoord = Coord3;

/// Continuous point in voxel space, (z, y, x) order.
struct Vec3 {
  double z = 0.0;
  double y = 0.0;
  double x = 0.0;

  Vec3() = default;
  Vec3(double z_, double y_, double x_) : z(z_), y(y_), x(x_) {}
  explicit Vec3(const Coord3& c)
      : z(static_cast<double>(c.z)), y(static_cast<double>(c.y)), x(static_cast<double>(c.x)) {}

  Vec3 operator+(const Vec3& o) const { return {z + o.z, y + o.y, x + o.x}; }
  Vec3 operator-(const Vec3& o) const { return {z - o.z, y - o.y, x - o.x}; }
  Vec3 operator*(double s) const { return {z * s, y * s, x * s}; }
  double dot(const Vec3& o) const { return z * o.z + y * o.y + x * o.x; }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }
  Vec3 normalized() const {
    double n = norm();
    return n > 0 ? Vec3{z / n, y / n, x / n} : Vec3{0, 0, 0};
  }
  Vec3 cross(const Vec3& o) const {
    // Components in (z,y,x) storage; cross product computed in (x,y,z) space.
    return {x * o.y - y * o.x, z * o.x - x * o.z, y * o.z - z * o.y};
  }
};

inline Coord3 round_to_voxel(const Vec3& p) {
  return {static_cast<int>(std::llround(p.z)), static_cast<int>(std::llround(p.y)),
          static_cast<int>(std::llround(p.x))};
}

/// Volume extents (D, H, W): number of voxels along z, y, x.
struct Dims3 {
  int d = 0;
  int h = 0;
  int w = 0;

  friend bool operator==(const Dims3&, const Dims3&) = default;

  std::int64_t voxel_count() const {
    return static_cast<std::int64_t>(d) * h * w;
  }
  bool contains(const Coord3& c) const {
    return c.z >= 0 && c.z < d && c.y >= 0 && c.y < h && c.x >= 0 && c.x < w;
  }
  // x-fastest linear order
  std::int64_t index(int z, int y, int x) const {
    return (static_cast<std::int64_t>(z) * h + y) * w + x;
  }
  std::int64_t index(const Coord3& c) const { return index(c.z, c.y, c.x); }
  Coord3 coord(std::int64_t i) const {
    const int x = static_cast<int>(i % w);
    const int y = static_cast<int>((i / w) % h);
    const int z = static_cast<int>(i / (static_cast<std::int64_t>(w) * h));
    return {z, y, x};
  }
};

/// Voxel edge lengths (sz, sy, sx) in arbitrary length units.
struct Spacing3 {
  double sz = 1.0;
  double sy = 1.0;
  double sx = 1.0;

  friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

inline double distance(const Coord3& a, const Coord3& b) {
  const double dz = a.z - b.z, dy = a.y - b.y, dx = a.x - b.x;
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

inline std::int64_t squared_distance(const Coord3& a, const Coord3& b) {
  const std::int64_t dz = a.z - b.z, dy = a.y - b.y, dx = a.x - b.x;
  return dz * dz + dy * dy + dx * dx;
}

}  // namespace ttr

#endif
