#include "ttr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ttr/rng.hpp"

namespace ttr {

namespace {

// Dot product over one row. Accumulates in T with sixteen independent lanes
// (vectorizes without reassociation flags); rows are short, so the caller
// carries the cross-row accumulation in double.
template <typename T>
T row_dot(const T* __restrict__ a, const T* __restrict__ b, int n) {
  T acc[16] = {};
  int i = 0;
  for (; i + 16 <= n; i += 16)
    for (int l = 0; l < 16; ++l) acc[l] += a[i + l] * b[i + l];
  for (; i < n; ++i) acc[i & 15] += a[i] * b[i];
  T s0 = 0, s1 = 0;
  for (int l = 0; l < 8; ++l) {
    s0 += acc[l];
    s1 += acc[l + 8];
  }
  return s0 + s1;
}

template <typename T>
void row_axpy(T* __restrict__ y, const T* __restrict__ x, T a, int n) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// acc[x] += w0*r[x-1] + w1*r[x] + w2*r[x+1], x-range clipped at both ends.
template <typename T>
void row_conv3(T* __restrict__ acc, const T* __restrict__ r, T w0, T w1, T w2, int n) {
  if (n == 1) {
    acc[0] += w1 * r[0];
    return;
  }
  acc[0] += w1 * r[0] + w2 * r[1];
  for (int x = 1; x + 1 < n; ++x) acc[x] += w0 * r[x - 1] + w1 * r[x] + w2 * r[x + 1];
  acc[n - 1] += w0 * r[n - 2] + w1 * r[n - 1];
}

// Fixed-width interior bodies: the compile-time trip count lets the
// vectorizer emit exact masked tails instead of scalar epilogues.
template <int N, typename T>
void row_conv3x3_n(T* __restrict__ acc, const T* __restrict__ r0, const T* __restrict__ r1,
                   const T* __restrict__ r2, const T* __restrict__ w9) {
  acc[0] += w9[1] * r0[0] + w9[2] * r0[1] + w9[4] * r1[0] + w9[5] * r1[1] + w9[7] * r2[0] +
            w9[8] * r2[1];
  for (int x = 1; x < N - 1; ++x)
    acc[x] += w9[0] * r0[x - 1] + w9[1] * r0[x] + w9[2] * r0[x + 1] + w9[3] * r1[x - 1] +
              w9[4] * r1[x] + w9[5] * r1[x + 1] + w9[6] * r2[x - 1] + w9[7] * r2[x] +
              w9[8] * r2[x + 1];
  acc[N - 1] += w9[0] * r0[N - 2] + w9[1] * r0[N - 1] + w9[3] * r1[N - 2] + w9[4] * r1[N - 1] +
                w9[6] * r2[N - 2] + w9[7] * r2[N - 1];
}

template <int N, typename T>
void row_corr3x3_n(T* __restrict__ acc, const T* __restrict__ r0, const T* __restrict__ r1,
                   const T* __restrict__ r2, const T* __restrict__ w9) {
  acc[0] += w9[1] * r0[0] + w9[0] * r0[1] + w9[4] * r1[0] + w9[3] * r1[1] + w9[7] * r2[0] +
            w9[6] * r2[1];
  for (int x = 1; x < N - 1; ++x)
    acc[x] += w9[2] * r0[x - 1] + w9[1] * r0[x] + w9[0] * r0[x + 1] + w9[5] * r1[x - 1] +
              w9[4] * r1[x] + w9[3] * r1[x + 1] + w9[8] * r2[x - 1] + w9[7] * r2[x] +
              w9[6] * r2[x + 1];
  acc[N - 1] += w9[2] * r0[N - 2] + w9[1] * r0[N - 1] + w9[5] * r1[N - 2] + w9[4] * r1[N - 1] +
                w9[8] * r2[N - 2] + w9[7] * r2[N - 1];
}

// Whole 3x3 weight sheet applied to three neighbouring rows in one pass.
// Missing rows (volume edge) are passed as null and fall back to row_conv3.
template <typename T>
void row_conv3x3(T* __restrict__ acc, const T* r0, const T* r1, const T* r2,
                 const T* __restrict__ w9, int n) {
  if (r0 != nullptr && r2 != nullptr) {
    switch (n) {
      case 32: row_conv3x3_n<32>(acc, r0, r1, r2, w9); return;
      case 16: row_conv3x3_n<16>(acc, r0, r1, r2, w9); return;
      case 8: row_conv3x3_n<8>(acc, r0, r1, r2, w9); return;
      case 4: row_conv3x3_n<4>(acc, r0, r1, r2, w9); return;
      default: break;
    }
  }
  if (r0 != nullptr && r2 != nullptr && n >= 2) {
    acc[0] += w9[1] * r0[0] + w9[2] * r0[1] + w9[4] * r1[0] + w9[5] * r1[1] + w9[7] * r2[0] +
              w9[8] * r2[1];
    for (int x = 1; x + 1 < n; ++x)
      acc[x] += w9[0] * r0[x - 1] + w9[1] * r0[x] + w9[2] * r0[x + 1] + w9[3] * r1[x - 1] +
                w9[4] * r1[x] + w9[5] * r1[x + 1] + w9[6] * r2[x - 1] + w9[7] * r2[x] +
                w9[8] * r2[x + 1];
    acc[n - 1] += w9[0] * r0[n - 2] + w9[1] * r0[n - 1] + w9[3] * r1[n - 2] + w9[4] * r1[n - 1] +
                  w9[6] * r2[n - 2] + w9[7] * r2[n - 1];
    return;
  }
  if (r0 != nullptr) row_conv3(acc, r0, w9[0], w9[1], w9[2], n);
  row_conv3(acc, r1, w9[3], w9[4], w9[5], n);
  if (r2 != nullptr) row_conv3(acc, r2, w9[6], w9[7], w9[8], n);
}

// Transposed variant for input gradients: same sheet, kernel flipped along x,
// row r_i corresponds to ky = i (so the caller passes upstream rows at
// y+1, y, y-1 in that order).
template <typename T>
void row_corr3x3(T* __restrict__ acc, const T* r0, const T* r1, const T* r2,
                 const T* __restrict__ w9, int n) {
  if (r0 != nullptr && r2 != nullptr) {
    switch (n) {
      case 32: row_corr3x3_n<32>(acc, r0, r1, r2, w9); return;
      case 16: row_corr3x3_n<16>(acc, r0, r1, r2, w9); return;
      case 8: row_corr3x3_n<8>(acc, r0, r1, r2, w9); return;
      case 4: row_corr3x3_n<4>(acc, r0, r1, r2, w9); return;
      default: break;
    }
  }
  if (r0 != nullptr && r2 != nullptr && n >= 2) {
    acc[0] += w9[1] * r0[0] + w9[0] * r0[1] + w9[4] * r1[0] + w9[3] * r1[1] + w9[7] * r2[0] +
              w9[6] * r2[1];
    for (int x = 1; x + 1 < n; ++x)
      acc[x] += w9[2] * r0[x - 1] + w9[1] * r0[x] + w9[0] * r0[x + 1] + w9[5] * r1[x - 1] +
                w9[4] * r1[x] + w9[3] * r1[x + 1] + w9[8] * r2[x - 1] + w9[7] * r2[x] +
                w9[6] * r2[x + 1];
    acc[n - 1] += w9[2] * r0[n - 2] + w9[1] * r0[n - 1] + w9[5] * r1[n - 2] + w9[4] * r1[n - 1] +
                  w9[8] * r2[n - 2] + w9[7] * r2[n - 1];
    return;
  }
  if (r0 != nullptr) row_conv3(acc, r0, w9[2], w9[1], w9[0], n);
  row_conv3(acc, r1, w9[5], w9[4], w9[3], n);
  if (r2 != nullptr) row_conv3(acc, r2, w9[8], w9[7], w9[6], n);
}

// out9[ky*3+kx] += dot(dy, r_ky shifted by kx-1) over three input rows in a
// single pass; dy is loaded once per element. Null rows fall back.
template <typename T>
void row_dot3x3(const T* __restrict__ dy, const T* r0, const T* r1, const T* r2, int n,
                double* __restrict__ out);

// out[kx] += dot(dy, xr shifted by kx-1): the three same-row weight-gradient
// dots, fused into one pass so dy is loaded once per element.
template <typename T>
void row_dot3(const T* __restrict__ dy, const T* __restrict__ xr, int n,
              double* __restrict__ out) {
  if (n < 3) {
    for (int x = 0; x < n; ++x) {
      if (x >= 1) out[0] += static_cast<double>(dy[x]) * xr[x - 1];
      out[1] += static_cast<double>(dy[x]) * xr[x];
      if (x + 1 < n) out[2] += static_cast<double>(dy[x]) * xr[x + 1];
    }
    return;
  }
  T a0[8] = {}, a1[8] = {}, a2[8] = {};
  out[1] += static_cast<double>(dy[0]) * xr[0];
  out[2] += static_cast<double>(dy[0]) * xr[1];
  int i = 1;
  for (; i + 8 <= n - 1; i += 8)
    for (int l = 0; l < 8; ++l) {
      const T d = dy[i + l];
      a0[l] += d * xr[i + l - 1];
      a1[l] += d * xr[i + l];
      a2[l] += d * xr[i + l + 1];
    }
  for (; i < n - 1; ++i) {
    const T d = dy[i];
    a0[0] += d * xr[i - 1];
    a1[0] += d * xr[i];
    a2[0] += d * xr[i + 1];
  }
  out[0] += static_cast<double>(dy[n - 1]) * xr[n - 2];
  out[1] += static_cast<double>(dy[n - 1]) * xr[n - 1];
  T s0 = 0, s1 = 0, s2 = 0;
  for (int l = 0; l < 8; ++l) {
    s0 += a0[l];
    s1 += a1[l];
    s2 += a2[l];
  }
  out[0] += s0;
  out[1] += s1;
  out[2] += s2;
}

template <typename T>
void row_dot3x3(const T* __restrict__ dy, const T* r0, const T* r1, const T* r2, int n,
                double* __restrict__ out) {
  if (r0 != nullptr && r2 != nullptr && n >= 3) {
    T a[9][8] = {};
    out[1] += static_cast<double>(dy[0]) * r0[0];
    out[2] += static_cast<double>(dy[0]) * r0[1];
    out[4] += static_cast<double>(dy[0]) * r1[0];
    out[5] += static_cast<double>(dy[0]) * r1[1];
    out[7] += static_cast<double>(dy[0]) * r2[0];
    out[8] += static_cast<double>(dy[0]) * r2[1];
    int i = 1;
    for (; i + 8 <= n - 1; i += 8)
      for (int l = 0; l < 8; ++l) {
        const T d = dy[i + l];
        a[0][l] += d * r0[i + l - 1];
        a[1][l] += d * r0[i + l];
        a[2][l] += d * r0[i + l + 1];
        a[3][l] += d * r1[i + l - 1];
        a[4][l] += d * r1[i + l];
        a[5][l] += d * r1[i + l + 1];
        a[6][l] += d * r2[i + l - 1];
        a[7][l] += d * r2[i + l];
        a[8][l] += d * r2[i + l + 1];
      }
    for (; i < n - 1; ++i) {
      const T d = dy[i];
      a[0][0] += d * r0[i - 1];
      a[1][0] += d * r0[i];
      a[2][0] += d * r0[i + 1];
      a[3][0] += d * r1[i - 1];
      a[4][0] += d * r1[i];
      a[5][0] += d * r1[i + 1];
      a[6][0] += d * r2[i - 1];
      a[7][0] += d * r2[i];
      a[8][0] += d * r2[i + 1];
    }
    out[0] += static_cast<double>(dy[n - 1]) * r0[n - 2];
    out[1] += static_cast<double>(dy[n - 1]) * r0[n - 1];
    out[3] += static_cast<double>(dy[n - 1]) * r1[n - 2];
    out[4] += static_cast<double>(dy[n - 1]) * r1[n - 1];
    out[6] += static_cast<double>(dy[n - 1]) * r2[n - 2];
    out[7] += static_cast<double>(dy[n - 1]) * r2[n - 1];
    for (int t = 0; t < 9; ++t) {
      T s = 0;
      for (int l = 0; l < 8; ++l) s += a[t][l];
      out[t] += static_cast<double>(s);
    }
    return;
  }
  if (r0 != nullptr) row_dot3(dy, r0, n, out);
  row_dot3(dy, r1, n, out + 3);
  if (r2 != nullptr) row_dot3(dy, r2, n, out + 6);
}

// --- padded-row staging --------------------------------------------------
// For the power-of-two row widths the net actually uses, each channel is
// staged once into a (W+2)-wide zero-bordered scratch. All three x-taps then
// become unconditional shifted reads: no edge peels, and the fixed trip
// counts below compile to exact masked vector loops with no scalar tails.

constexpr bool staged_width(int w) { return w == 8 || w == 16 || w == 32 || w == 64; }

template <typename T>
std::vector<T>& conv_scratch() {
  static thread_local std::vector<T> s;
  return s;
}

template <typename T>
const T* zero_row(int wpad) {
  static thread_local std::vector<T> z;
  if (static_cast<int>(z.size()) < wpad) z.assign(static_cast<std::size_t>(wpad), T(0));
  return z.data();
}

template <typename T>
void stage_padded(const T* src, int planes_times_rows, int w, std::vector<T>& pad) {
  const std::size_t need = static_cast<std::size_t>(planes_times_rows) * (w + 2);
  if (pad.size() < need) pad.resize(need);
  for (int i = 0; i < planes_times_rows; ++i) {
    T* row = pad.data() + static_cast<std::size_t>(i) * (w + 2);
    row[0] = T(0);
    std::copy(src + static_cast<std::size_t>(i) * w, src + static_cast<std::size_t>(i + 1) * w,
              row + 1);
    row[w + 1] = T(0);
  }
}

// y[x] += sum_ky sum_kx w9[ky*3+kx] * r_ky[x+kx]  (r rows padded by one)
template <int N, typename T>
void fma9p(T* __restrict__ acc, const T* __restrict__ r0, const T* __restrict__ r1,
           const T* __restrict__ r2, const T* __restrict__ w9) {
  for (int x = 0; x < N; ++x)
    acc[x] += w9[0] * r0[x] + w9[1] * r0[x + 1] + w9[2] * r0[x + 2] + w9[3] * r1[x] +
              w9[4] * r1[x + 1] + w9[5] * r1[x + 2] + w9[6] * r2[x] + w9[7] * r2[x + 1] +
              w9[8] * r2[x + 2];
}

// transposed x-taps: dx[x] += sum w9[ky*3+kx] * r_ky[x+2-kx]
template <int N, typename T>
void corr9p(T* __restrict__ acc, const T* __restrict__ r0, const T* __restrict__ r1,
            const T* __restrict__ r2, const T* __restrict__ w9) {
  for (int x = 0; x < N; ++x)
    acc[x] += w9[0] * r0[x + 2] + w9[1] * r0[x + 1] + w9[2] * r0[x] + w9[3] * r1[x + 2] +
              w9[4] * r1[x + 1] + w9[5] * r1[x] + w9[6] * r2[x + 2] + w9[7] * r2[x + 1] +
              w9[8] * r2[x];
}

// lanes[ky*3+kx][l] += dy[x] * r_ky[x+kx]; lanes persist across rows so the
// horizontal reduction happens once per channel, not once per row.
template <int N, typename T>
void dot9p(T lanes[9][8], const T* __restrict__ dy, const T* __restrict__ r0,
           const T* __restrict__ r1, const T* __restrict__ r2) {
  static_assert(N % 8 == 0);
  for (int b = 0; b < N; b += 8)
    for (int l = 0; l < 8; ++l) {
      const T d = dy[b + l];
      lanes[0][l] += d * r0[b + l];
      lanes[1][l] += d * r0[b + l + 1];
      lanes[2][l] += d * r0[b + l + 2];
      lanes[3][l] += d * r1[b + l];
      lanes[4][l] += d * r1[b + l + 1];
      lanes[5][l] += d * r1[b + l + 2];
      lanes[6][l] += d * r2[b + l];
      lanes[7][l] += d * r2[b + l + 1];
      lanes[8][l] += d * r2[b + l + 2];
    }
}

template <typename T>
void fma9n(T* acc, const T* r0, const T* r1, const T* r2, const T* w9, int n) {
  switch (n) {
    case 32: fma9p<32>(acc, r0, r1, r2, w9); break;
    case 16: fma9p<16>(acc, r0, r1, r2, w9); break;
    case 8: fma9p<8>(acc, r0, r1, r2, w9); break;
    default: fma9p<64>(acc, r0, r1, r2, w9); break;
  }
}

template <typename T>
void corr9n(T* acc, const T* r0, const T* r1, const T* r2, const T* w9, int n) {
  switch (n) {
    case 32: corr9p<32>(acc, r0, r1, r2, w9); break;
    case 16: corr9p<16>(acc, r0, r1, r2, w9); break;
    case 8: corr9p<8>(acc, r0, r1, r2, w9); break;
    default: corr9p<64>(acc, r0, r1, r2, w9); break;
  }
}

template <typename T>
void dot9n(T lanes[9][8], const T* dy, const T* r0, const T* r1, const T* r2, int n) {
  switch (n) {
    case 32: dot9p<32>(lanes, dy, r0, r1, r2); break;
    case 16: dot9p<16>(lanes, dy, r0, r1, r2); break;
    case 8: dot9p<8>(lanes, dy, r0, r1, r2); break;
    default: dot9p<64>(lanes, dy, r0, r1, r2); break;
  }
}

void require(bool ok, const char* msg) {
  if (!ok) throw validation_error(msg);
}

}  // namespace

// ---- Conv3d ------------------------------------------------------------

template <typename T>
Conv3d<T>::Conv3d(int in, int out, int ksize) : in_ch(in), out_ch(out), k(ksize) {
  weight = Tensor<T>({static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in),
                      static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k),
                      static_cast<std::uint32_t>(k)});
  bias = Tensor<T>({static_cast<std::uint32_t>(out)});
}

template <typename T>
Tensor<T> Conv3d<T>::forward(const Tensor<T>& x, bool training) {
  require(x.c() == in_ch, "conv input channel mismatch");
  const int N = x.n(), D = x.d(), H = x.h(), W = x.w();
  const int pad = k / 2;
  Tensor<T> y = Tensor<T>::zeros5(N, out_ch, D, H, W);
  const std::size_t k3 = static_cast<std::size_t>(k) * k * k;
  if (k == 3 && staged_width(W)) {
    std::vector<T>& pad = conv_scratch<T>();
    const int WP = W + 2;
    const T* zr = zero_row<T>(WP);
    for (int ni = 0; ni < N; ++ni) {
      for (int co = 0; co < out_ch; ++co) {
        T* yc = y.channel(ni, co);
        std::fill(yc, yc + y.spatial(), bias.data[co]);
      }
      for (int ci = 0; ci < in_ch; ++ci) {
        stage_padded(x.channel(ni, ci), D * H, W, pad);
        for (int z = 0; z < D; ++z) {
          for (int kz = 0; kz < 3; ++kz) {
            const int zz = z + kz - 1;
            if (zz < 0 || zz >= D) continue;
            const T* pl = pad.data() + static_cast<std::size_t>(zz) * H * WP;
            for (int yy = 0; yy < H; ++yy) {
              const T* r0 = yy > 0 ? pl + static_cast<std::size_t>(yy - 1) * WP : zr;
              const T* r1 = pl + static_cast<std::size_t>(yy) * WP;
              const T* r2 = yy + 1 < H ? pl + static_cast<std::size_t>(yy + 1) * WP : zr;
              T* yrow = y.channel(ni, 0) + (static_cast<std::size_t>(z) * H + yy) * W;
              for (int co = 0; co < out_ch; ++co)
                fma9n(yrow + static_cast<std::size_t>(co) * y.spatial(), r0, r1, r2,
                      weight.data.data() +
                          ((static_cast<std::size_t>(co) * in_ch + ci) * 3 + kz) * 9,
                      W);
            }
          }
        }
      }
    }
  } else if (k == 3) {
    // Row-resident accumulation: every output row is built once in an
    // L1-sized buffer while each input row is streamed a single time per
    // row position and reused across all output channels.
    std::vector<T> acc(static_cast<std::size_t>(out_ch) * W);
    for (int ni = 0; ni < N; ++ni) {
      for (int z = 0; z < D; ++z) {
        for (int yy = 0; yy < H; ++yy) {
          for (int co = 0; co < out_ch; ++co)
            std::fill(acc.begin() + static_cast<std::size_t>(co) * W,
                      acc.begin() + static_cast<std::size_t>(co + 1) * W, bias.data[co]);
          for (int ci = 0; ci < in_ch; ++ci) {
            const T* xc = x.channel(ni, ci);
            for (int kz = 0; kz < 3; ++kz) {
              const int zz = z + kz - 1;
              if (zz < 0 || zz >= D) continue;
              const T* plane = xc + static_cast<std::size_t>(zz) * H * W;
              const T* r0 = yy > 0 ? plane + static_cast<std::size_t>(yy - 1) * W : nullptr;
              const T* r1 = plane + static_cast<std::size_t>(yy) * W;
              const T* r2 = yy + 1 < H ? plane + static_cast<std::size_t>(yy + 1) * W : nullptr;
              for (int co = 0; co < out_ch; ++co) {
                const T* w9 = weight.data.data() +
                              ((static_cast<std::size_t>(co) * in_ch + ci) * 3 + kz) * 9;
                row_conv3x3(acc.data() + static_cast<std::size_t>(co) * W, r0, r1, r2, w9, W);
              }
            }
          }
          T* yrow = y.channel(ni, 0) + (static_cast<std::size_t>(z) * H + yy) * W;
          for (int co = 0; co < out_ch; ++co)
            std::copy(acc.begin() + static_cast<std::size_t>(co) * W,
                      acc.begin() + static_cast<std::size_t>(co + 1) * W,
                      yrow + static_cast<std::size_t>(co) * y.spatial());
        }
      }
    }
  } else {
    for (int ni = 0; ni < N; ++ni) {
      for (int co = 0; co < out_ch; ++co) {
        T* yc = y.channel(ni, co);
        std::fill(yc, yc + y.spatial(), bias.data[co]);
        for (int ci = 0; ci < in_ch; ++ci) {
          const T* xc = x.channel(ni, ci);
          const T* wk = weight.data.data() + (static_cast<std::size_t>(co) * in_ch + ci) * k3;
          for (int kz = 0; kz < k; ++kz) {
            const int dz = kz - pad;
            for (int ky = 0; ky < k; ++ky) {
              const int dy = ky - pad;
              for (int kx = 0; kx < k; ++kx) {
                const int dx = kx - pad;
                const T wv = wk[(static_cast<std::size_t>(kz) * k + ky) * k + kx];
                const int z0 = std::max(0, -dz), z1 = D - std::max(0, dz);
                const int y0 = std::max(0, -dy), y1 = H - std::max(0, dy);
                const int x0 = std::max(0, -dx), x1 = W - std::max(0, dx);
                for (int z = z0; z < z1; ++z)
                  for (int yy = y0; yy < y1; ++yy)
                    row_axpy(yc + (static_cast<std::size_t>(z) * H + yy) * W + x0,
                             xc + (static_cast<std::size_t>(z + dz) * H + yy + dy) * W + x0 + dx,
                             wv, x1 - x0);
              }
            }
          }
        }
      }
    }
  }
  if (training) x_cache = x;
  return y;
}

template <typename T>
Tensor<T> Conv3d<T>::backward(const Tensor<T>& dy) {
  require(!x_cache.data.empty(), "conv backward before forward");
  const Tensor<T>& x = x_cache;
  const int N = x.n(), D = x.d(), H = x.h(), W = x.w();
  const int pad = k / 2;
  weight.ensure_grad();
  bias.ensure_grad();
  Tensor<T> dx = Tensor<T>::zeros5(N, in_ch, D, H, W);
  const std::size_t k3 = static_cast<std::size_t>(k) * k * k;
  if (k == 3) {
    for (int ni = 0; ni < N; ++ni)
      for (int co = 0; co < out_ch; ++co) {
        const T* dyc = dy.channel(ni, co);
        double bsum = 0.0;
        for (std::size_t i = 0; i < dy.spatial(); ++i) bsum += static_cast<double>(dyc[i]);
        bias.grad[co] += static_cast<T>(bsum);
      }

    if (staged_width(W)) {
      std::vector<T>& pad = conv_scratch<T>();
      const int WP = W + 2;
      const T* zr = zero_row<T>(WP);
      // input gradient: stage each dy channel, accumulate into dx rows
      for (int ni = 0; ni < N; ++ni) {
        for (int co = 0; co < out_ch; ++co) {
          stage_padded(dy.channel(ni, co), D * H, W, pad);
          for (int zi = 0; zi < D; ++zi) {
            for (int kz = 0; kz < 3; ++kz) {
              const int zo = zi - kz + 1;
              if (zo < 0 || zo >= D) continue;
              const T* pl = pad.data() + static_cast<std::size_t>(zo) * H * WP;
              for (int yi = 0; yi < H; ++yi) {
                // ky = 0,1,2 reads the output row at yi+1, yi, yi-1
                const T* r0 = yi + 1 < H ? pl + static_cast<std::size_t>(yi + 1) * WP : zr;
                const T* r1 = pl + static_cast<std::size_t>(yi) * WP;
                const T* r2 = yi > 0 ? pl + static_cast<std::size_t>(yi - 1) * WP : zr;
                T* dxrow = dx.channel(ni, 0) + (static_cast<std::size_t>(zi) * H + yi) * W;
                for (int ci = 0; ci < in_ch; ++ci)
                  corr9n(dxrow + static_cast<std::size_t>(ci) * dx.spatial(), r0, r1, r2,
                         weight.data.data() +
                             ((static_cast<std::size_t>(co) * in_ch + ci) * 3 + kz) * 9,
                         W);
              }
            }
          }
        }
      }
      // weight gradient: stage each x channel, keep lane accumulators across
      // the whole channel and flush once per tap set
      std::vector<double> dwacc(weight.data.size(), 0.0);
      for (int ni = 0; ni < N; ++ni) {
        for (int ci = 0; ci < in_ch; ++ci) {
          stage_padded(x.channel(ni, ci), D * H, W, pad);
          for (int co = 0; co < out_ch; ++co) {
            const T* dyc = dy.channel(ni, co);
            for (int kz = 0; kz < 3; ++kz) {
              T lanes[9][8] = {};
              for (int z = 0; z < D; ++z) {
                const int zz = z + kz - 1;
                if (zz < 0 || zz >= D) continue;
                const T* pl = pad.data() + static_cast<std::size_t>(zz) * H * WP;
                for (int yy = 0; yy < H; ++yy) {
                  const T* r0 = yy > 0 ? pl + static_cast<std::size_t>(yy - 1) * WP : zr;
                  const T* r1 = pl + static_cast<std::size_t>(yy) * WP;
                  const T* r2 = yy + 1 < H ? pl + static_cast<std::size_t>(yy + 1) * WP : zr;
                  dot9n(lanes, dyc + (static_cast<std::size_t>(z) * H + yy) * W, r0, r1, r2, W);
                }
              }
              double* o = dwacc.data() +
                          ((static_cast<std::size_t>(co) * in_ch + ci) * 3 + kz) * 9;
              for (int t = 0; t < 9; ++t) {
                double s = 0.0;
                for (int l = 0; l < 8; ++l) s += static_cast<double>(lanes[t][l]);
                o[t] += s;
              }
            }
          }
        }
      }
      for (std::size_t i = 0; i < dwacc.size(); ++i) weight.grad[i] += static_cast<T>(dwacc[i]);
      return dx;
    }

    // input gradient, one input row at a time (transposed taps)
    std::vector<T> acc(static_cast<std::size_t>(in_ch) * W);
    for (int ni = 0; ni < N; ++ni) {
      for (int zi = 0; zi < D; ++zi) {
        for (int yi = 0; yi < H; ++yi) {
          std::fill(acc.begin(), acc.end(), T(0));
          for (int co = 0; co < out_ch; ++co) {
            const T* dyc = dy.channel(ni, co);
            for (int kz = 0; kz < 3; ++kz) {
              const int zo = zi - kz + 1;
              if (zo < 0 || zo >= D) continue;
              const T* plane = dyc + static_cast<std::size_t>(zo) * H * W;
              // ky = 0,1,2 reads the output row at yi+1, yi, yi-1
              const T* r0 = yi + 1 < H ? plane + static_cast<std::size_t>(yi + 1) * W : nullptr;
              const T* r1 = plane + static_cast<std::size_t>(yi) * W;
              const T* r2 = yi > 0 ? plane + static_cast<std::size_t>(yi - 1) * W : nullptr;
              for (int ci = 0; ci < in_ch; ++ci) {
                const T* w9 = weight.data.data() +
                              ((static_cast<std::size_t>(co) * in_ch + ci) * 3 + kz) * 9;
                row_corr3x3(acc.data() + static_cast<std::size_t>(ci) * W, r0, r1, r2, w9, W);
              }
            }
          }
          T* dxrow = dx.channel(ni, 0) + (static_cast<std::size_t>(zi) * H + yi) * W;
          for (int ci = 0; ci < in_ch; ++ci)
            std::copy(acc.begin() + static_cast<std::size_t>(ci) * W,
                      acc.begin() + static_cast<std::size_t>(ci + 1) * W,
                      dxrow + static_cast<std::size_t>(ci) * dx.spatial());
        }
      }
    }

    // weight gradient: shifted row dots, accumulated in doubles
    std::vector<double> dwacc(weight.data.size(), 0.0);
    for (int ni = 0; ni < N; ++ni) {
      for (int z = 0; z < D; ++z) {
        for (int yy = 0; yy < H; ++yy) {
          for (int ci = 0; ci < in_ch; ++ci) {
            const T* xc = x.channel(ni, ci);
            for (int kz = 0; kz < 3; ++kz) {
              const int zz = z + kz - 1;
              if (zz < 0 || zz >= D) continue;
              const T* plane = xc + static_cast<std::size_t>(zz) * H * W;
              const T* r0 = yy > 0 ? plane + static_cast<std::size_t>(yy - 1) * W : nullptr;
              const T* r1 = plane + static_cast<std::size_t>(yy) * W;
              const T* r2 = yy + 1 < H ? plane + static_cast<std::size_t>(yy + 1) * W : nullptr;
              for (int co = 0; co < out_ch; ++co) {
                const T* dyrow = dy.channel(ni, co) + (static_cast<std::size_t>(z) * H + yy) * W;
                row_dot3x3(dyrow, r0, r1, r2, W,
                           dwacc.data() +
                               ((static_cast<std::size_t>(co) * in_ch + ci) * 3 + kz) * 9);
              }
            }
          }
        }
      }
    }
    for (std::size_t i = 0; i < dwacc.size(); ++i) weight.grad[i] += static_cast<T>(dwacc[i]);
    return dx;
  }
  for (int ni = 0; ni < N; ++ni) {
    for (int co = 0; co < out_ch; ++co) {
      const T* dyc = dy.channel(ni, co);
      double bsum = 0.0;
      for (std::size_t i = 0; i < dy.spatial(); ++i) bsum += static_cast<double>(dyc[i]);
      bias.grad[co] += static_cast<T>(bsum);
      for (int ci = 0; ci < in_ch; ++ci) {
        const T* xc = x.channel(ni, ci);
        T* dxc = dx.channel(ni, ci);
        const std::size_t wbase = (static_cast<std::size_t>(co) * in_ch + ci) * k3;
        for (int kz = 0; kz < k; ++kz) {
          const int dz = kz - pad;
          for (int ky = 0; ky < k; ++ky) {
            const int dyo = ky - pad;
            for (int kx = 0; kx < k; ++kx) {
              const int dxo = kx - pad;
              const std::size_t wi = wbase + (static_cast<std::size_t>(kz) * k + ky) * k + kx;
              const T wv = weight.data[wi];
              const int z0 = std::max(0, -dz), z1 = D - std::max(0, dz);
              const int y0 = std::max(0, -dyo), y1 = H - std::max(0, dyo);
              const int x0 = std::max(0, -dxo), x1 = W - std::max(0, dxo);
              double wsum = 0.0;
              for (int z = z0; z < z1; ++z) {
                for (int yy = y0; yy < y1; ++yy) {
                  const std::size_t oy = (static_cast<std::size_t>(z) * H + yy) * W + x0;
                  const std::size_t ox =
                      (static_cast<std::size_t>(z + dz) * H + yy + dyo) * W + x0 + dxo;
                  wsum += row_dot(dyc + oy, xc + ox, x1 - x0);
                  row_axpy(dxc + ox, dyc + oy, wv, x1 - x0);
                }
              }
              weight.grad[wi] += static_cast<T>(wsum);
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---- BatchNorm3d -------------------------------------------------------

template <typename T>
BatchNorm3d<T>::BatchNorm3d(int channels) : ch(channels) {
  const std::vector<std::uint32_t> shape{static_cast<std::uint32_t>(channels)};
  gamma = Tensor<T>(shape);
  beta = Tensor<T>(shape);
  running_mean = Tensor<T>(shape);
  running_var = Tensor<T>(shape);
  std::fill(gamma.data.begin(), gamma.data.end(), T(1));
  std::fill(running_var.data.begin(), running_var.data.end(), T(1));
}

template <typename T>
Tensor<T> BatchNorm3d<T>::forward(const Tensor<T>& x, bool training) {
  require(x.c() == ch, "batch-norm channel mismatch");
  const int N = x.n();
  const std::size_t sp = x.spatial();
  const double m = static_cast<double>(N) * sp;
  Tensor<T> y = x;
  if (!training) {
    for (int ni = 0; ni < N; ++ni)
      for (int ci = 0; ci < ch; ++ci) {
        const T scale = gamma.data[ci] / std::sqrt(running_var.data[ci] + eps);
        const T shift = beta.data[ci] - running_mean.data[ci] * scale;
        T* yc = y.channel(ni, ci);
        for (std::size_t i = 0; i < sp; ++i) yc[i] = yc[i] * scale + shift;
      }
    return y;
  }
  xhat_cache = Tensor<T>(x.dims);
  invstd_cache.assign(ch, T(0));
  for (int ci = 0; ci < ch; ++ci) {
    double sum = 0.0;
    for (int ni = 0; ni < N; ++ni) {
      const T* xc = x.channel(ni, ci);
      for (std::size_t i = 0; i < sp; ++i) sum += static_cast<double>(xc[i]);
    }
    const double mean = sum / m;
    double ss = 0.0;
    for (int ni = 0; ni < N; ++ni) {
      const T* xc = x.channel(ni, ci);
      for (std::size_t i = 0; i < sp; ++i) {
        const double dv = static_cast<double>(xc[i]) - mean;
        ss += dv * dv;
      }
    }
    const double var = ss / m;
    const double invstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
    invstd_cache[ci] = static_cast<T>(invstd);
    // Unbiased variance feeds the running estimate (biased when m == 1 to
    // keep it finite).
    const double var_u = m > 1.0 ? var * m / (m - 1.0) : var;
    running_mean.data[ci] =
        (T(1) - momentum) * running_mean.data[ci] + momentum * static_cast<T>(mean);
    running_var.data[ci] =
        (T(1) - momentum) * running_var.data[ci] + momentum * static_cast<T>(var_u);
    for (int ni = 0; ni < N; ++ni) {
      const T* xc = x.channel(ni, ci);
      T* xh = xhat_cache.channel(ni, ci);
      T* yc = y.channel(ni, ci);
      for (std::size_t i = 0; i < sp; ++i) {
        xh[i] = static_cast<T>((static_cast<double>(xc[i]) - mean) * invstd);
        yc[i] = gamma.data[ci] * xh[i] + beta.data[ci];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm3d<T>::backward(const Tensor<T>& dy) {
  require(!xhat_cache.data.empty(), "batch-norm backward before forward");
  const int N = dy.n();
  const std::size_t sp = dy.spatial();
  const double m = static_cast<double>(N) * sp;
  gamma.ensure_grad();
  beta.ensure_grad();
  Tensor<T> dx(dy.dims);
  for (int ci = 0; ci < ch; ++ci) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (int ni = 0; ni < N; ++ni) {
      const T* dyc = dy.channel(ni, ci);
      const T* xh = xhat_cache.channel(ni, ci);
      sum_dy += [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < sp; ++i) s += static_cast<double>(dyc[i]);
        return s;
      }();
      sum_dy_xh += row_dot(dyc, xh, static_cast<int>(sp));
    }
    beta.grad[ci] += static_cast<T>(sum_dy);
    gamma.grad[ci] += static_cast<T>(sum_dy_xh);
    const double g = static_cast<double>(gamma.data[ci]);
    const double invstd = static_cast<double>(invstd_cache[ci]);
    const double mean_dy = sum_dy / m;
    const double mean_dy_xh = sum_dy_xh / m;
    for (int ni = 0; ni < N; ++ni) {
      const T* dyc = dy.channel(ni, ci);
      const T* xh = xhat_cache.channel(ni, ci);
      T* dxc = dx.channel(ni, ci);
      for (std::size_t i = 0; i < sp; ++i)
        dxc[i] = static_cast<T>(
            g * invstd *
            (static_cast<double>(dyc[i]) - mean_dy - static_cast<double>(xh[i]) * mean_dy_xh));
    }
  }
  return dx;
}

// ---- ReLU / MaxPool / Upsample ----------------------------------------

template <typename T>
Tensor<T> ReLULayer<T>::forward(Tensor<T> x, bool training) {
  for (auto& v : x.data)
    if (v < T(0)) v = T(0);
  if (training) y_cache = x;
  return x;
}

template <typename T>
Tensor<T> ReLULayer<T>::backward(const Tensor<T>& dy) {
  require(!y_cache.data.empty(), "relu backward before forward");
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i)
    if (!(y_cache.data[i] > T(0))) dx.data[i] = T(0);
  return dx;
}

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x) {
  require(x.d() % 2 == 0 && x.h() % 2 == 0 && x.w() % 2 == 0,
          "max-pool input extent must be even");
  const int N = x.n(), C = x.c(), D = x.d(), H = x.h(), W = x.w();
  in_dims = x.dims;
  Tensor<T> y = Tensor<T>::zeros5(N, C, D / 2, H / 2, W / 2);
  argmax.assign(y.numel(), 0);
  std::size_t oi = 0;
  for (int ni = 0; ni < N; ++ni)
    for (int ci = 0; ci < C; ++ci) {
      const T* xc = x.channel(ni, ci);
      const std::size_t base = (static_cast<std::size_t>(ni) * C + ci) * x.spatial();
      for (int z = 0; z < D; z += 2)
        for (int yy = 0; yy < H; yy += 2)
          for (int xx = 0; xx < W; xx += 2) {
            T best = xc[(static_cast<std::size_t>(z) * H + yy) * W + xx];
            std::size_t besti = (static_cast<std::size_t>(z) * H + yy) * W + xx;
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int c = 0; c < 2; ++c) {
                  const std::size_t i =
                      (static_cast<std::size_t>(z + a) * H + yy + b) * W + xx + c;
                  if (xc[i] > best) {
                    best = xc[i];
                    besti = i;
                  }
                }
            y.data[oi] = best;
            argmax[oi] = base + besti;
            ++oi;
          }
    }
  return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& dy) {
  require(!in_dims.empty(), "max-pool backward before forward");
  Tensor<T> dx(in_dims);
  for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[argmax[i]] += dy.data[i];
  return dx;
}

template <typename T>
Tensor<T> Upsample2<T>::forward(const Tensor<T>& x) {
  const int N = x.n(), C = x.c(), D = x.d(), H = x.h(), W = x.w();
  Tensor<T> y = Tensor<T>::zeros5(N, C, D * 2, H * 2, W * 2);
  for (int ni = 0; ni < N; ++ni)
    for (int ci = 0; ci < C; ++ci) {
      const T* xc = x.channel(ni, ci);
      T* yc = y.channel(ni, ci);
      for (int z = 0; z < 2 * D; ++z)
        for (int yy = 0; yy < 2 * H; ++yy) {
          const T* xr = xc + (static_cast<std::size_t>(z / 2) * H + yy / 2) * W;
          T* yr = yc + (static_cast<std::size_t>(z) * 2 * H + yy) * 2 * W;
          for (int xx = 0; xx < 2 * W; ++xx) yr[xx] = xr[xx / 2];
        }
    }
  return y;
}

template <typename T>
Tensor<T> Upsample2<T>::backward(const Tensor<T>& dy) {
  const int N = dy.n(), C = dy.c(), D = dy.d() / 2, H = dy.h() / 2, W = dy.w() / 2;
  Tensor<T> dx = Tensor<T>::zeros5(N, C, D, H, W);
  for (int ni = 0; ni < N; ++ni)
    for (int ci = 0; ci < C; ++ci) {
      const T* dyc = dy.channel(ni, ci);
      T* dxc = dx.channel(ni, ci);
      for (int z = 0; z < 2 * D; ++z)
        for (int yy = 0; yy < 2 * H; ++yy) {
          const T* dyr = dyc + (static_cast<std::size_t>(z) * 2 * H + yy) * 2 * W;
          T* dxr = dxc + (static_cast<std::size_t>(z / 2) * H + yy / 2) * W;
          for (int xx = 0; xx < 2 * W; ++xx) dxr[xx / 2] += dyr[xx];
        }
    }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.n() == b.n() && a.d() == b.d() && a.h() == b.h() && a.w() == b.w(),
          "concat extent mismatch");
  Tensor<T> y = Tensor<T>::zeros5(a.n(), a.c() + b.c(), a.d(), a.h(), a.w());
  for (int ni = 0; ni < a.n(); ++ni) {
    std::copy(a.channel(ni, 0), a.channel(ni, 0) + static_cast<std::size_t>(a.c()) * a.spatial(),
              y.channel(ni, 0));
    std::copy(b.channel(ni, 0), b.channel(ni, 0) + static_cast<std::size_t>(b.c()) * b.spatial(),
              y.channel(ni, a.c()));
  }
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& dy, int c_a, Tensor<T>& da, Tensor<T>& db) {
  const int c_b = dy.c() - c_a;
  da = Tensor<T>::zeros5(dy.n(), c_a, dy.d(), dy.h(), dy.w());
  db = Tensor<T>::zeros5(dy.n(), c_b, dy.d(), dy.h(), dy.w());
  for (int ni = 0; ni < dy.n(); ++ni) {
    std::copy(dy.channel(ni, 0), dy.channel(ni, 0) + static_cast<std::size_t>(c_a) * dy.spatial(),
              da.channel(ni, 0));
    std::copy(dy.channel(ni, c_a),
              dy.channel(ni, c_a) + static_cast<std::size_t>(c_b) * dy.spatial(),
              db.channel(ni, 0));
  }
}

// ---- blocks ------------------------------------------------------------

template <typename T>
ConvBlock<T>::ConvBlock(int in, int out)
    : conv1(in, out, 3), conv2(out, out, 3), bn1(out), bn2(out) {}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> t = relu1.forward(bn1.forward(conv1.forward(x, training), training), training);
  return relu2.forward(bn2.forward(conv2.forward(t, training), training), training);
}

template <typename T>
Tensor<T> ConvBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> t = conv2.backward(bn2.backward(relu2.backward(dy)));
  return conv1.backward(bn1.backward(relu1.backward(t)));
}

template <typename T>
UpBlock<T>::UpBlock(int in, int out) : conv(in, out, 3), bn(out) {}

template <typename T>
Tensor<T> UpBlock<T>::forward(const Tensor<T>& x, bool training) {
  return relu.forward(bn.forward(conv.forward(up.forward(x), training), training), training);
}

template <typename T>
Tensor<T> UpBlock<T>::backward(const Tensor<T>& dy) {
  return up.backward(conv.backward(bn.backward(relu.backward(dy))));
}

// ---- UNet3D ------------------------------------------------------------

template <typename T>
UNet3D<T>::UNet3D(NetConfig config) : cfg(config) {
  const int b = cfg.base_width;
  enc1 = ConvBlock<T>(cfg.in_channels, b);
  enc2 = ConvBlock<T>(b, 2 * b);
  enc3 = ConvBlock<T>(2 * b, 4 * b);
  bottom = ConvBlock<T>(4 * b, 8 * b);
  up3 = UpBlock<T>(8 * b, 4 * b);
  dec3 = ConvBlock<T>(8 * b, 4 * b);
  up2 = UpBlock<T>(4 * b, 2 * b);
  dec2 = ConvBlock<T>(4 * b, 2 * b);
  up1 = UpBlock<T>(2 * b, b);
  dec1 = ConvBlock<T>(2 * b, b);
  head = Conv3d<T>(b, cfg.out_channels, 1);
}

template <typename T>
void UNet3D<T>::init(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x11e7));
  auto he = [&](Conv3d<T>& c) {
    const double fan_in = static_cast<double>(c.in_ch) * c.k * c.k * c.k;
    const double std = std::sqrt(2.0 / fan_in);
    for (auto& w : c.weight.data) w = static_cast<T>(rng.normal() * std);
    std::fill(c.bias.data.begin(), c.bias.data.end(), T(0));
  };
  for (ConvBlock<T>* blk : {&enc1, &enc2, &enc3, &bottom, &dec3, &dec2, &dec1}) {
    he(blk->conv1);
    he(blk->conv2);
  }
  for (UpBlock<T>* blk : {&up3, &up2, &up1}) he(blk->conv);
  he(head);
}

template <typename T>
Tensor<T> UNet3D<T>::forward(const Tensor<T>& x) {
  require(x.c() == cfg.in_channels, "net input channel mismatch");
  require(x.d() % 8 == 0 && x.h() % 8 == 0 && x.w() % 8 == 0,
          "net input extent must divide by 8");
  const bool t = training_mode;
  Tensor<T> e1 = enc1.forward(x, t);
  Tensor<T> e2 = enc2.forward(pool1.forward(e1), t);
  Tensor<T> e3 = enc3.forward(pool2.forward(e2), t);
  Tensor<T> b = bottom.forward(pool3.forward(e3), t);
  Tensor<T> d3 = dec3.forward(concat_channels(up3.forward(b, t), e3), t);
  Tensor<T> d2 = dec2.forward(concat_channels(up2.forward(d3, t), e2), t);
  Tensor<T> d1 = dec1.forward(concat_channels(up1.forward(d2, t), e1), t);
  have_cache = t;
  return head.forward(d1, t);
}

template <typename T>
Tensor<T> UNet3D<T>::backward(const Tensor<T>& dout) {
  require(have_cache, "net backward before forward");
  const int b = cfg.base_width;
  Tensor<T> du, ds, t;
  t = dec1.backward(head.backward(dout));
  split_channels(t, b, du, ds);
  Tensor<T> de1 = ds;
  t = dec2.backward(up1.backward(du));
  split_channels(t, 2 * b, du, ds);
  Tensor<T> de2 = ds;
  t = dec3.backward(up2.backward(du));
  split_channels(t, 4 * b, du, ds);
  Tensor<T> de3 = ds;
  t = pool3.backward(bottom.backward(up3.backward(du)));
  for (std::size_t i = 0; i < t.data.size(); ++i) de3.data[i] += t.data[i];
  t = pool2.backward(enc3.backward(de3));
  for (std::size_t i = 0; i < t.data.size(); ++i) de2.data[i] += t.data[i];
  t = pool1.backward(enc2.backward(de2));
  for (std::size_t i = 0; i < t.data.size(); ++i) de1.data[i] += t.data[i];
  return enc1.backward(de1);
}

template <typename T>
std::vector<Tensor<T>*> UNet3D<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& [name, ten] : named_tensors())
    if (name.find("running_") == std::string::npos) out.push_back(ten);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> UNet3D<T>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  auto add_conv = [&](const std::string& p, Conv3d<T>& c) {
    out.emplace_back(p + ".weight", &c.weight);
    out.emplace_back(p + ".bias", &c.bias);
  };
  auto add_bn = [&](const std::string& p, BatchNorm3d<T>& b) {
    out.emplace_back(p + ".weight", &b.gamma);
    out.emplace_back(p + ".bias", &b.beta);
    out.emplace_back(p + ".running_mean", &b.running_mean);
    out.emplace_back(p + ".running_var", &b.running_var);
  };
  auto add_block = [&](const std::string& p, ConvBlock<T>& blk) {
    add_conv(p + ".conv1", blk.conv1);
    add_bn(p + ".bn1", blk.bn1);
    add_conv(p + ".conv2", blk.conv2);
    add_bn(p + ".bn2", blk.bn2);
  };
  add_block("enc1", enc1);
  add_block("enc2", enc2);
  add_block("enc3", enc3);
  add_block("bottom", bottom);
  add_conv("up3.conv", up3.conv);
  add_bn("up3.bn", up3.bn);
  add_block("dec3", dec3);
  add_conv("up2.conv", up2.conv);
  add_bn("up2.bn", up2.bn);
  add_block("dec2", dec2);
  add_conv("up1.conv", up1.conv);
  add_bn("up1.bn", up1.bn);
  add_block("dec1", dec1);
  add_conv("head", head);
  return out;
}

template <typename T>
void UNet3D<T>::zero_grad() {
  for (Tensor<T>* p : parameters()) {
    p->ensure_grad();
    p->zero_grad();
  }
}

// ---- AdamW -------------------------------------------------------------

template <typename T>
void AdamW<T>::step(const std::vector<Tensor<T>*>& params) {
  if (m.empty()) {
    m.resize(params.size());
    v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i]->data.size(), T(0));
      v[i].assign(params[i]->data.size(), T(0));
    }
  }
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    require(p.grad.size() == p.data.size(), "adamw: parameter missing gradient");
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double g = static_cast<double>(p.grad[j]);
      double mj = beta1 * static_cast<double>(m[i][j]) + (1.0 - beta1) * g;
      double vj = beta2 * static_cast<double>(v[i][j]) + (1.0 - beta2) * g * g;
      m[i][j] = static_cast<T>(mj);
      v[i][j] = static_cast<T>(vj);
      double pj = static_cast<double>(p.data[j]) * (1.0 - lr * weight_decay);
      pj -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps);
      p.data[j] = static_cast<T>(pj);
    }
  }
}

// ---- checkpoints -------------------------------------------------------

namespace {

template <typename V>
void put_le(std::string& out, V v) {
  for (std::size_t i = 0; i < sizeof(V); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw io_error("unexpected end of checkpoint");
  }
  template <typename V>
  V get_le() {
    need(sizeof(V));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(V); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += sizeof(V);
    return static_cast<V>(v);
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const StateDict& tensors) {
  std::string out;
  out += "PTRC";
  put_le<std::uint32_t>(out, 1u);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  std::uint64_t payload_bytes = 0;
  for (const auto& [name, t] : tensors) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.dims.size()));
    for (std::uint32_t d : t.dims) put_le<std::uint32_t>(out, d);
    for (float v : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_le<std::uint32_t>(out, bits);
    }
    payload_bytes += 4ull * t.data.size();
  }
  put_le<std::uint64_t>(out, payload_bytes);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot write checkpoint: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("cannot write checkpoint: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw io_error("cannot write checkpoint: " + path);
}

StateDict load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r{buf};
  r.need(4);
  if (buf.compare(0, 4, "PTRC") != 0) throw io_error("bad checkpoint magic");
  r.pos = 4;
  const auto version = r.get_le<std::uint32_t>();
  if (version != 1) throw io_error("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get_le<std::uint32_t>();
  StateDict out;
  std::uint64_t payload_bytes = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint16_t>();
    r.need(name_len);
    std::string name = buf.substr(r.pos, name_len);
    r.pos += name_len;
    const auto rank = r.get_le<std::uint8_t>();
    CheckpointTensor t;
    std::size_t numel = 1;
    for (int k = 0; k < rank; ++k) {
      t.dims.push_back(r.get_le<std::uint32_t>());
      numel *= t.dims.back();
    }
    t.data.resize(numel);
    for (std::size_t j = 0; j < numel; ++j) {
      const std::uint32_t bits = r.get_le<std::uint32_t>();
      std::memcpy(&t.data[j], &bits, 4);
    }
    payload_bytes += 4ull * numel;
    out.emplace_back(std::move(name), std::move(t));
  }
  const auto recorded = r.get_le<std::uint64_t>();
  if (recorded != payload_bytes) throw io_error("checkpoint payload length mismatch");
  return out;
}

template <typename T>
StateDict state_dict(UNet3D<T>& net) {
  StateDict out;
  for (auto& [name, ten] : net.named_tensors()) {
    CheckpointTensor t;
    t.dims = ten->dims;
    t.data.reserve(ten->data.size());
    for (T v : ten->data) t.data.push_back(static_cast<float>(v));
    out.emplace_back(name, std::move(t));
  }
  return out;
}

template <typename T>
void load_state(UNet3D<T>& net, const StateDict& sd) {
  auto named = net.named_tensors();
  if (sd.size() != named.size())
    throw validation_error("checkpoint tensor count mismatch: expected " +
                           std::to_string(named.size()) + ", got " + std::to_string(sd.size()));
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& [name, t] : sd) by_name[name] = &t;
  std::string bad;
  for (auto& [name, ten] : named) {
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->dims != ten->dims) {
      if (!bad.empty()) bad += ", ";
      bad += name;
    }
  }
  if (!bad.empty()) throw validation_error("checkpoint tensor mismatch: " + bad);
  for (auto& [name, ten] : named) {
    const CheckpointTensor& t = *by_name[name];
    for (std::size_t i = 0; i < t.data.size(); ++i) ten->data[i] = static_cast<T>(t.data[i]);
  }
}

// ---- instantiations ----------------------------------------------------

template struct Conv3d<float>;
template struct Conv3d<double>;
template struct BatchNorm3d<float>;
template struct BatchNorm3d<double>;
template struct ReLULayer<float>;
template struct ReLULayer<double>;
template struct MaxPool2<float>;
template struct MaxPool2<double>;
template struct Upsample2<float>;
template struct Upsample2<double>;
template struct ConvBlock<float>;
template struct ConvBlock<double>;
template struct UpBlock<float>;
template struct UpBlock<double>;
template struct UNet3D<float>;
template struct UNet3D<double>;
template struct AdamW<float>;
template struct AdamW<double>;
template Tensor<float> concat_channels(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> concat_channels(const Tensor<double>&, const Tensor<double>&);
template void split_channels(const Tensor<float>&, int, Tensor<float>&, Tensor<float>&);
template void split_channels(const Tensor<double>&, int, Tensor<double>&, Tensor<double>&);
template StateDict state_dict(UNet3D<float>&);
template StateDict state_dict(UNet3D<double>&);
template void load_state(UNet3D<float>&, const StateDict&);
template void load_state(UNet3D<double>&, const StateDict&);

}  // namespace ttr
