#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ttr/errors.hpp"

namespace ttr {

/// Dense n-d float tensor with an optional gradient buffer of the same
/// shape. Activations are always rank-5 (N, C, D, H, W); parameters use
/// whatever rank fits (conv weights rank 5, biases rank 1).
template <typename T>
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<T> data;
  std::vector<T> grad;  // empty until ensure_grad()

  Tensor() = default;
  explicit Tensor(std::vector<std::uint32_t> shape) : dims(std::move(shape)) {
    data.assign(numel(), T(0));
  }
  static Tensor zeros5(int n, int c, int d, int h, int w) {
    return Tensor({static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(c),
                   static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(h),
                   static_cast<std::uint32_t>(w)});
  }

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

  // Rank-5 dimension accessors.
  int n() const { return static_cast<int>(dims[0]); }
  int c() const { return static_cast<int>(dims[1]); }
  int d() const { return static_cast<int>(dims[2]); }
  int h() const { return static_cast<int>(dims[3]); }
  int w() const { return static_cast<int>(dims[4]); }
  std::size_t spatial() const {
    return static_cast<std::size_t>(d()) * h() * w();
  }

  T* channel(int ni, int ci) {
    return data.data() + (static_cast<std::size_t>(ni) * c() + ci) * spatial();
  }
  const T* channel(int ni, int ci) const {
    return data.data() + (static_cast<std::size_t>(ni) * c() + ci) * spatial();
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }
};

/// 3-d convolution, stride 1, zero padding k/2 ("same" extent). Weight
/// layout (out, in, k, k, k).
template <typename T>
struct Conv3d {
  int in_ch = 0;
  int out_ch = 0;
  int k = 3;
  Tensor<T> weight, bias;
  Tensor<T> x_cache;

  Conv3d() = default;
  Conv3d(int in, int out, int ksize);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  /// Accumulates weight/bias grads and returns dL/dx.
  Tensor<T> backward(const Tensor<T>& dy);
};

/// Per-channel batch normalization over (N, D, H, W) with running statistics
/// kept for inference mode.
template <typename T>
struct BatchNorm3d {
  int ch = 0;
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);
  Tensor<T> gamma, beta, running_mean, running_var;
  Tensor<T> xhat_cache;
  std::vector<T> invstd_cache;

  BatchNorm3d() = default;
  explicit BatchNorm3d(int channels);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& dy);
};

template <typename T>
struct ReLULayer {
  Tensor<T> y_cache;
  Tensor<T> forward(Tensor<T> x, bool training);
  Tensor<T> backward(const Tensor<T>& dy);
};

/// 2x2x2 max pooling, stride 2. Ties go to the first window voxel in scan
/// order so backward routing is deterministic.
template <typename T>
struct MaxPool2 {
  std::vector<std::uint32_t> in_dims;
  std::vector<std::size_t> argmax;
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
};

/// Nearest-neighbour x2 upsampling.
template <typename T>
struct Upsample2 {
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& dy, int c_a, Tensor<T>& da, Tensor<T>& db);

/// conv(3) + BN + ReLU, twice.
template <typename T>
struct ConvBlock {
  Conv3d<T> conv1, conv2;
  BatchNorm3d<T> bn1, bn2;
  ReLULayer<T> relu1, relu2;

  ConvBlock() = default;
  ConvBlock(int in, int out);
  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& dy);
};

/// nearest x2, then conv(3) + BN + ReLU halving the channel count.
template <typename T>
struct UpBlock {
  Upsample2<T> up;
  Conv3d<T> conv;
  BatchNorm3d<T> bn;
  ReLULayer<T> relu;

  UpBlock() = default;
  UpBlock(int in, int out);
  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& dy);
};

struct NetConfig {
  int in_channels = 2;   // 1 or 2
  int out_channels = 2;  // K
  int base_width = 16;
  static constexpr int stages = 3;  // input extent must divide by 2^stages
};

/// 3-d U-Net: three encoder stages (widths B, 2B, 4B), an 8B bridge, three
/// decoder stages with concatenated skips, and a 1x1x1 head. Output extent
/// equals input extent.
template <typename T>
struct UNet3D {
  NetConfig cfg;
  ConvBlock<T> enc1, enc2, enc3, bottom, dec3, dec2, dec1;
  MaxPool2<T> pool1, pool2, pool3;
  UpBlock<T> up3, up2, up1;
  Conv3d<T> head;
  bool training_mode = true;
  bool have_cache = false;

  explicit UNet3D(NetConfig config = {});

  /// He fan-in init for conv weights from a seeded stream; zero biases,
  /// identity batch-norm.
  void init(std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x);
  /// dout has the output's shape; fills every parameter's grad buffer.
  Tensor<T> backward(const Tensor<T>& dout);

  /// Trainable tensors in fixed order.
  std::vector<Tensor<T>*> parameters();
  /// Trainable tensors plus batch-norm running stats, with checkpoint names.
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();

  void zero_grad();
  void train() { training_mode = true; }
  void eval() { training_mode = false; }
};

/// AdamW with decoupled weight decay: p *= (1 - lr*wd) before the
/// bias-corrected moment step.
template <typename T>
struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  long long step_count = 0;
  std::vector<std::vector<T>> m, v;

  void step(const std::vector<Tensor<T>*>& params);
};

// ---- checkpoints ------------------------------------------------------

struct CheckpointTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};
using StateDict = std::vector<std::pair<std::string, CheckpointTensor>>;

/// Binary ".ckpt": magic "PTRC", u32 version 1, u32 tensor count, per tensor
/// u16 name length + name, u8 rank, u32 dims, f32 LE payload; trailing u64
/// holds the total payload byte length as an integrity check.
void save_checkpoint(const std::string& path, const StateDict& tensors);
StateDict load_checkpoint(const std::string& path);

template <typename T>
StateDict state_dict(UNet3D<T>& net);
/// Assigns checkpoint tensors into the net by name. Tensor count must match;
/// every name must resolve with an identical shape, otherwise throws
/// validation_error listing the offending tensor names.
template <typename T>
void load_state(UNet3D<T>& net, const StateDict& sd);

}  // namespace ttr
