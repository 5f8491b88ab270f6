#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "gazemil/rng.hpp"

namespace gazemil {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A batch of feature maps. `data` is channels x (n * h * w); column
/// (i * h + y) * w + x holds every channel of pixel (y, x) of item i.
struct Activation {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  Matrix data;

  Activation() = default;
  Activation(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(Matrix::Zero(c_, static_cast<Eigen::Index>(n_) * h_ * w_)) {}

  Eigen::Index column(int item, int y, int x) const {
    return (static_cast<Eigen::Index>(item) * h + y) * w + x;
  }
  bool same_shape(const Activation& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

/// A view of one trainable tensor, used for optimizers, serialization and
/// finite-difference checks.
struct TensorRef {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::span<double> values;
};

struct Conv2d {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  Matrix weight;  // out_ch x (kernel * kernel * in_ch), rows ordered (ky, kx, ci)
  Vector bias;    // out_ch

  static Conv2d make(int in_ch, int out_ch, int kernel, int stride, int pad);
  int out_extent(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

struct Relu {};

struct MaxPool {
  int kernel = 3;
  int stride = 2;
  int pad = 1;
};

struct GlobalAvgPool {};

/// Two 3x3 convolutions with an identity or 1x1-projection shortcut.
/// There is no normalization layer; the second convolution starts at zero so
/// every block is initially the identity (plus shortcut projection).
struct ResidualBlock {
  Conv2d conv1;
  Conv2d conv2;
  std::optional<Conv2d> shortcut;
};

using Layer = std::variant<Conv2d, Relu, MaxPool, GlobalAvgPool, ResidualBlock>;

struct ConvTape {
  int n = 0, h_in = 0, w_in = 0, h_out = 0, w_out = 0;
  Matrix cols;
};
struct ReluTape {
  Activation out;
};
struct PoolTape {
  int n = 0, c = 0, h_in = 0, w_in = 0, h_out = 0, w_out = 0;
  std::vector<Eigen::Index> argmax;  // flat input index per output element
};
struct GapTape {
  int n = 0, c = 0, h = 0, w = 0;
};
struct ResidualTape {
  ConvTape conv1;
  Activation mid;  // relu(conv1(x))
  ConvTape conv2;
  std::optional<ConvTape> shortcut;
  Activation out;  // relu(conv2 + shortcut)
};
using LayerTape = std::variant<ConvTape, ReluTape, PoolTape, GapTape, ResidualTape>;

Activation conv_forward(const Conv2d& conv, const Activation& in, ConvTape* tape);
/// Accumulates parameter gradients into `grad` (same shapes as `conv`).
Activation conv_backward(const Conv2d& conv, const ConvTape& tape, const Activation& dout,
                         Conv2d& grad);

enum class EncoderPreset { small_cnn, resnet18 };

std::string to_string(EncoderPreset p);
EncoderPreset parse_encoder_preset(const std::string& name);

struct EncoderConfig {
  EncoderPreset preset = EncoderPreset::small_cnn;
  int output_dim = 128;                 // Q (small_cnn only; resnet18 gives 8 * width)
  std::vector<int> small_channels{8, 16, 32};
  int input_pool = 4;                   // small_cnn fixed average-pool stem factor
  int resnet_width = 64;
};

/// Pluggable instance encoder F_b. Input patches first pass through a fixed,
/// parameter-free `prepare` stage; the trainable layers then map the result
/// to one Q-dimensional feature per instance.
struct Encoder {
  EncoderConfig config;
  std::vector<Layer> layers;

  static Encoder make(const EncoderConfig& config, std::uint64_t seed);

  int output_dim() const;
  int prepared_channels() const { return 3; }
  int prepared_extent() const;  // side length after the prepare stage

  /// out: n x Q matrix (one row per instance).
  Matrix forward(const Activation& prepared, std::vector<LayerTape>* tape) const;
  /// dfeatures: n x Q. Accumulates into `grad`.
  void backward(const std::vector<LayerTape>& tape, const Matrix& dfeatures, Encoder& grad) const;

  std::vector<TensorRef> tensors(const std::string& prefix);
};

/// Fills every trainable tensor with zeros while keeping shapes.
void zero_tensors(std::span<TensorRef> tensors);

}  // namespace gazemil
