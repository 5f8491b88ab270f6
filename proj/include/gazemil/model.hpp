#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gazemil/bag_builder.hpp"
#include "gazemil/losses.hpp"
#include "gazemil/nn.hpp"

namespace gazemil {

enum class AttentionMode {
  cross,        // each branch pools with weights computed from its peer's embeddings
  independent,  // each branch attends with its own embeddings and weights
};

/// Architecture switches. A single-branch model (dual = false) only has
/// head 1 and always uses its own attention.
struct ModelMode {
  bool dual = true;
  AttentionMode attention = AttentionMode::cross;
};

struct DcamilConfig {
  EncoderConfig encoder;
  int embed_dim = 128;  // d
  int attn_dim = 64;    // a
  int domains = 4;      // D
  int domain_hidden = 64;
  std::uint64_t seed_encoder = 1;
  std::uint64_t seed_branch1 = 2;
  std::uint64_t seed_branch2 = 3;
  std::uint64_t seed_domain = 4;
};

/// One classifier branch: embedding projection, attention module and bag
/// classifier. attn_v / attn_w are W_j1 (d x a) / W_j2 (a x 1).
struct BranchParams {
  Matrix proj_w;  // Q x d
  Vector proj_b;  // d
  Matrix attn_v;  // d x a
  Vector attn_w;  // a
  Matrix cls_w;   // d x 2
  Vector cls_b;   // 2

  static BranchParams make(int q, int d, int a, std::uint64_t seed);
  std::vector<TensorRef> tensors(const std::string& prefix);
};

struct DcamilParams {
  DcamilConfig config;
  Encoder encoder;
  std::array<BranchParams, 2> branch;
  DomainHead domain;

  static DcamilParams make(const DcamilConfig& config);
  /// Same shapes, all zeros (gradient accumulator).
  DcamilParams zeros_like() const;

  int q() const { return encoder.output_dim(); }
  std::vector<TensorRef> tensors();
  std::vector<TensorRef> tensors() const;  // read-only use only
  bool all_finite() const;
};

struct ForwardOutput {
  Matrix features;  // G: K x Q encoder output
  Matrix h1, h2;    // K x d branch embeddings
  Vector att1, att2;
  Vector bag1, bag2;  // d
  Vector p1, p2;      // class probabilities (index 1 = positive)
};

struct AttentionTape {
  int source = 0;  // which branch's embeddings fed the module
  int owner = 0;   // which branch's W_j1, W_j2 were used
  Matrix hidden;   // tanh(H * V): K x a
};

struct ForwardTape {
  std::vector<LayerTape> encoder;
  std::array<AttentionTape, 2> attention;
};

/// Fixed preprocessing of 224x224 patches into the encoder's input layout.
Activation prepare_patches(const EncoderConfig& config, std::span<const Patch> patches);

/// K x Q encoder features of a bag.
Matrix encode_instances(const DcamilParams& params, const InstanceBag& bag);

/// softmax over instances of tanh(H * V) * w.
Vector attention_weights(const Matrix& h, const Matrix& v, const Vector& w);

/// att1 from h2 with branch-2 attention weights, att2 from h1 with branch-1
/// weights.
std::pair<Vector, Vector> cross_attention(const Matrix& h1, const Matrix& h2,
                                          const DcamilParams& params);

ForwardOutput forward_prepared(const DcamilParams& params, const Activation& prepared,
                               ModelMode mode, ForwardTape* tape = nullptr);
ForwardOutput forward_bag(const DcamilParams& params, const InstanceBag& bag, ModelMode mode);

/// Upstream gradients w.r.t. the forward outputs of one bag.
struct OutputGradients {
  Vector d_p1, d_p2;       // empty = zero
  Matrix d_h1, d_h2;       // empty = zero
  Matrix d_features;       // empty = zero
};

/// Accumulates parameter gradients of one bag into `grad`.
void backward_bag(const DcamilParams& params, ModelMode mode, const ForwardOutput& out,
                  const ForwardTape& tape, const OutputGradients& upstream, DcamilParams& grad);

/// Versioned binary checkpoint: magic, JSON header (config + tensor shapes),
/// raw little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, const DcamilParams& params);
DcamilParams load_checkpoint(const std::filesystem::path& path);
/// Loads into an existing model, rejecting any tensor-shape mismatch.
void load_checkpoint_into(const std::filesystem::path& path, DcamilParams& params);

}  // namespace gazemil
