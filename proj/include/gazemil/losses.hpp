#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gazemil/errors.hpp"
#include "gazemil/nn.hpp"

namespace gazemil {

/// Coefficients of the integrated objective alpha*L1 + beta*L2 + gamma*L3,
/// the contrastive temperature and the gradient-reversal strength.
struct LossWeights {
  double alpha = 1.0;
  double beta = 0.1;
  double gamma = 0.1;
  double tau = 0.5;
  double lambda_grl = 1.0;

  void validate() const;
};

/// Three-layer fully connected domain classifier over Q-dim instance features.
struct DomainHead {
  Matrix w1;  // Q x hidden
  Vector b1;
  Matrix w2;  // hidden x hidden
  Vector b2;
  Matrix w3;  // hidden x D
  Vector b3;

  static DomainHead make(int q, int hidden, int domains, std::uint64_t seed);
  int domains() const { return static_cast<int>(w3.cols()); }
  /// K x D logits for K x Q features.
  Matrix logits(const Matrix& features) const;
  std::vector<TensorRef> tensors(const std::string& prefix);
};

struct ClassificationLoss {
  double value = 0.0;
  std::vector<Vector> d_p1;  // dL/dP per bag
  std::vector<Vector> d_p2;
};

/// (1/N) sum_i [CE(Y_i, P_i1) + CE(Y_i, P_i2)]. Pass an empty `p2` for a
/// single-head model. True-class probabilities below 1e-12 are clamped and
/// reported through `warnings`.
ClassificationLoss classification_loss(std::span<const Vector> p1, std::span<const Vector> p2,
                                       std::span<const int> labels,
                                       Warnings* warnings = nullptr);

struct ContrastiveLoss {
  double value = 0.0;
  Matrix d_h1;
  Matrix d_h2;
};

/// Cross-view normalized-temperature loss over one bag. Rows of h1 and h2 are
/// the two branch embeddings of the same instances; (h1[i], h2[i]) is the
/// positive pair and every other embedding of either view is a negative.
/// Cosine similarity, per-pair term averaged over both anchor directions,
/// summed over instances. K = 1 returns 0 with a warning.
ContrastiveLoss contrastive_loss(const Matrix& h1, const Matrix& h2, double tau,
                                 Warnings* warnings = nullptr);

/// Identity in the forward direction.
Matrix grad_reverse(const Matrix& features);
/// Backward rule of grad_reverse: the upstream gradient negated and scaled.
Matrix grad_reverse_backward(const Matrix& upstream, double lambda_grl);

struct DomainLoss {
  double value = 0.0;
  DomainHead d_head;                // dL3/dtheta_DA
  std::vector<Matrix> d_features;   // gradient delivered to each bag's features
                                    // through the reversal (already -lambda scaled)
};

/// sum over bags of (1/K) sum_i CE(D_n, F_d(grad_reverse(g_i))). The
/// reported value is the plain (positive) cross-entropy.
DomainLoss domain_loss(std::span<const Matrix> features, std::span<const int> domains,
                       const DomainHead& head, double lambda_grl);

double total_loss(double l1, double l2, double l3, const LossWeights& weights);

}  // namespace gazemil
