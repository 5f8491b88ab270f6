#include "gazemil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace gazemil {

using Eigen::Index;

void LossWeights::validate() const {
  for (double v : {alpha, beta, gamma, tau, lambda_grl}) {
    if (!std::isfinite(v)) throw InputError("loss weights must be finite");
  }
  if (alpha < 0 || beta < 0 || gamma < 0) {
    throw InputError("loss weights alpha, beta, gamma must be non-negative");
  }
  if (!(tau > 0.0)) throw InputError("temperature tau must be > 0");
}

namespace {

void fill_uniform(Matrix& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

TensorRef ref(const std::string& name, Matrix& m) {
  return {name, m.rows(), m.cols(), std::span<double>(m.data(), static_cast<std::size_t>(m.size()))};
}
TensorRef ref(const std::string& name, Vector& v) {
  return {name, v.rows(), 1, std::span<double>(v.data(), static_cast<std::size_t>(v.size()))};
}

// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

}  // namespace

DomainHead DomainHead::make(int q, int hidden, int domains, std::uint64_t seed) {
  if (q < 1 || hidden < 1 || domains < 1) {
    throw InputError("domain head dimensions must be positive");
  }
  Rng rng(mix_seed(seed));
  DomainHead h;
  h.w1 = Matrix(q, hidden);
  h.w2 = Matrix(hidden, hidden);
  h.w3 = Matrix(hidden, domains);
  fill_uniform(h.w1, std::sqrt(6.0 / q), rng);
  fill_uniform(h.w2, std::sqrt(6.0 / hidden), rng);
  fill_uniform(h.w3, std::sqrt(3.0 / hidden), rng);
  h.b1 = Vector::Zero(hidden);
  h.b2 = Vector::Zero(hidden);
  h.b3 = Vector::Zero(domains);
  return h;
}

Matrix DomainHead::logits(const Matrix& features) const {
  Matrix a1 = ((features * w1).rowwise() + b1.transpose()).cwiseMax(0.0);
  Matrix a2 = ((a1 * w2).rowwise() + b2.transpose()).cwiseMax(0.0);
  return (a2 * w3).rowwise() + b3.transpose();
}

std::vector<TensorRef> DomainHead::tensors(const std::string& prefix) {
  return {ref(prefix + ".w1", w1), ref(prefix + ".b1", b1), ref(prefix + ".w2", w2),
          ref(prefix + ".b2", b2), ref(prefix + ".w3", w3), ref(prefix + ".b3", b3)};
}

ClassificationLoss classification_loss(std::span<const Vector> p1, std::span<const Vector> p2,
                                       std::span<const int> labels, Warnings* warnings) {
  const std::size_t n = labels.size();
  if (n == 0) throw InputError("classification_loss: empty batch");
  if (p1.size() != n || (!p2.empty() && p2.size() != n)) {
    throw InputError("classification_loss: prediction/label count mismatch");
  }
  constexpr double kFloor = 1e-12;
  ClassificationLoss out;
  const double inv_n = 1.0 / static_cast<double>(n);
  auto head_term = [&](const Vector& p, int y, std::size_t bag, int head) {
    if (y < 0 || y >= p.size()) throw InputError("classification_loss: label out of range");
    double py = p(y);
    if (py < kFloor) {
      std::ostringstream msg;
      msg << "classification_loss: head " << head << " bag " << bag
          << " true-class probability " << py << " clamped to 1e-12";
      warn(warnings, msg.str());
      py = kFloor;
    }
    Vector d = Vector::Zero(p.size());
    d(y) = -inv_n / py;
    out.value -= inv_n * std::log(py);
    return d;
  };
  for (std::size_t i = 0; i < n; ++i) {
    out.d_p1.push_back(head_term(p1[i], labels[i], i, 1));
    if (!p2.empty()) out.d_p2.push_back(head_term(p2[i], labels[i], i, 2));
  }
  return out;
}

ContrastiveLoss contrastive_loss(const Matrix& h1, const Matrix& h2, double tau,
                                 Warnings* warnings) {
  if (h1.rows() != h2.rows() || h1.cols() != h2.cols()) {
    throw InputError("contrastive_loss: embedding shapes differ");
  }
  if (!(tau > 0.0)) throw InputError("contrastive_loss: tau must be > 0");
  const Index k = h1.rows();
  ContrastiveLoss out;
  out.d_h1 = Matrix::Zero(h1.rows(), h1.cols());
  out.d_h2 = Matrix::Zero(h2.rows(), h2.cols());
  if (k < 2) {
    warn(warnings, "contrastive_loss: K < 2, no negatives; loss set to 0");
    return out;
  }

  constexpr double kMinNorm = 1e-12;
  Matrix h(2 * k, h1.cols());
  h.topRows(k) = h1;
  h.bottomRows(k) = h2;
  Vector norms = h.rowwise().norm().cwiseMax(kMinNorm);
  Matrix z = norms.cwiseInverse().asDiagonal() * h;
  Matrix s = z * z.transpose() / tau;

  const Index n = 2 * k;
  Matrix ds = Matrix::Zero(n, n);
  for (Index a = 0; a < n; ++a) {
    const Index pos = (a + k) % n;
    double m = -std::numeric_limits<double>::infinity();
    for (Index b = 0; b < n; ++b) {
      if (b != a) m = std::max(m, s(a, b));
    }
    double denom = 0.0;
    for (Index b = 0; b < n; ++b) {
      if (b != a) denom += std::exp(s(a, b) - m);
    }
    const double lse = m + std::log(denom);
    out.value += 0.5 * (lse - s(a, pos));
    for (Index b = 0; b < n; ++b) {
      if (b == a) continue;
      ds(a, b) = 0.5 * std::exp(s(a, b) - lse);
    }
    ds(a, pos) -= 0.5;
  }
  Matrix dz = (ds + ds.transpose()) * z / tau;
  // z = h / |h|  =>  dh = (dz - z (z . dz)) / |h|
  Matrix dh(n, h.cols());
  for (Index r = 0; r < n; ++r) {
    const double proj = z.row(r).dot(dz.row(r));
    dh.row(r) = (dz.row(r) - proj * z.row(r)) / norms(r);
  }
  out.d_h1 = dh.topRows(k);
  out.d_h2 = dh.bottomRows(k);
  return out;
}

Matrix grad_reverse(const Matrix& features) { return features; }

Matrix grad_reverse_backward(const Matrix& upstream, double lambda_grl) {
  return -lambda_grl * upstream;
}

DomainLoss domain_loss(std::span<const Matrix> features, std::span<const int> domains,
                       const DomainHead& head, double lambda_grl) {
  if (features.size() != domains.size()) {
    throw InputError("domain_loss: feature/domain count mismatch");
  }
  DomainLoss out;
  out.d_head = head;
  for (auto& t : out.d_head.tensors("")) std::fill(t.values.begin(), t.values.end(), 0.0);
  const int d_count = head.domains();
  for (std::size_t bag = 0; bag < features.size(); ++bag) {
    const int dom = domains[bag];
    if (dom < 0 || dom >= d_count) {
      throw InputError("domain_loss: domain id " + std::to_string(dom) + " outside [0, " +
                       std::to_string(d_count) + ")");
    }
    const Matrix g = grad_reverse(features[bag]);
    const Index k = g.rows();
    if (k == 0) throw InputError("domain_loss: empty bag");
    const double inv_k = 1.0 / static_cast<double>(k);

    Matrix a1 = ((g * head.w1).rowwise() + head.b1.transpose()).cwiseMax(0.0);
    Matrix a2 = ((a1 * head.w2).rowwise() + head.b2.transpose()).cwiseMax(0.0);
    Matrix logits = (a2 * head.w3).rowwise() + head.b3.transpose();
    Matrix logp = log_softmax_rows(logits);
    out.value -= inv_k * logp.col(dom).sum();

    Matrix dlogits = logp.array().exp().matrix() * inv_k;
    dlogits.col(dom).array() -= inv_k;
    out.d_head.w3.noalias() += a2.transpose() * dlogits;
    out.d_head.b3 += dlogits.colwise().sum().transpose();
    Matrix da2 = (dlogits * head.w3.transpose()).cwiseProduct((a2.array() > 0.0).cast<double>().matrix());
    out.d_head.w2.noalias() += a1.transpose() * da2;
    out.d_head.b2 += da2.colwise().sum().transpose();
    Matrix da1 = (da2 * head.w2.transpose()).cwiseProduct((a1.array() > 0.0).cast<double>().matrix());
    out.d_head.w1.noalias() += g.transpose() * da1;
    out.d_head.b1 += da1.colwise().sum().transpose();
    out.d_features.push_back(grad_reverse_backward(da1 * head.w1.transpose(), lambda_grl));
  }
  return out;
}

double total_loss(double l1, double l2, double l3, const LossWeights& weights) {
  return weights.alpha * l1 + weights.beta * l2 + weights.gamma * l3;
}

}  // namespace gazemil
