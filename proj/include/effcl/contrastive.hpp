#pragma once

#include "effcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace effcl {

/// A zero vector reached cosine similarity.
class DegenerateEmbedding : public PreconditionError {
public:
  using PreconditionError::PreconditionError;
};

/// Two-layer rectified projection z = W2 * max(0, W1 * e).
template <typename Scalar>
struct ProjectionHead {
  Matrix<Scalar> w1;  // (proj_hidden x d)
  Matrix<Scalar> w2;  // (proj_out x proj_hidden)

  static ProjectionHead zeros(Eigen::Index d, Eigen::Index hidden, Eigen::Index out) {
    return {Matrix<Scalar>::Zero(hidden, d), Matrix<Scalar>::Zero(out, hidden)};
  }
  static ProjectionHead initialized(Eigen::Index d, Eigen::Index hidden, Eigen::Index out, Rng& rng,
                                    double std = 0.02) {
    ProjectionHead h = zeros(d, hidden, out);
    std::normal_distribution<double> normal(0.0, std);
    for (auto* m : {&h.w1, &h.w2})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<Scalar>(normal(rng));
    return h;
  }
};

template <typename F, typename H, typename... Hs>
void zip_tensors_head(F&& f, H& h, Hs&... hs) {
  f(std::string("proj.w1"), h.w1, hs.w1...);
  f(std::string("proj.w2"), h.w2, hs.w2...);
}

/// 2N projected embeddings; rows (2i, 2i+1) form pair i (0-based).
template <typename Scalar>
struct ContrastiveBatch {
  Matrix<Scalar> z;
  Scalar temperature = Scalar(0.05);
};

struct LossReport {
  double mlm = 0;
  double contrastive = 0;
  double total = 0;
};

/// Rows of e are embeddings; returns one projected row per input row.
template <typename Scalar>
Matrix<Scalar> project(const Matrix<Scalar>& e, const ProjectionHead<Scalar>& head) {
  if (e.cols() != head.w1.cols() || head.w2.cols() != head.w1.rows())
    throw PreconditionError("projection head shape does not match the embeddings");
  const Matrix<Scalar> hidden = (e * head.w1.transpose()).cwiseMax(Scalar(0));
  return hidden * head.w2.transpose();
}

/// Accumulates head gradients and returns dLoss/de.
template <typename Scalar>
Matrix<Scalar> project_backward(const Matrix<Scalar>& e, const ProjectionHead<Scalar>& head,
                                const Matrix<Scalar>& grad_z, ProjectionHead<Scalar>& grads) {
  const Matrix<Scalar> pre = e * head.w1.transpose();
  const Matrix<Scalar> hidden = pre.cwiseMax(Scalar(0));
  grads.w2.noalias() += grad_z.transpose() * hidden;
  const Matrix<Scalar> dhidden = grad_z * head.w2;
  const Matrix<Scalar> dpre = (pre.array() > Scalar(0)).select(dhidden, Scalar(0));
  grads.w1.noalias() += dpre.transpose() * e;
  return dpre * head.w1;
}

/// Cosine similarity, clamped to [-1, 1]. Zero vectors are rejected.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_sim(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar na = a.norm(), nb = b.norm();
  if (na == Scalar(0) || nb == Scalar(0)) throw DegenerateEmbedding("cosine similarity of a zero vector");
  const Scalar s = a.dot(b) / (na * nb);
  return std::clamp(s, Scalar(-1), Scalar(1));
}

/// Summed NT-Xent over both directions of every pair. With grad_z non-null it
/// receives dLoss/dz.
template <typename Scalar>
Scalar nt_xent_loss(const ContrastiveBatch<Scalar>& batch, Matrix<Scalar>* grad_z = nullptr) {
  const Eigen::Index n2 = batch.z.rows();
  if (n2 < 2 || n2 % 2 != 0) throw PreconditionError("contrastive batch needs an even count >= 2");
  if (!(batch.temperature > Scalar(0))) throw PreconditionError("temperature must be positive");
  if (!batch.z.allFinite()) throw NumericalError("non-finite projected embedding");

  const Vector<Scalar> norms = batch.z.rowwise().norm();
  if ((norms.array() == Scalar(0)).any()) throw DegenerateEmbedding("zero vector in contrastive batch");
  const Matrix<Scalar> u = batch.z.array().colwise() / norms.array();
  const Matrix<Scalar> logits = (u * u.transpose()).array().min(Scalar(1)).max(Scalar(-1)).matrix() /
                                batch.temperature;

  // Row i of weights holds d loss / d logits(i, k).
  Matrix<Scalar> weights = Matrix<Scalar>::Zero(n2, n2);
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < n2; ++i) {
    const Eigen::Index partner = (i % 2 == 0) ? i + 1 : i - 1;
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index k = 0; k < n2; ++k)
      if (k != i) mx = std::max(mx, logits(i, k));
    Scalar denom = 0;
    for (Eigen::Index k = 0; k < n2; ++k)
      if (k != i) denom += std::exp(logits(i, k) - mx);
    const Scalar lse = mx + std::log(denom);
    loss += lse - logits(i, partner);
    if (grad_z) {
      for (Eigen::Index k = 0; k < n2; ++k)
        if (k != i) weights(i, k) = std::exp(logits(i, k) - lse);
      weights(i, partner) -= Scalar(1);
    }
  }
  if (!std::isfinite(loss)) throw NumericalError("non-finite contrastive loss");

  if (grad_z) {
    // logits = u u^T / tau, so dL/du = (W + W^T) u / tau.
    const Matrix<Scalar> du = (weights + weights.transpose()) * u / batch.temperature;
    Matrix<Scalar> dz(n2, batch.z.cols());
    for (Eigen::Index i = 0; i < n2; ++i) {
      const Scalar radial = u.row(i).dot(du.row(i));
      dz.row(i) = (du.row(i) - radial * u.row(i)) / norms(i);
    }
    *grad_z = std::move(dz);
  }
  return loss;
}

/// total = mlm + contrastive, unweighted.
inline LossReport combined_loss(double mlm, double contrastive) {
  if (!std::isfinite(mlm) || !std::isfinite(contrastive))
    throw NumericalError("non-finite loss component");
  return {mlm, contrastive, mlm + contrastive};
}

}  // namespace effcl
