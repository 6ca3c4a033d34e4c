#pragma once

#include "effcl/encoder.hpp"
#include "effcl/tensor.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>
#include <vector>

namespace effcl {

/// Principal axes of the token covariance. Columns of vectors are orthonormal;
/// values are nonnegative and sorted in descending order.
template <typename Scalar>
struct EigenBasis {
  Matrix<Scalar> vectors;
  Vector<Scalar> values;
};

/// One jitter draw: delta = vectors * (alpha * values).
template <typename Scalar>
struct JitterDraw {
  Scalar alpha = 0;
  Vector<Scalar> delta;
};

/// Noise level shared by the cutoff ratio and the jitter standard deviation.
class AugmentationLevel {
public:
  static constexpr double kMin = 0.01;
  static constexpr double kMax = 0.1;

  /// A level inside the curriculum range [0.01, 0.1].
  static AugmentationLevel curriculum(double value);
  /// Any level in [0, 1]; for explicit overrides only.
  static AugmentationLevel override_level(double value);

  double value() const { return value_; }

private:
  explicit AugmentationLevel(double v) : value_(v) {}
  double value_;
};

struct CutoffSpan {
  Eigen::Index start = 0;
  Eigen::Index length = 0;
};

/// Number of positions a cutoff ratio removes from a sequence of real_len
/// tokens: floor(ratio * real_len).
Eigen::Index cutoff_length(double ratio, Eigen::Index real_len);

/// Zeroes one contiguous run of floor(ratio * L_real) real positions per
/// sequence; the start is uniform over runs that stay inside real positions.
template <typename Scalar>
HiddenStates<Scalar> span_cutoff(const HiddenStates<Scalar>& states, double ratio, Rng& rng,
                                 std::vector<CutoffSpan>* spans = nullptr);

/// Descending eigendecomposition of the sample covariance of every real token
/// vector in the batch. Each eigenvector is signed so that its largest-magnitude
/// component (first on ties) is positive.
template <typename Scalar>
EigenBasis<Scalar> compute_eigenbasis(const HiddenStates<Scalar>& states);

/// Shifts every real token of sequence b by delta_b = alpha_b * P * lambda,
/// alpha_b ~ N(0, sigma^2) drawn once per sequence.
template <typename Scalar>
HiddenStates<Scalar> pca_jitter(const HiddenStates<Scalar>& states, const EigenBasis<Scalar>& basis,
                                Scalar sigma, Rng& rng, std::vector<JitterDraw<Scalar>>* draws = nullptr);

/// Uniform draw from cfg.hook_layer_choices.
int sample_hook_layer(const EncoderConfig& cfg, Rng& rng);

/// Everything drawn by one augment() call.
template <typename Scalar>
struct AugmentRecord {
  double level = 0;
  std::vector<CutoffSpan> spans;
  EigenBasis<Scalar> basis;
  std::vector<JitterDraw<Scalar>> draws;

  /// The augmentation as a fixed affine map on states shaped like `like`.
  FrozenHook<Scalar> frozen(const HiddenStates<Scalar>& like) const;
};

/// Cutoff, then PCA jitter on the cut states, both at `level`.
template <typename Scalar>
HiddenStates<Scalar> augment(const HiddenStates<Scalar>& states, AugmentationLevel level, Rng& rng,
                             AugmentRecord<Scalar>* record = nullptr);

// ---------------------------------------------------------------------------

inline AugmentationLevel AugmentationLevel::curriculum(double value) {
  if (!(value >= kMin && value <= kMax))
    throw PreconditionError("augmentation level " + std::to_string(value) + " outside [0.01, 0.1]");
  return AugmentationLevel(value);
}

inline AugmentationLevel AugmentationLevel::override_level(double value) {
  if (!(value >= 0.0 && value <= 1.0))
    throw PreconditionError("augmentation override " + std::to_string(value) + " outside [0, 1]");
  return AugmentationLevel(value);
}

inline Eigen::Index cutoff_length(double ratio, Eigen::Index real_len) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw PreconditionError("cutoff ratio must lie in [0, 1]");
  // The slack absorbs products such as 0.29 * 100 = 28.999999999999996.
  const auto n = static_cast<Eigen::Index>(std::floor(ratio * static_cast<double>(real_len) + 1e-9));
  return std::min(n, real_len);
}

template <typename Scalar>
HiddenStates<Scalar> span_cutoff(const HiddenStates<Scalar>& states, double ratio, Rng& rng,
                                 std::vector<CutoffSpan>* spans) {
  HiddenStates<Scalar> out = states;
  if (spans) spans->assign(states.batch(), CutoffSpan{});
  for (std::size_t b = 0; b < states.batch(); ++b) {
    const auto bi = static_cast<Eigen::Index>(b);
    const Eigen::Index span_len = cutoff_length(ratio, states.real_length(b));
    if (span_len == 0) continue;

    std::vector<Eigen::Index> starts;
    Eigen::Index run = 0;
    for (Eigen::Index t = 0; t < states.length(); ++t) {
      run = states.padding_mask(bi, t) ? run + 1 : 0;
      if (run >= span_len) starts.push_back(t - span_len + 1);
    }
    if (starts.empty()) continue;  // real tokens too fragmented for a run of span_len
    std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
    const Eigen::Index start = starts[pick(rng)];
    out.values[b].middleRows(start, span_len).setZero();
    if (spans) (*spans)[b] = {start, span_len};
  }
  return out;
}

template <typename Scalar>
EigenBasis<Scalar> compute_eigenbasis(const HiddenStates<Scalar>& states) {
  const Eigen::Index d = states.dim();
  std::vector<Vector<Scalar>> rows;
  for (std::size_t b = 0; b < states.batch(); ++b)
    for (Eigen::Index t = 0; t < states.length(); ++t)
      if (states.padding_mask(static_cast<Eigen::Index>(b), t)) rows.push_back(states.values[b].row(t).transpose());
  const auto count = static_cast<Eigen::Index>(rows.size());
  if (count < 2)
    throw PreconditionError("eigenbasis needs at least 2 real token vectors, got " + std::to_string(count));

  // Centered relative to the first real token.
  const Vector<Scalar> ref = rows.front();
  Vector<Scalar> mean = Vector<Scalar>::Zero(d);
  for (auto& r : rows) {
    r -= ref;
    mean += r;
  }
  mean /= static_cast<Scalar>(count);
  Matrix<Scalar> cov = Matrix<Scalar>::Zero(d, d);
  for (const auto& r : rows) {
    const Vector<Scalar> c = r - mean;
    cov.noalias() += c * c.transpose();
  }
  cov /= static_cast<Scalar>(count - 1);

  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> solver(cov);
  if (solver.info() != Eigen::Success) {
    std::ostringstream msg;
    msg << "covariance eigensolve did not converge (d=" << d << ", tokens=" << count
        << ", trace=" << cov.trace() << ", finite=" << cov.allFinite() << ")";
    throw NumericalError(msg.str());
  }

  EigenBasis<Scalar> basis;
  basis.vectors = solver.eigenvectors().rowwise().reverse();
  basis.values = solver.eigenvalues().reverse().cwiseMax(Scalar(0));
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::Index arg = 0;
    basis.vectors.col(i).cwiseAbs().maxCoeff(&arg);
    if (basis.vectors(arg, i) < 0) basis.vectors.col(i) *= Scalar(-1);
  }
  return basis;
}

template <typename Scalar>
HiddenStates<Scalar> pca_jitter(const HiddenStates<Scalar>& states, const EigenBasis<Scalar>& basis,
                                Scalar sigma, Rng& rng, std::vector<JitterDraw<Scalar>>* draws) {
  const Eigen::Index d = states.dim();
  if (basis.vectors.rows() != d || basis.vectors.cols() != d || basis.values.size() != d)
    throw PreconditionError("eigenbasis dimension does not match the hidden states");
  if (!(sigma >= 0)) throw PreconditionError("jitter sigma must be nonnegative");

  const Vector<Scalar> principal = basis.vectors * basis.values;
  HiddenStates<Scalar> out = states;
  if (draws) draws->clear();
  std::normal_distribution<double> standard(0.0, 1.0);
  for (std::size_t b = 0; b < states.batch(); ++b) {
    const Scalar alpha = sigma * static_cast<Scalar>(standard(rng));
    const Vector<Scalar> delta = alpha * principal;
    for (Eigen::Index t = 0; t < states.length(); ++t)
      if (states.padding_mask(static_cast<Eigen::Index>(b), t)) out.values[b].row(t) += delta.transpose();
    if (draws) draws->push_back({alpha, delta});
  }
  return out;
}

inline int sample_hook_layer(const EncoderConfig& cfg, Rng& rng) {
  if (cfg.hook_layer_choices.empty()) throw ConfigError("hook_layer_choices is empty");
  std::uniform_int_distribution<std::size_t> pick(0, cfg.hook_layer_choices.size() - 1);
  return cfg.hook_layer_choices[pick(rng)];
}

template <typename Scalar>
FrozenHook<Scalar> AugmentRecord<Scalar>::frozen(const HiddenStates<Scalar>& like) const {
  FrozenHook<Scalar> hook = FrozenHook<Scalar>::identity(like);
  for (std::size_t b = 0; b < like.batch(); ++b) {
    if (b < spans.size() && spans[b].length > 0)
      hook.keep[b].segment(spans[b].start, spans[b].length).setZero();
    if (b < draws.size())
      for (Eigen::Index t = 0; t < like.length(); ++t)
        if (like.padding_mask(static_cast<Eigen::Index>(b), t)) hook.shift[b].row(t) = draws[b].delta.transpose();
  }
  return hook;
}

template <typename Scalar>
HiddenStates<Scalar> augment(const HiddenStates<Scalar>& states, AugmentationLevel level, Rng& rng,
                             AugmentRecord<Scalar>* record) {
  AugmentRecord<Scalar> local;
  AugmentRecord<Scalar>& rec = record ? *record : local;
  rec.level = level.value();
  HiddenStates<Scalar> cut = span_cutoff(states, level.value(), rng, &rec.spans);
  rec.basis = compute_eigenbasis(cut);
  return pca_jitter(cut, rec.basis, static_cast<Scalar>(level.value()), rng, &rec.draws);
}

}  // namespace effcl
