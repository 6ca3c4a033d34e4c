#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace effcl {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Seeded random source shared by every sampling operation.
using Rng = std::mt19937_64;

using TokenId = std::int32_t;

/// Raised when an operation is called outside its documented domain.
class PreconditionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for non-finite values or failed numerical kernels.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Activations of one encoder layer for a batch.
///
/// values[b] is an (L x d) block, one row per token position. padding_mask is
/// (B x L) with true marking a real token.
template <typename Scalar>
struct HiddenStates {
  std::vector<Matrix<Scalar>> values;
  Mask padding_mask;

  std::size_t batch() const { return values.size(); }
  Eigen::Index length() const { return padding_mask.cols(); }
  Eigen::Index dim() const { return values.empty() ? 0 : values.front().cols(); }

  Eigen::Index real_length(std::size_t b) const {
    return padding_mask.row(static_cast<Eigen::Index>(b)).count();
  }

  bool same_shape(const HiddenStates& other) const {
    if (values.size() != other.values.size()) return false;
    if (padding_mask.rows() != other.padding_mask.rows() ||
        padding_mask.cols() != other.padding_mask.cols())
      return false;
    for (std::size_t b = 0; b < values.size(); ++b) {
      if (values[b].rows() != other.values[b].rows() ||
          values[b].cols() != other.values[b].cols())
        return false;
    }
    return true;
  }

  bool all_finite() const {
    for (const auto& v : values)
      if (!v.allFinite()) return false;
    return true;
  }
};

/// (B x d) pooled sequence embeddings, one row per sequence.
template <typename Scalar>
using SequenceEmbedding = Matrix<Scalar>;

/// Builds an all-real mask for B sequences of length L.
inline Mask full_mask(Eigen::Index batch, Eigen::Index length) {
  return Mask::Constant(batch, length, true);
}

}  // namespace effcl
