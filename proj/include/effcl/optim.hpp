#pragma once

#include "effcl/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

namespace effcl {

template <typename Scalar>
using TensorView = Eigen::Map<Vector<Scalar>>;

/// Flat views over a list of dense tensors, in visitation order.
template <typename Scalar>
class ParameterViews {
public:
  template <typename Derived>
  void add(Eigen::PlainObjectBase<Derived>& t) {
    views_.emplace_back(t.data(), t.size());
  }

  std::size_t size() const { return views_.size(); }
  TensorView<Scalar>& operator[](std::size_t i) { return views_[i]; }
  const TensorView<Scalar>& operator[](std::size_t i) const { return views_[i]; }

  Scalar squared_norm() const {
    Scalar s = 0;
    for (const auto& v : views_) s += v.squaredNorm();
    return s;
  }

private:
  std::vector<TensorView<Scalar>> views_;
};

/// Linear warmup from 0 to peak over floor(warmup_frac * total) steps, then
/// linear decay to 0 at total.
inline double slanted_triangular_lr(std::size_t step, std::size_t total_steps, double peak_lr,
                                    double warmup_frac) {
  if (step >= total_steps) throw PreconditionError("learning-rate step outside [0, total_steps)");
  const auto warmup = static_cast<std::size_t>(std::floor(warmup_frac * static_cast<double>(total_steps)));
  if (step < warmup) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  return peak_lr * (1.0 - static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup));
}

/// Rescales grads in place when their global L2 norm exceeds max_norm.
/// Returns the norm before clipping.
template <typename Scalar>
Scalar clip_gradients(ParameterViews<Scalar>& grads, Scalar max_norm) {
  if (!(max_norm > 0)) throw PreconditionError("max_norm must be positive");
  const Scalar norm = std::sqrt(grads.squared_norm());
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient");
  if (norm > max_norm) {
    const Scalar scale = max_norm / norm;
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] *= scale;
  }
  return norm;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamWMoments {
  std::vector<Vector<Scalar>> first, second;

  static AdamWMoments zeros_like(const ParameterViews<Scalar>& params) {
    AdamWMoments m;
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.first.push_back(Vector<Scalar>::Zero(params[i].size()));
      m.second.push_back(Vector<Scalar>::Zero(params[i].size()));
    }
    return m;
  }
};

/// One AdamW step (1-based `step`) with bias correction and decoupled decay:
/// p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p.
template <typename Scalar>
void adamw_update(ParameterViews<Scalar>& params, const ParameterViews<Scalar>& grads,
                  AdamWMoments<Scalar>& moments, std::size_t step, Scalar lr, Scalar weight_decay,
                  const AdamWConfig& cfg = {}) {
  if (step < 1) throw PreconditionError("AdamW step counter starts at 1");
  if (params.size() != grads.size() || params.size() != moments.first.size())
    throw PreconditionError("AdamW parameter, gradient and moment lists differ in length");
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  const auto eps = static_cast<Scalar>(cfg.eps);
  const Scalar c1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(step));
  const Scalar c2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = grads[i];
    if (p.size() != g.size()) throw PreconditionError("AdamW shape mismatch");
    auto& m = moments.first[i];
    auto& v = moments.second[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    const auto update = ((m.array() / c1) / ((v.array() / c2).sqrt() + eps)).matrix();
    p = p - lr * update - lr * weight_decay * p;
  }
}

}  // namespace effcl
