#pragma once

#include "effcl/corpus.hpp"
#include "effcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <functional>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

namespace effcl {

struct EncoderConfig {
  int num_layers = 4;
  int hidden_dim = 64;
  int num_heads = 4;
  int ffn_dim = 256;
  int vocab_size = 0;  // 0: derive from the corpus vocabulary
  int max_len = 128;
  std::vector<int> hook_layer_choices{2, 3, 4};

  /// Throws ConfigError when the fields are inconsistent.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

template <typename Scalar>
struct LayerWeights {
  Matrix<Scalar> wq, wk, wv, wo;  // (d x d)
  Vector<Scalar> bq, bv, bo;
  Vector<Scalar> ln1_gamma, ln1_beta;
  Matrix<Scalar> ff1;  // (ffn x d)
  Vector<Scalar> ff1_bias;
  Matrix<Scalar> ff2;  // (d x ffn)
  Vector<Scalar> ff2_bias;
  Vector<Scalar> ln2_gamma, ln2_beta;
};

/// Every trainable tensor of the encoder plus its MLM vocabulary head.
template <typename Scalar>
struct EncoderWeights {
  Matrix<Scalar> token_embedding;     // (V x d)
  Matrix<Scalar> position_embedding;  // (max_len x d)
  Vector<Scalar> emb_ln_gamma, emb_ln_beta;
  std::vector<LayerWeights<Scalar>> layers;
  Matrix<Scalar> mlm_weight;  // (V x d)
  Vector<Scalar> mlm_bias;

  /// Zero-filled tensors shaped for cfg.
  static EncoderWeights zeros(const EncoderConfig& cfg);
  /// normal(0, std) matrices, zero biases, unit LayerNorm gains.
  static EncoderWeights initialized(const EncoderConfig& cfg, Rng& rng, double std = 0.02);

  template <typename U>
  EncoderWeights<U> cast() const;
};

/// Calls f(name, tensor_a, tensor_b, ...) for every tensor, in a fixed order
/// shared by the optimizer, the gradient clipper and the checkpoint format.
template <typename F, typename W, typename... Ws>
void zip_tensors(F&& f, W& w, Ws&... ws) {
  f(std::string("token_embedding"), w.token_embedding, ws.token_embedding...);
  f(std::string("position_embedding"), w.position_embedding, ws.position_embedding...);
  f(std::string("emb_ln.gamma"), w.emb_ln_gamma, ws.emb_ln_gamma...);
  f(std::string("emb_ln.beta"), w.emb_ln_beta, ws.emb_ln_beta...);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l + 1) + ".";
    f(p + "attn.wq", w.layers[l].wq, ws.layers[l].wq...);
    f(p + "attn.bq", w.layers[l].bq, ws.layers[l].bq...);
    f(p + "attn.wk", w.layers[l].wk, ws.layers[l].wk...);
    f(p + "attn.wv", w.layers[l].wv, ws.layers[l].wv...);
    f(p + "attn.bv", w.layers[l].bv, ws.layers[l].bv...);
    f(p + "attn.wo", w.layers[l].wo, ws.layers[l].wo...);
    f(p + "attn.bo", w.layers[l].bo, ws.layers[l].bo...);
    f(p + "ln1.gamma", w.layers[l].ln1_gamma, ws.layers[l].ln1_gamma...);
    f(p + "ln1.beta", w.layers[l].ln1_beta, ws.layers[l].ln1_beta...);
    f(p + "ffn.w1", w.layers[l].ff1, ws.layers[l].ff1...);
    f(p + "ffn.b1", w.layers[l].ff1_bias, ws.layers[l].ff1_bias...);
    f(p + "ffn.w2", w.layers[l].ff2, ws.layers[l].ff2...);
    f(p + "ffn.b2", w.layers[l].ff2_bias, ws.layers[l].ff2_bias...);
    f(p + "ln2.gamma", w.layers[l].ln2_gamma, ws.layers[l].ln2_gamma...);
    f(p + "ln2.beta", w.layers[l].ln2_beta, ws.layers[l].ln2_beta...);
  }
  f(std::string("mlm.weight"), w.mlm_weight, ws.mlm_weight...);
  f(std::string("mlm.bias"), w.mlm_bias, ws.mlm_bias...);
}

/// Token IDs padded to a rectangle. mask is (B x L), true = real token.
struct TokenBatch {
  Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic> ids;
  Mask mask;

  static TokenBatch from_sequences(const std::vector<std::vector<TokenId>>& seqs);
  static TokenBatch from_anchors(const std::vector<TokenSequence>& anchors);
  static TokenBatch from_masked(const std::vector<MaskedSequence>& masked);

  std::size_t batch() const { return static_cast<std::size_t>(ids.rows()); }
  Eigen::Index length() const { return ids.cols(); }
};

/// A hook whose Jacobian is diagonal: out = keep (.) in + shift, applied row by
/// row. keep[b](t) is 0 or 1. This is the augmentation with its random draws
/// fixed.
template <typename Scalar>
struct FrozenHook {
  std::vector<Vector<Scalar>> keep;   // length L per sequence
  std::vector<Matrix<Scalar>> shift;  // (L x d) per sequence

  static FrozenHook identity(const HiddenStates<Scalar>& like);
  HiddenStates<Scalar> apply(const HiddenStates<Scalar>& in) const;
};

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> inv_std;
};

template <typename Scalar>
struct LayerCache {
  Matrix<Scalar> input, q, k, v, context, x1, ff_pre, ff_act;
  std::vector<Matrix<Scalar>> attn;
  LayerNormCache<Scalar> ln1, ln2;
};

/// Activations retained by a forward pass for the backward pass.
template <typename Scalar>
struct ForwardTrace {
  TokenBatch tokens;
  std::vector<LayerNormCache<Scalar>> emb_ln;          // per sequence
  std::vector<std::vector<LayerCache<Scalar>>> cache;  // [layer][sequence]
  int hook_layer = 0;                                  // 0: no hook
  FrozenHook<Scalar> hook;
  HiddenStates<Scalar> final_states;
};

template <typename Scalar>
using HookFn = std::function<HiddenStates<Scalar>(const HiddenStates<Scalar>&)>;

/// Builds a FrozenHook from the activations at the hook layer.
template <typename Scalar>
using HookFactory = std::function<FrozenHook<Scalar>(const HiddenStates<Scalar>&)>;

/// Post-LayerNorm transformer encoder with learned positions and an MLM head.
template <typename Scalar>
class Encoder {
public:
  Encoder(EncoderConfig cfg, EncoderWeights<Scalar> weights);
  Encoder(EncoderConfig cfg, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  const EncoderWeights<Scalar>& weights() const { return w_; }
  EncoderWeights<Scalar>& weights() { return w_; }

  /// Plain forward pass; returns the final-layer states.
  HiddenStates<Scalar> encode(const TokenBatch& tokens) const;

  /// Runs layers 1..hook_layer, replaces that layer's output with hook(output)
  /// and continues. Returns the pooled embedding and the final states.
  std::pair<SequenceEmbedding<Scalar>, HiddenStates<Scalar>> encode_with_hook(
      const TokenBatch& tokens, int hook_layer, const HookFn<Scalar>& hook) const;

  /// Forward pass that keeps what backward() needs. make_hook may be empty
  /// (hook_layer is then ignored).
  ForwardTrace<Scalar> forward(const TokenBatch& tokens, int hook_layer = 0,
                               const HookFactory<Scalar>& make_hook = {}) const;

  /// Accumulates parameter gradients given dLoss/d(final states). The MLM
  /// head is not touched here; see mlm_loss.
  void backward(const ForwardTrace<Scalar>& trace, const HiddenStates<Scalar>& grad_final,
                EncoderWeights<Scalar>& grads) const;

private:
  HiddenStates<Scalar> run(const TokenBatch& tokens, int hook_layer, const HookFn<Scalar>* hook_fn,
                           const HookFactory<Scalar>* make_hook, ForwardTrace<Scalar>* trace) const;

  EncoderConfig cfg_;
  EncoderWeights<Scalar> w_;
};

/// Mean over non-padding positions, one row per sequence.
template <typename Scalar>
SequenceEmbedding<Scalar> mean_pool(const HiddenStates<Scalar>& states);

/// Gradient of mean_pool: each real position receives grad_row / L_real.
template <typename Scalar>
HiddenStates<Scalar> mean_pool_backward(const SequenceEmbedding<Scalar>& grad_pooled,
                                        const Mask& padding_mask, Eigen::Index dim);

template <typename Scalar>
struct MlmResult {
  Scalar loss = 0;
  HiddenStates<Scalar> grad_final;  // filled only when gradients are requested
};

/// Mean cross-entropy over masked positions of the linear vocabulary head
/// applied to final_states. With head_grads non-null, accumulates head
/// gradients there and returns dLoss/d(final states).
template <typename Scalar>
MlmResult<Scalar> mlm_loss(const EncoderWeights<Scalar>& weights,
                           const HiddenStates<Scalar>& final_states,
                           const std::vector<MaskedSequence>& masked,
                           EncoderWeights<Scalar>* head_grads = nullptr);

namespace detail {

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * Scalar(M_PI));
  return cdf + x * pdf;
}

inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& z, const Vector<Scalar>& gamma,
                          const Vector<Scalar>& beta, LayerNormCache<Scalar>* cache) {
  const Eigen::Index n = z.cols();
  Vector<Scalar> mean = z.rowwise().mean();
  Matrix<Scalar> centered = z.colwise() - mean;
  Vector<Scalar> var = centered.array().square().rowwise().sum() / Scalar(n);
  Vector<Scalar> inv_std = (var.array() + Scalar(kLayerNormEps)).rsqrt();
  Matrix<Scalar> xhat = centered.array().colwise() * inv_std.array();
  Matrix<Scalar> y = (xhat.array().rowwise() * gamma.transpose().array()).rowwise() +
                     beta.transpose().array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNormCache<Scalar>& cache, const Vector<Scalar>& gamma,
                                   const Matrix<Scalar>& dy, Vector<Scalar>& dgamma,
                                   Vector<Scalar>& dbeta) {
  dgamma += (dy.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
  dbeta += dy.colwise().sum().transpose();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * gamma.transpose().array();
  const Vector<Scalar> mean_d = dxhat.rowwise().mean();
  const Vector<Scalar> mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Matrix<Scalar> dz = dxhat.colwise() - mean_d;
  dz -= (cache.xhat.array().colwise() * mean_dx.array()).matrix();
  return dz.array().colwise() * cache.inv_std.array();
}

/// Row-wise softmax restricted to the real key columns.
template <typename Scalar>
void masked_softmax_rows(Matrix<Scalar>& scores, const Eigen::Array<bool, 1, Eigen::Dynamic>& keys) {
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j < scores.cols(); ++j)
      if (keys(j)) mx = std::max(mx, scores(i, j));
    Scalar sum = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      const Scalar e = keys(j) ? std::exp(scores(i, j) - mx) : Scalar(0);
      scores(i, j) = e;
      sum += e;
    }
    scores.row(i) /= sum;
  }
}

template <typename Scalar>
Matrix<Scalar> affine_rows(const Matrix<Scalar>& x, const Matrix<Scalar>& w, const Vector<Scalar>& b) {
  Matrix<Scalar> y = x * w.transpose();
  y.rowwise() += b.transpose();
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_forward(const LayerWeights<Scalar>& w, const Matrix<Scalar>& x,
                             const Eigen::Array<bool, 1, Eigen::Dynamic>& keys, int num_heads,
                             LayerCache<Scalar>* cache) {
  const Eigen::Index d = x.cols();
  const Eigen::Index dh = d / num_heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  Matrix<Scalar> q = affine_rows(x, w.wq, w.bq);
  Matrix<Scalar> k = x * w.wk.transpose();
  Matrix<Scalar> v = affine_rows(x, w.wv, w.bv);
  Matrix<Scalar> context(x.rows(), d);
  std::vector<Matrix<Scalar>> probs;
  probs.reserve(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    Matrix<Scalar> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    masked_softmax_rows(s, keys);
    context.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    probs.push_back(std::move(s));
  }
  Matrix<Scalar> attn_out = affine_rows(context, w.wo, w.bo);

  LayerNormCache<Scalar> ln1, ln2;
  Matrix<Scalar> x1 = layer_norm<Scalar>(x + attn_out, w.ln1_gamma, w.ln1_beta, cache ? &ln1 : nullptr);
  Matrix<Scalar> ff_pre = affine_rows(x1, w.ff1, w.ff1_bias);
  Matrix<Scalar> ff_act = ff_pre.unaryExpr([](Scalar t) { return gelu(t); });
  Matrix<Scalar> ff_out = affine_rows(ff_act, w.ff2, w.ff2_bias);
  Matrix<Scalar> out = layer_norm<Scalar>(x1 + ff_out, w.ln2_gamma, w.ln2_beta, cache ? &ln2 : nullptr);

  if (cache) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(probs);
    cache->context = std::move(context);
    cache->ln1 = std::move(ln1);
    cache->x1 = std::move(x1);
    cache->ff_pre = std::move(ff_pre);
    cache->ff_act = std::move(ff_act);
    cache->ln2 = std::move(ln2);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> layer_backward(const LayerWeights<Scalar>& w, const LayerCache<Scalar>& c,
                              const Matrix<Scalar>& dout, int num_heads, LayerWeights<Scalar>& g) {
  const Eigen::Index d = c.input.cols();
  const Eigen::Index dh = d / num_heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  const Matrix<Scalar> dsum2 = layer_norm_backward(c.ln2, w.ln2_gamma, dout, g.ln2_gamma, g.ln2_beta);
  g.ff2.noalias() += dsum2.transpose() * c.ff_act;
  g.ff2_bias += dsum2.colwise().sum().transpose();
  const Matrix<Scalar> dact = dsum2 * w.ff2;
  const Matrix<Scalar> dpre =
      dact.array() * c.ff_pre.unaryExpr([](Scalar t) { return gelu_grad(t); }).array();
  g.ff1.noalias() += dpre.transpose() * c.x1;
  g.ff1_bias += dpre.colwise().sum().transpose();
  Matrix<Scalar> dx1 = dsum2;
  dx1.noalias() += dpre * w.ff1;

  const Matrix<Scalar> dsum1 = layer_norm_backward(c.ln1, w.ln1_gamma, dx1, g.ln1_gamma, g.ln1_beta);
  g.wo.noalias() += dsum1.transpose() * c.context;
  g.bo += dsum1.colwise().sum().transpose();
  const Matrix<Scalar> dcontext = dsum1 * w.wo;

  Matrix<Scalar> dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int h = 0; h < num_heads; ++h) {
    const auto& p = c.attn[static_cast<std::size_t>(h)];
    const auto dctx = dcontext.middleCols(h * dh, dh);
    const Matrix<Scalar> dp = dctx * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * dctx;
    const Vector<Scalar> row_dot = (dp.array() * p.array()).rowwise().sum();
    const Matrix<Scalar> ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  g.wq.noalias() += dq.transpose() * c.input;
  g.wk.noalias() += dk.transpose() * c.input;
  g.wv.noalias() += dv.transpose() * c.input;
  g.bq += dq.colwise().sum().transpose();
  g.bv += dv.colwise().sum().transpose();

  Matrix<Scalar> dx = dsum1;
  dx.noalias() += dq * w.wq;
  dx.noalias() += dk * w.wk;
  dx.noalias() += dv * w.wv;
  return dx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Implementation

inline void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be positive");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be positive");
  if (num_heads < 1) throw ConfigError("num_heads must be positive");
  if (hidden_dim % num_heads != 0) throw ConfigError("hidden_dim must be divisible by num_heads");
  if (ffn_dim < 1) throw ConfigError("ffn_dim must be positive");
  if (vocab_size < 0) throw ConfigError("vocab_size must be nonnegative");
  if (max_len < 1) throw ConfigError("max_len must be positive");
  if (hook_layer_choices.empty()) throw ConfigError("hook_layer_choices must not be empty");
  for (int l : hook_layer_choices)
    if (l < 1 || l > num_layers)
      throw ConfigError("hook layer " + std::to_string(l) + " outside 1.." + std::to_string(num_layers));
}

template <typename Scalar>
EncoderWeights<Scalar> EncoderWeights<Scalar>::zeros(const EncoderConfig& cfg) {
  if (cfg.vocab_size < 1) throw ConfigError("vocab_size must be resolved before allocating weights");
  const Eigen::Index d = cfg.hidden_dim, f = cfg.ffn_dim, v = cfg.vocab_size;
  EncoderWeights w;
  w.token_embedding = Matrix<Scalar>::Zero(v, d);
  w.position_embedding = Matrix<Scalar>::Zero(cfg.max_len, d);
  w.emb_ln_gamma = Vector<Scalar>::Zero(d);
  w.emb_ln_beta = Vector<Scalar>::Zero(d);
  w.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& l : w.layers) {
    for (auto* m : {&l.wq, &l.wk, &l.wv, &l.wo}) *m = Matrix<Scalar>::Zero(d, d);
    for (auto* b : {&l.bq, &l.bv, &l.bo, &l.ln1_gamma, &l.ln1_beta, &l.ln2_gamma,
                    &l.ln2_beta, &l.ff2_bias})
      *b = Vector<Scalar>::Zero(d);
    l.ff1 = Matrix<Scalar>::Zero(f, d);
    l.ff1_bias = Vector<Scalar>::Zero(f);
    l.ff2 = Matrix<Scalar>::Zero(d, f);
  }
  w.mlm_weight = Matrix<Scalar>::Zero(v, d);
  w.mlm_bias = Vector<Scalar>::Zero(v);
  return w;
}

template <typename Scalar>
EncoderWeights<Scalar> EncoderWeights<Scalar>::initialized(const EncoderConfig& cfg, Rng& rng,
                                                           double std) {
  EncoderWeights w = zeros(cfg);
  std::normal_distribution<double> normal(0.0, std);
  zip_tensors(
      [&](const std::string& name, auto& t) {
        using T = std::decay_t<decltype(t)>;
        if (name.ends_with("gamma")) {
          t.setOnes();
        } else if constexpr (T::ColsAtCompileTime != 1) {
          for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(normal(rng));
        }
      },
      w);
  return w;
}

template <typename Scalar>
template <typename U>
EncoderWeights<U> EncoderWeights<Scalar>::cast() const {
  EncoderWeights<U> out;
  out.layers.resize(layers.size());
  zip_tensors([](const std::string&, auto& dst, const auto& src) { dst = src.template cast<U>(); },
              out, *this);
  return out;
}

inline TokenBatch TokenBatch::from_sequences(const std::vector<std::vector<TokenId>>& seqs) {
  std::size_t len = 0;
  for (const auto& s : seqs) len = std::max(len, s.size());
  TokenBatch batch;
  const auto b = static_cast<Eigen::Index>(seqs.size());
  batch.ids.setConstant(b, static_cast<Eigen::Index>(len), kPadId);
  batch.mask = Mask::Constant(b, static_cast<Eigen::Index>(len), false);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& s = seqs[static_cast<std::size_t>(i)];
    for (std::size_t t = 0; t < s.size(); ++t) {
      batch.ids(i, static_cast<Eigen::Index>(t)) = s[t];
      batch.mask(i, static_cast<Eigen::Index>(t)) = true;
    }
  }
  return batch;
}

inline TokenBatch TokenBatch::from_anchors(const std::vector<TokenSequence>& anchors) {
  std::vector<std::vector<TokenId>> seqs;
  for (const auto& a : anchors) seqs.push_back(a.tokens);
  return from_sequences(seqs);
}

inline TokenBatch TokenBatch::from_masked(const std::vector<MaskedSequence>& masked) {
  std::vector<std::vector<TokenId>> seqs;
  for (const auto& m : masked) seqs.push_back(m.input_tokens);
  return from_sequences(seqs);
}

template <typename Scalar>
FrozenHook<Scalar> FrozenHook<Scalar>::identity(const HiddenStates<Scalar>& like) {
  FrozenHook h;
  for (const auto& v : like.values) {
    h.keep.push_back(Vector<Scalar>::Ones(v.rows()));
    h.shift.push_back(Matrix<Scalar>::Zero(v.rows(), v.cols()));
  }
  return h;
}

template <typename Scalar>
HiddenStates<Scalar> FrozenHook<Scalar>::apply(const HiddenStates<Scalar>& in) const {
  if (keep.size() != in.batch() || shift.size() != in.batch())
    throw PreconditionError("frozen hook batch size does not match the states");
  HiddenStates<Scalar> out{{}, in.padding_mask};
  out.values.reserve(in.batch());
  for (std::size_t b = 0; b < in.batch(); ++b) {
    if (keep[b].size() != in.values[b].rows() || shift[b].rows() != in.values[b].rows() ||
        shift[b].cols() != in.values[b].cols())
      throw PreconditionError("frozen hook shape does not match the states");
    out.values.push_back((in.values[b].array().colwise() * keep[b].array()).matrix() + shift[b]);
  }
  return out;
}

template <typename Scalar>
Encoder<Scalar>::Encoder(EncoderConfig cfg, EncoderWeights<Scalar> weights)
    : cfg_(std::move(cfg)), w_(std::move(weights)) {
  cfg_.validate();
  if (w_.layers.size() != static_cast<std::size_t>(cfg_.num_layers) ||
      w_.token_embedding.rows() != cfg_.vocab_size || w_.token_embedding.cols() != cfg_.hidden_dim ||
      w_.position_embedding.rows() != cfg_.max_len)
    throw ConfigError("encoder weights do not match the configuration");
}

template <typename Scalar>
Encoder<Scalar>::Encoder(EncoderConfig cfg, Rng& rng)
    : Encoder(cfg, EncoderWeights<Scalar>::initialized(cfg, rng)) {}

template <typename Scalar>
HiddenStates<Scalar> Encoder<Scalar>::run(const TokenBatch& tokens, int hook_layer,
                                          const HookFn<Scalar>* hook_fn,
                                          const HookFactory<Scalar>* make_hook,
                                          ForwardTrace<Scalar>* trace) const {
  const std::size_t batch = tokens.batch();
  const Eigen::Index len = tokens.length();
  if (batch == 0) throw PreconditionError("empty token batch");
  if (len > cfg_.max_len)
    throw PreconditionError("sequence length " + std::to_string(len) + " exceeds max_len " +
                            std::to_string(cfg_.max_len));
  for (Eigen::Index i = 0; i < tokens.ids.size(); ++i) {
    const TokenId id = tokens.ids.data()[i];
    if (id < 0 || id >= cfg_.vocab_size)
      throw PreconditionError("token id " + std::to_string(id) + " outside the vocabulary");
  }
  const bool hooked = hook_layer > 0 && (hook_fn || (make_hook && *make_hook));
  if (hooked && (hook_layer > cfg_.num_layers))
    throw PreconditionError("hook layer " + std::to_string(hook_layer) + " outside the encoder");

  HiddenStates<Scalar> states{{}, tokens.mask};
  states.values.reserve(batch);
  if (trace) {
    trace->tokens = tokens;
    trace->emb_ln.resize(batch);
    trace->cache.assign(static_cast<std::size_t>(cfg_.num_layers),
                        std::vector<LayerCache<Scalar>>(batch));
    trace->hook_layer = hooked ? hook_layer : 0;
  }
  for (std::size_t b = 0; b < batch; ++b) {
    Matrix<Scalar> z(len, cfg_.hidden_dim);
    for (Eigen::Index t = 0; t < len; ++t)
      z.row(t) = w_.token_embedding.row(tokens.ids(static_cast<Eigen::Index>(b), t)) +
                 w_.position_embedding.row(t);
    states.values.push_back(detail::layer_norm<Scalar>(z, w_.emb_ln_gamma, w_.emb_ln_beta,
                                                       trace ? &trace->emb_ln[b] : nullptr));
  }

  for (int l = 1; l <= cfg_.num_layers; ++l) {
    const auto& lw = w_.layers[static_cast<std::size_t>(l - 1)];
    for (std::size_t b = 0; b < batch; ++b) {
      const Eigen::Array<bool, 1, Eigen::Dynamic> keys = tokens.mask.row(static_cast<Eigen::Index>(b));
      if (!keys.any()) throw PreconditionError("sequence without real tokens");
      auto* cache = trace ? &trace->cache[static_cast<std::size_t>(l - 1)][b] : nullptr;
      states.values[b] = detail::layer_forward(lw, states.values[b], keys, cfg_.num_heads, cache);
    }
    if (hooked && l == hook_layer) {
      if (hook_fn) {
        HiddenStates<Scalar> out = (*hook_fn)(states);
        if (!out.same_shape(states))
          throw PreconditionError("hook changed the shape of the hidden states");
        out.padding_mask = states.padding_mask;
        states = std::move(out);
      } else {
        FrozenHook<Scalar> frozen = (*make_hook)(states);
        states = frozen.apply(states);
        if (trace) trace->hook = std::move(frozen);
      }
    }
  }
  if (trace) trace->final_states = states;
  return states;
}

template <typename Scalar>
HiddenStates<Scalar> Encoder<Scalar>::encode(const TokenBatch& tokens) const {
  return run(tokens, 0, nullptr, nullptr, nullptr);
}

template <typename Scalar>
std::pair<SequenceEmbedding<Scalar>, HiddenStates<Scalar>> Encoder<Scalar>::encode_with_hook(
    const TokenBatch& tokens, int hook_layer, const HookFn<Scalar>& hook) const {
  if (std::find(cfg_.hook_layer_choices.begin(), cfg_.hook_layer_choices.end(), hook_layer) ==
      cfg_.hook_layer_choices.end())
    throw PreconditionError("hook layer " + std::to_string(hook_layer) + " is not a configured choice");
  auto states = run(tokens, hook_layer, &hook, nullptr, nullptr);
  auto pooled = mean_pool(states);
  return {std::move(pooled), std::move(states)};
}

template <typename Scalar>
ForwardTrace<Scalar> Encoder<Scalar>::forward(const TokenBatch& tokens, int hook_layer,
                                              const HookFactory<Scalar>& make_hook) const {
  ForwardTrace<Scalar> trace;
  run(tokens, hook_layer, nullptr, make_hook ? &make_hook : nullptr, &trace);
  return trace;
}

template <typename Scalar>
void Encoder<Scalar>::backward(const ForwardTrace<Scalar>& trace, const HiddenStates<Scalar>& grad_final,
                               EncoderWeights<Scalar>& grads) const {
  const std::size_t batch = trace.tokens.batch();
  if (grad_final.batch() != batch) throw PreconditionError("gradient batch size mismatch");
  std::vector<Matrix<Scalar>> grad = grad_final.values;
  for (int l = cfg_.num_layers; l >= 1; --l) {
    if (trace.hook_layer == l) {
      for (std::size_t b = 0; b < batch; ++b)
        grad[b] = grad[b].array().colwise() * trace.hook.keep[b].array();
    }
    const auto li = static_cast<std::size_t>(l - 1);
    for (std::size_t b = 0; b < batch; ++b)
      grad[b] = detail::layer_backward(w_.layers[li], trace.cache[li][b], grad[b], cfg_.num_heads,
                                       grads.layers[li]);
  }
  for (std::size_t b = 0; b < batch; ++b) {
    const Matrix<Scalar> dz = detail::layer_norm_backward(trace.emb_ln[b], w_.emb_ln_gamma, grad[b],
                                                          grads.emb_ln_gamma, grads.emb_ln_beta);
    for (Eigen::Index t = 0; t < dz.rows(); ++t) {
      grads.token_embedding.row(trace.tokens.ids(static_cast<Eigen::Index>(b), t)) += dz.row(t);
      grads.position_embedding.row(t) += dz.row(t);
    }
  }
}

template <typename Scalar>
SequenceEmbedding<Scalar> mean_pool(const HiddenStates<Scalar>& states) {
  SequenceEmbedding<Scalar> pooled = SequenceEmbedding<Scalar>::Zero(
      static_cast<Eigen::Index>(states.batch()), states.dim());
  for (std::size_t b = 0; b < states.batch(); ++b) {
    const auto bi = static_cast<Eigen::Index>(b);
    Eigen::Index count = 0;
    for (Eigen::Index t = 0; t < states.length(); ++t) {
      if (!states.padding_mask(bi, t)) continue;
      pooled.row(bi) += states.values[b].row(t);
      ++count;
    }
    if (count == 0) throw PreconditionError("cannot pool a sequence that is entirely padding");
    pooled.row(bi) /= static_cast<Scalar>(count);
  }
  return pooled;
}

template <typename Scalar>
HiddenStates<Scalar> mean_pool_backward(const SequenceEmbedding<Scalar>& grad_pooled,
                                        const Mask& padding_mask, Eigen::Index dim) {
  HiddenStates<Scalar> g{{}, padding_mask};
  for (Eigen::Index b = 0; b < padding_mask.rows(); ++b) {
    Matrix<Scalar> m = Matrix<Scalar>::Zero(padding_mask.cols(), dim);
    const auto count = static_cast<Scalar>(padding_mask.row(b).count());
    for (Eigen::Index t = 0; t < padding_mask.cols(); ++t)
      if (padding_mask(b, t)) m.row(t) = grad_pooled.row(b) / count;
    g.values.push_back(std::move(m));
  }
  return g;
}

template <typename Scalar>
MlmResult<Scalar> mlm_loss(const EncoderWeights<Scalar>& weights,
                           const HiddenStates<Scalar>& final_states,
                           const std::vector<MaskedSequence>& masked,
                           EncoderWeights<Scalar>* head_grads) {
  if (masked.size() != final_states.batch())
    throw PreconditionError("masked batch size does not match the states");
  MlmResult<Scalar> result;
  if (head_grads) {
    result.grad_final.padding_mask = final_states.padding_mask;
    for (const auto& v : final_states.values)
      result.grad_final.values.push_back(Matrix<Scalar>::Zero(v.rows(), v.cols()));
  }

  std::size_t total = 0;
  for (const auto& m : masked) total += m.masked_positions.size();
  if (total == 0) {
    std::clog << "effcl: warning: batch has no masked positions; MLM loss set to 0\n";
    return result;
  }
  const Scalar inv_total = Scalar(1) / static_cast<Scalar>(total);
  const auto vocab = weights.mlm_weight.rows();

  Scalar loss = 0;
  for (std::size_t b = 0; b < masked.size(); ++b) {
    const auto& m = masked[b];
    for (std::size_t pos : m.masked_positions) {
      const auto t = static_cast<Eigen::Index>(pos);
      if (t >= final_states.length() || !final_states.padding_mask(static_cast<Eigen::Index>(b), t))
        throw PreconditionError("masked position falls outside the real tokens");
      const TokenId target = m.target_tokens[pos];
      if (target < 0 || target >= vocab) throw PreconditionError("MLM target outside the vocabulary");
      const auto h = final_states.values[b].row(t).transpose();
      Vector<Scalar> logits = weights.mlm_weight * h + weights.mlm_bias;
      const Scalar mx = logits.maxCoeff();
      const Scalar lse = mx + std::log((logits.array() - mx).exp().sum());
      loss += (lse - logits(target)) * inv_total;
      if (head_grads) {
        Vector<Scalar> dlogits = (logits.array() - lse).exp().matrix();
        dlogits(target) -= Scalar(1);
        dlogits *= inv_total;
        head_grads->mlm_weight.noalias() += dlogits * h.transpose();
        head_grads->mlm_bias += dlogits;
        result.grad_final.values[b].row(t).noalias() += (weights.mlm_weight.transpose() * dlogits).transpose();
      }
    }
  }
  result.loss = loss;
  return result;
}

}  // namespace effcl
