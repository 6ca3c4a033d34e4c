#pragma once

#include "effcl/augment.hpp"
#include "effcl/config.hpp"
#include "effcl/contrastive.hpp"
#include "effcl/corpus.hpp"
#include "effcl/encoder.hpp"
#include "effcl/optim.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace effcl {

/// Non-finite loss or gradient during training.
class NumericalAbort : public NumericalError {
public:
  using NumericalError::NumericalError;
};

inline constexpr const char* kTraceHeader =
    "step,mlm_loss,contrastive_loss,total_loss,augmentation_level,hook_layer,learning_rate_now";

struct LossTraceRow {
  std::size_t step = 0;
  double mlm_loss = 0;
  double contrastive_loss = 0;
  double total_loss = 0;
  double augmentation_level = 0;
  int hook_layer = 0;
  double learning_rate_now = 0;
};

/// One CSV line (no newline), shortest round-trip formatting for doubles.
std::string format_trace_row(const LossTraceRow& row);
LossTraceRow parse_trace_row(const std::string& line);

// ---------------------------------------------------------------------------
// Objective

/// Inputs of one evaluation of L_total = L_MLM + L_contrastive.
template <typename Scalar>
struct ObjectiveInputs {
  TokenBatch anchors;
  TokenBatch masked_inputs;
  std::vector<MaskedSequence> masked;
  int hook_layer = 0;
  HookFactory<Scalar> make_hook;  // augmentation of the positive pass
  Scalar temperature = Scalar(0.05);
};

template <typename Scalar>
struct ObjectiveResult {
  Scalar mlm = 0;
  Scalar contrastive = 0;
  Scalar total = 0;
  SequenceEmbedding<Scalar> anchor_embedding, positive_embedding;
  EncoderWeights<Scalar> encoder_grads;  // set when gradients were requested
  ProjectionHead<Scalar> head_grads;
};

/// Anchor pass (no hook), positive pass (make_hook at hook_layer) and masked
/// pass, sharing one set of weights. Pairs are laid out anchor/positive.
template <typename Scalar>
ObjectiveResult<Scalar> evaluate_objective(const Encoder<Scalar>& encoder, const ProjectionHead<Scalar>& head,
                                           const ObjectiveInputs<Scalar>& in, bool with_grads) {
  const auto anchor = encoder.forward(in.anchors);
  const auto positive = encoder.forward(in.anchors, in.hook_layer, in.make_hook);
  const auto masked = encoder.forward(in.masked_inputs);

  ObjectiveResult<Scalar> r;
  r.anchor_embedding = mean_pool(anchor.final_states);
  r.positive_embedding = mean_pool(positive.final_states);
  const Eigen::Index n = r.anchor_embedding.rows();
  const Eigen::Index d = r.anchor_embedding.cols();

  if (with_grads) {
    r.encoder_grads = EncoderWeights<Scalar>::zeros(encoder.config());
    r.head_grads = ProjectionHead<Scalar>::zeros(head.w1.cols(), head.w1.rows(), head.w2.rows());
  }
  auto mlm = mlm_loss(encoder.weights(), masked.final_states, in.masked, with_grads ? &r.encoder_grads : nullptr);
  r.mlm = mlm.loss;

  Matrix<Scalar> pairs(2 * n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    pairs.row(2 * i) = r.anchor_embedding.row(i);
    pairs.row(2 * i + 1) = r.positive_embedding.row(i);
  }
  ContrastiveBatch<Scalar> batch{project(pairs, head), in.temperature};
  Matrix<Scalar> grad_z;
  r.contrastive = nt_xent_loss(batch, with_grads ? &grad_z : nullptr);
  r.total = r.mlm + r.contrastive;
  if (!with_grads) return r;

  const Matrix<Scalar> grad_pairs = project_backward(pairs, head, grad_z, r.head_grads);
  Matrix<Scalar> grad_anchor(n, d), grad_positive(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    grad_anchor.row(i) = grad_pairs.row(2 * i);
    grad_positive.row(i) = grad_pairs.row(2 * i + 1);
  }
  encoder.backward(anchor, mean_pool_backward(grad_anchor, in.anchors.mask, d), r.encoder_grads);
  encoder.backward(positive, mean_pool_backward(grad_positive, in.anchors.mask, d), r.encoder_grads);
  encoder.backward(masked, mlm.grad_final, r.encoder_grads);
  return r;
}

/// Every trainable tensor: encoder (zip_tensors order) then projection head.
template <typename Scalar>
ParameterViews<Scalar> parameter_views(EncoderWeights<Scalar>& w, ProjectionHead<Scalar>& h) {
  ParameterViews<Scalar> views;
  zip_tensors([&](const std::string&, auto& t) { views.add(t); }, w);
  zip_tensors_head([&](const std::string&, auto& t) { views.add(t); }, h);
  return views;
}

// ---------------------------------------------------------------------------
// Training

/// Independent random streams derived from the run seed.
struct RngStreams {
  Rng init, data, mask, hook, augment, curriculum;
  explicit RngStreams(std::uint64_t seed);
};

Rng make_stream(std::uint64_t seed, std::uint64_t stream);

struct TrainState {
  TrainConfig config;  // encoder.vocab_size resolved
  Encoder<double> encoder;
  ProjectionHead<double> head;
  AdamWMoments<double> moments;
  RngStreams rng;

  /// Fresh weights from the config seed. config.encoder.vocab_size must be set.
  static TrainState create(const TrainConfig& config);
};

/// Everything drawn during one step, for audit and replay.
struct StepTrace {
  std::size_t step = 0;
  std::vector<TokenSequence> anchors;
  std::vector<MaskedSequence> masked;
  int hook_layer = 0;
  double level = 0;
  AugmentRecord<double> augmentation;
  LossReport loss;
};

struct StepOptions {
  std::optional<double> level_override;  // bypasses the curriculum, range [0, 1]
  StepTrace* trace = nullptr;
};

/// One optimizer step on a batch of documents (one anchor each).
LossTraceRow train_step(const std::vector<const Document*>& batch, std::size_t step, std::size_t total_steps,
                        TrainState& state, const StepOptions& options = {});

/// JSON line {step, hook_layer, level, span_start, span_len, alpha, anchors, mlm_inputs, mlm_positions}.
std::string debug_dump_line(const StepTrace& trace);

struct RunOptions {
  std::optional<std::size_t> max_steps;  // stop early; the schedule still spans the full run
  std::optional<std::filesystem::path> debug_dump;
  std::ostream* log = nullptr;
};

struct RunResult {
  std::vector<LossTraceRow> rows;
  std::size_t total_steps = 0;
  std::size_t num_documents = 0;
  std::filesystem::path trace_path, checkpoint_path, vocab_path;
};

std::size_t total_steps_for(std::size_t num_documents, int batch_size, int epochs);

/// Loads the corpus, trains, and writes trace.csv, encoder.ckpt and vocab.txt
/// into config.output_dir.
RunResult run_pretraining(const TrainConfig& config, const RunOptions& options = {});

struct CompareOptions {
  std::vector<CurriculumMode> modes;
  std::vector<std::uint64_t> seeds;
  std::size_t first_k = 300;
  std::size_t window = 50;
  bool full_runs = false;  // otherwise each run stops after first_k steps
  std::ostream* log = nullptr;
};

struct CompareRow {
  CurriculumMode mode = CurriculumMode::Discrete;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  double mean_total = 0;
  double mean_mlm = 0;
  double mean_contrastive = 0;
};

struct WindowRow {
  CurriculumMode mode = CurriculumMode::Discrete;
  std::size_t window_start = 0;
  std::size_t window_end = 0;
  double mean_total = 0;  // over steps in the window and all seeds
};

struct CompareReport {
  std::vector<CompareRow> summary;  // |modes| x |seeds|
  std::vector<WindowRow> windows;
  std::filesystem::path summary_path, windows_path;
};

/// Runs every (mode, seed) pair under config.output_dir/<mode>/seed_<seed> and
/// writes summary.csv and windows.csv into config.output_dir.
CompareReport compare_curricula(const TrainConfig& config, const CompareOptions& options);

}  // namespace effcl
