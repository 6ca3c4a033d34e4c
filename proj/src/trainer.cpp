#include "effcl/trainer.hpp"

#include "effcl/checkpoint.hpp"
#include "effcl/curriculum.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

namespace effcl {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw PreconditionError("bad number '" + s + "' in trace row");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::string diagnostics(std::size_t step, double level, int layer, double mlm, double con) {
  std::ostringstream msg;
  msg << "non-finite loss at step " << step << " (level=" << level << ", hook_layer=" << layer
      << ", mlm=" << mlm << ", contrastive=" << con << ")";
  return msg.str();
}

}  // namespace

std::string format_trace_row(const LossTraceRow& row) {
  return std::to_string(row.step) + ',' + shortest(row.mlm_loss) + ',' + shortest(row.contrastive_loss) + ',' +
         shortest(row.total_loss) + ',' + shortest(row.augmentation_level) + ',' + std::to_string(row.hook_layer) +
         ',' + shortest(row.learning_rate_now);
}

LossTraceRow parse_trace_row(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 7) throw PreconditionError("trace row must have 7 fields");
  LossTraceRow row;
  row.step = static_cast<std::size_t>(std::stoull(f[0]));
  row.mlm_loss = parse_double(f[1]);
  row.contrastive_loss = parse_double(f[2]);
  row.total_loss = parse_double(f[3]);
  row.augmentation_level = parse_double(f[4]);
  row.hook_layer = std::stoi(f[5]);
  row.learning_rate_now = parse_double(f[6]);
  return row;
}

Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xFFFFFFFFu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

RngStreams::RngStreams(std::uint64_t seed)
    : init(make_stream(seed, 0)),
      data(make_stream(seed, 1)),
      mask(make_stream(seed, 2)),
      hook(make_stream(seed, 3)),
      augment(make_stream(seed, 4)),
      curriculum(make_stream(seed, 5)) {}

TrainState TrainState::create(const TrainConfig& config) {
  config.validate();
  if (config.encoder.vocab_size < 1) throw ConfigError("encoder.vocab_size is unresolved");
  RngStreams rng(config.seed);
  Encoder<double> encoder(config.encoder, rng.init);
  const Eigen::Index d = config.encoder.hidden_dim;
  auto head = ProjectionHead<double>::initialized(d, d, d, rng.init);
  TrainState state{config, std::move(encoder), std::move(head), {}, std::move(rng)};
  state.moments = AdamWMoments<double>::zeros_like(parameter_views(state.encoder.weights(), state.head));
  return state;
}

LossTraceRow train_step(const std::vector<const Document*>& batch, std::size_t step, std::size_t total_steps,
                        TrainState& state, const StepOptions& options) {
  if (batch.empty()) throw PreconditionError("empty training batch");
  const TrainConfig& cfg = state.config;
  const auto anchor_len = static_cast<std::size_t>(cfg.anchor_len);

  std::vector<TokenSequence> anchors;
  for (const Document* doc : batch) anchors.push_back(sample_anchor(*doc, anchor_len, state.rng.data));
  const MaskRecipe recipe{cfg.mask_prob};
  std::vector<MaskedSequence> masked;
  for (const auto& a : anchors)
    masked.push_back(apply_mlm_mask(a, recipe, static_cast<std::size_t>(cfg.encoder.vocab_size), state.rng.mask));

  const AugmentationLevel level =
      options.level_override ? AugmentationLevel::override_level(*options.level_override)
                             : AugmentationLevel::curriculum(level_at(cfg.curriculum, step, total_steps,
                                                                      state.rng.curriculum));
  const int hook_layer = sample_hook_layer(cfg.encoder, state.rng.hook);

  AugmentRecord<double> record;
  ObjectiveInputs<double> inputs;
  inputs.anchors = TokenBatch::from_anchors(anchors);
  inputs.masked_inputs = TokenBatch::from_masked(masked);
  inputs.masked = masked;
  inputs.hook_layer = hook_layer;
  inputs.temperature = cfg.temperature;
  inputs.make_hook = [&](const HiddenStates<double>& states) {
    augment(states, level, state.rng.augment, &record);
    return record.frozen(states);
  };

  auto abort = [&](const std::exception& e) {
    return NumericalAbort(std::string(e.what()) + " at step " + std::to_string(step) +
                          " (level=" + std::to_string(level.value()) + ", hook_layer=" + std::to_string(hook_layer) + ")");
  };
  ObjectiveResult<double> result;
  try {
    result = evaluate_objective(state.encoder, state.head, inputs, true);
  } catch (const DegenerateEmbedding& e) {
    throw abort(e);
  } catch (const NumericalError& e) {
    throw abort(e);
  }
  if (!std::isfinite(result.total))
    throw NumericalAbort(diagnostics(step, level.value(), hook_layer, result.mlm, result.contrastive));
  const LossReport loss = combined_loss(result.mlm, result.contrastive);

  auto grads = parameter_views(result.encoder_grads, result.head_grads);
  try {
    clip_gradients(grads, cfg.max_grad_norm);
  } catch (const NumericalError& e) {
    throw abort(e);
  }
  const double lr = slanted_triangular_lr(step, total_steps, cfg.learning_rate, cfg.warmup_frac);
  auto params = parameter_views(state.encoder.weights(), state.head);
  adamw_update(params, grads, state.moments, step + 1, lr, cfg.weight_decay);

  if (options.trace) {
    StepTrace& t = *options.trace;
    t.step = step;
    t.anchors = std::move(anchors);
    t.masked = std::move(masked);
    t.hook_layer = hook_layer;
    t.level = level.value();
    t.augmentation = std::move(record);
    t.loss = loss;
  }
  return {step, loss.mlm, loss.contrastive, loss.total, level.value(), hook_layer, lr};
}

std::string debug_dump_line(const StepTrace& t) {
  nlohmann::json starts = nlohmann::json::array(), lens = nlohmann::json::array(),
                 alphas = nlohmann::json::array(), anchors = nlohmann::json::array(),
                 inputs = nlohmann::json::array(), positions = nlohmann::json::array();
  for (const auto& s : t.augmentation.spans) {
    starts.push_back(s.start);
    lens.push_back(s.length);
  }
  for (const auto& d : t.augmentation.draws) alphas.push_back(d.alpha);
  for (const auto& a : t.anchors) anchors.push_back({{"doc", a.source_doc}, {"offset", a.offset}});
  for (const auto& m : t.masked) {
    inputs.push_back(m.input_tokens);
    positions.push_back(m.masked_positions);
  }
  const nlohmann::json line{{"step", t.step},          {"hook_layer", t.hook_layer}, {"level", t.level},
                            {"span_start", starts},    {"span_len", lens},           {"alpha", alphas},
                            {"anchors", anchors},      {"mlm_inputs", inputs},       {"mlm_positions", positions},
                            {"mlm_loss", t.loss.mlm}, {"contrastive_loss", t.loss.contrastive},
                            {"total_loss", t.loss.total},
                            {"contrastive_loss_per_instance",
                             t.anchors.empty() ? 0.0 : t.loss.contrastive / (2.0 * static_cast<double>(t.anchors.size()))}};
  return line.dump();
}

std::size_t total_steps_for(std::size_t num_documents, int batch_size, int epochs) {
  const auto n = static_cast<std::size_t>(batch_size);
  return (num_documents + n - 1) / n * static_cast<std::size_t>(epochs);
}

RunResult run_pretraining(const TrainConfig& config, const RunOptions& options) {
  config.validate();
  if (config.output_dir.empty()) throw ConfigError("output_dir is empty");
  if (config.corpus_path.empty()) throw ConfigError("corpus_path is empty");

  const auto lines = read_lines(config.corpus_path);
  const Vocabulary vocab = Vocabulary::build(lines, static_cast<std::size_t>(config.encoder.vocab_size));
  const auto docs = documents_from_lines(lines, vocab, static_cast<std::size_t>(config.anchor_len) + 1);
  if (docs.empty())
    throw CorpusError("no document in " + config.corpus_path + " has more than " +
                      std::to_string(config.anchor_len) + " tokens");

  TrainConfig resolved = config;
  resolved.encoder.vocab_size = static_cast<int>(vocab.size());
  TrainState state = TrainState::create(resolved);

  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);
  RunResult result;
  result.num_documents = docs.size();
  result.total_steps = total_steps_for(docs.size(), config.batch_size, config.epochs);
  result.trace_path = out_dir / "trace.csv";
  result.checkpoint_path = out_dir / "encoder.ckpt";
  result.vocab_path = out_dir / "vocab.txt";
  vocab.save(result.vocab_path);

  std::ofstream trace(result.trace_path, std::ios::binary);
  if (!trace) throw CorpusError("cannot write " + result.trace_path.string());
  trace << kTraceHeader << '\n';
  std::ofstream dump;
  if (options.debug_dump) {
    dump.open(*options.debug_dump, std::ios::binary);
    if (!dump) throw CorpusError("cannot write " + options.debug_dump->string());
  }

  const std::size_t limit = options.max_steps ? std::min(*options.max_steps, result.total_steps) : result.total_steps;
  const auto n = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(docs.size());
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs && step < limit; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng.data);
    for (std::size_t begin = 0; begin < order.size() && step < limit; begin += n, ++step) {
      std::vector<const Document*> batch;
      for (std::size_t i = begin; i < std::min(begin + n, order.size()); ++i) batch.push_back(&docs[order[i]]);
      StepTrace st;
      StepOptions so;
      if (options.debug_dump) so.trace = &st;
      LossTraceRow row;
      try {
        row = train_step(batch, step, result.total_steps, state, so);
      } catch (const NumericalAbort& e) {
        std::ofstream diag(out_dir / "abort.txt", std::ios::binary);
        diag << e.what() << '\n';
        throw;
      }
      trace << format_trace_row(row) << '\n';
      if (options.debug_dump) dump << debug_dump_line(st) << '\n';
      if (options.log && (step % 50 == 0 || step + 1 == limit))
        *options.log << "step " << step << "/" << result.total_steps << " total=" << row.total_loss
                     << " level=" << row.augmentation_level << '\n';
      result.rows.push_back(row);
    }
  }
  trace.flush();
  save_checkpoint(result.checkpoint_path, state.config.encoder, state.encoder.weights());
  return result;
}

CompareReport compare_curricula(const TrainConfig& config, const CompareOptions& options) {
  if (options.modes.size() < 2) throw ConfigError("compare needs at least 2 curriculum modes");
  if (options.seeds.size() < 3) throw ConfigError("compare needs at least 3 seeds");
  if (options.first_k == 0 || options.window == 0) throw ConfigError("first_k and window must be positive");

  const std::filesystem::path base(config.output_dir);
  CompareReport report;
  std::vector<std::vector<std::vector<double>>> totals(options.modes.size());
  for (std::size_t mi = 0; mi < options.modes.size(); ++mi) {
    for (const auto seed : options.seeds) {
      TrainConfig run_cfg = config;
      run_cfg.curriculum.mode = options.modes[mi];
      run_cfg.seed = seed;
      run_cfg.output_dir = (base / to_string(options.modes[mi]) / ("seed_" + std::to_string(seed))).string();
      RunOptions ro;
      if (!options.full_runs) ro.max_steps = options.first_k;
      if (options.log) *options.log << "compare: mode=" << to_string(options.modes[mi]) << " seed=" << seed << '\n';
      const RunResult run = run_pretraining(run_cfg, ro);

      CompareRow row;
      row.mode = options.modes[mi];
      row.seed = seed;
      row.steps = std::min(options.first_k, run.rows.size());
      for (std::size_t s = 0; s < row.steps; ++s) {
        row.mean_total += run.rows[s].total_loss;
        row.mean_mlm += run.rows[s].mlm_loss;
        row.mean_contrastive += run.rows[s].contrastive_loss;
      }
      if (row.steps > 0) {
        row.mean_total /= static_cast<double>(row.steps);
        row.mean_mlm /= static_cast<double>(row.steps);
        row.mean_contrastive /= static_cast<double>(row.steps);
      }
      report.summary.push_back(row);
      std::vector<double> t;
      for (const auto& r : run.rows) t.push_back(r.total_loss);
      totals[mi].push_back(std::move(t));
    }
  }

  for (std::size_t mi = 0; mi < options.modes.size(); ++mi) {
    std::size_t shortest_run = SIZE_MAX;
    for (const auto& t : totals[mi]) shortest_run = std::min(shortest_run, t.size());
    for (std::size_t start = 0; start < shortest_run; start += options.window) {
      const std::size_t end = std::min(start + options.window, shortest_run);
      double sum = 0;
      for (const auto& t : totals[mi])
        for (std::size_t s = start; s < end; ++s) sum += t[s];
      report.windows.push_back(
          {options.modes[mi], start, end, sum / static_cast<double>((end - start) * totals[mi].size())});
    }
  }

  std::filesystem::create_directories(base);
  report.summary_path = base / "summary.csv";
  report.windows_path = base / "windows.csv";
  std::ofstream summary(report.summary_path, std::ios::binary);
  summary << "mode,seed,steps,mean_total_loss,mean_mlm_loss,mean_contrastive_loss\n";
  for (const auto& r : report.summary)
    summary << to_string(r.mode) << ',' << r.seed << ',' << r.steps << ',' << shortest(r.mean_total) << ','
            << shortest(r.mean_mlm) << ',' << shortest(r.mean_contrastive) << '\n';
  std::ofstream windows(report.windows_path, std::ios::binary);
  windows << "mode,window_start,window_end,mean_total_loss\n";
  for (const auto& w : report.windows)
    windows << to_string(w.mode) << ',' << w.window_start << ',' << w.window_end << ',' << shortest(w.mean_total)
            << '\n';
  if (!summary || !windows) throw CorpusError("cannot write compare report into " + base.string());
  return report;
}

}  // namespace effcl
