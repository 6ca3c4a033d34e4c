// effcl: continual-pretraining driver.
//
//   effcl pretrain --config run.json [--debug-dump steps.jsonl] [--max-steps K]
//   effcl compare  --config run.json --modes discrete,none --seeds 1,2,3,4,5 [--first-k 300]
//   effcl synth-corpus --out corpus.txt [--docs 2000]
//
// Exit codes: 0 ok, 2 config error, 3 corpus or I/O error, 4 numerical abort.

#include "effcl/checkpoint.hpp"
#include "effcl/config.hpp"
#include "effcl/synth.hpp"
#include "effcl/trainer.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitCorpus = 3;
constexpr int kExitNumerical = 4;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EfficientCL-style continual pretraining at desk scale"};
  app.require_subcommand(1);

  std::string config_path, debug_dump, modes = "discrete,none", seeds = "1,2,3,4,5", out_path;
  std::size_t max_steps = 0, first_k = 300, window = 50;
  bool full_runs = false, quiet = false;
  effcl::SynthCorpusOptions synth;

  auto* pretrain = app.add_subcommand("pretrain", "Train once and write trace.csv and encoder.ckpt");
  pretrain->add_option("--config", config_path, "JSON training config")->required();
  pretrain->add_option("--debug-dump", debug_dump, "Write per-step augmentation draws as JSON lines");
  pretrain->add_option("--max-steps", max_steps, "Stop after this many steps (0: full run)");
  pretrain->add_flag("--quiet", quiet, "No progress output");

  auto* compare = app.add_subcommand("compare", "Train every (curriculum, seed) pair and summarise losses");
  compare->add_option("--config", config_path, "JSON training config")->required();
  compare->add_option("--modes", modes, "Comma-separated curricula: discrete,continuous,none");
  compare->add_option("--seeds", seeds, "Comma-separated seeds");
  compare->add_option("--first-k", first_k, "Steps averaged per run");
  compare->add_option("--window", window, "Window width for windows.csv");
  compare->add_flag("--full", full_runs, "Run complete epochs instead of stopping at --first-k");
  compare->add_flag("--quiet", quiet, "No progress output");

  auto* synth_cmd = app.add_subcommand("synth-corpus", "Write a topic-mixture toy corpus");
  synth_cmd->add_option("--out", out_path, "Output corpus file")->required();
  synth_cmd->add_option("--docs", synth.documents, "Number of documents");
  synth_cmd->add_option("--vocab", synth.vocabulary, "Vocabulary size");
  synth_cmd->add_option("--topics", synth.topics, "Number of topics");
  synth_cmd->add_option("--min-len", synth.min_length, "Minimum document length");
  synth_cmd->add_option("--max-len", synth.max_length, "Maximum document length");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth_cmd) {
      effcl::write_lines(out_path, effcl::synthesize_corpus(synth));
      return 0;
    }

    const effcl::TrainConfig config = effcl::load_config(config_path);
    std::ostream* log = quiet ? nullptr : &std::cerr;

    if (*pretrain) {
      effcl::RunOptions options;
      if (max_steps > 0) options.max_steps = max_steps;
      if (!debug_dump.empty()) options.debug_dump = debug_dump;
      options.log = log;
      const auto result = effcl::run_pretraining(config, options);
      std::cout << "wrote " << result.rows.size() << " steps to " << result.trace_path.string() << "\n"
                << "checkpoint " << result.checkpoint_path.string() << "\n";
      return 0;
    }

    effcl::CompareOptions options;
    for (const auto& m : split_list(modes)) options.modes.push_back(effcl::parse_curriculum_mode(m));
    for (const auto& s : split_list(seeds)) {
      try {
        options.seeds.push_back(std::stoull(s));
      } catch (const std::exception&) {
        throw effcl::ConfigError("bad seed '" + s + "'");
      }
    }
    options.first_k = first_k;
    options.window = window;
    options.full_runs = full_runs;
    options.log = log;
    const auto report = effcl::compare_curricula(config, options);
    std::cout << "mode,seed,mean_total_loss_first_" << first_k << "\n";
    for (const auto& r : report.summary)
      std::cout << effcl::to_string(r.mode) << ',' << r.seed << ',' << r.mean_total << "\n";
    std::cout << "summary " << report.summary_path.string() << "\n";
    return 0;
  } catch (const effcl::ConfigError& e) {
    std::cerr << "effcl: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const effcl::CorpusError& e) {
    std::cerr << "effcl: corpus error: " << e.what() << "\n";
    return kExitCorpus;
  } catch (const effcl::CheckpointError& e) {
    std::cerr << "effcl: checkpoint error: " << e.what() << "\n";
    return kExitCorpus;
  } catch (const effcl::NumericalError& e) {
    std::cerr << "effcl: numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "effcl: I/O error: " << e.what() << "\n";
    return kExitCorpus;
  } catch (const std::exception& e) {
    std::cerr << "effcl: error: " << e.what() << "\n";
    return 1;
  }
}
