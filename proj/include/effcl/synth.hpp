#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace effcl {

/// Topic-mixture toy corpus: each document draws most tokens from a Zipfian
/// distribution over its topic's word subset and the rest from a Zipfian
/// background over the whole vocabulary.
struct SynthCorpusOptions {
  std::size_t documents = 2000;
  std::size_t vocabulary = 400;
  std::size_t topics = 10;
  std::size_t words_per_topic = 40;
  std::size_t min_length = 80;
  std::size_t max_length = 160;
  double topic_share = 0.7;
  std::uint64_t seed = 7;
};

std::vector<std::string> synthesize_corpus(const SynthCorpusOptions& options);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

}  // namespace effcl
