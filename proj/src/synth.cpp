#include "effcl/synth.hpp"

#include "effcl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace effcl {

namespace {

std::discrete_distribution<std::size_t> zipf(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / static_cast<double>(i + 1);
  return {w.begin(), w.end()};
}

}  // namespace

std::vector<std::string> synthesize_corpus(const SynthCorpusOptions& o) {
  if (o.vocabulary == 0 || o.topics == 0 || o.words_per_topic == 0 || o.words_per_topic > o.vocabulary)
    throw PreconditionError("synthetic corpus sizes must be positive and words_per_topic <= vocabulary");
  if (o.min_length == 0 || o.min_length > o.max_length) throw PreconditionError("bad synthetic length range");

  Rng rng(o.seed);
  std::vector<std::vector<std::size_t>> topic_words(o.topics);
  std::vector<std::size_t> all(o.vocabulary);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (auto& words : topic_words) {
    std::shuffle(all.begin(), all.end(), rng);
    words.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(o.words_per_topic));
  }

  auto topic_dist = zipf(o.words_per_topic);
  auto background = zipf(o.vocabulary);
  std::uniform_int_distribution<std::size_t> pick_topic(0, o.topics - 1);
  std::uniform_int_distribution<std::size_t> pick_len(o.min_length, o.max_length);
  std::bernoulli_distribution from_topic(o.topic_share);

  std::vector<std::string> lines;
  lines.reserve(o.documents);
  for (std::size_t d = 0; d < o.documents; ++d) {
    const auto& words = topic_words[pick_topic(rng)];
    const std::size_t len = pick_len(rng);
    std::string line;
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t w = from_topic(rng) ? words[topic_dist(rng)] : background(rng);
      if (t) line += ' ';
      line += 'w' + std::to_string(w);
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace effcl
