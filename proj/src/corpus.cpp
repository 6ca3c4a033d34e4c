#include "effcl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace effcl {

namespace {

template <typename F>
void for_each_token(std::string_view line, F&& f) {
  std::size_t i = 0;
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
  };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) f(line.substr(i, j - i));
    i = j;
  }
}

}  // namespace

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
  add("<mask>");
}

void Vocabulary::add(std::string token) {
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<std::string>& lines, std::size_t max_size) {
  if (max_size != 0 && max_size < kNumReserved)
    throw PreconditionError("vocabulary cap must leave room for the reserved tokens");

  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& line : lines) {
    for_each_token(line, [&](std::string_view tok) {
      auto [it, inserted] = counts.try_emplace(std::string(tok), 0);
      if (inserted) order.emplace_back(tok);
      ++it->second;
    });
  }

  Vocabulary vocab;
  if (max_size != 0 && order.size() > max_size - kNumReserved) {
    std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
      return counts.at(a) > counts.at(b);
    });
    order.resize(max_size - kNumReserved);
  }
  for (auto& tok : order) {
    if (vocab.index_.count(tok)) continue;  // a corpus token spelled like a reserved one
    vocab.add(std::move(tok));
  }
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.size() < kNumReserved || lines[0] != "<pad>" || lines[1] != "<unk>" ||
      lines[2] != "<mask>")
    throw CorpusError("vocabulary file " + path.string() + " lacks the reserved header");
  Vocabulary vocab;
  for (std::size_t i = kNumReserved; i < lines.size(); ++i) {
    if (vocab.index_.count(lines[i]))
      throw CorpusError("duplicate vocabulary entry '" + lines[i] + "'");
    vocab.add(lines[i]);
  }
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write vocabulary to " + path.string());
  for (const auto& tok : tokens_) out << tok << '\n';
}

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view line) const {
  std::vector<TokenId> ids;
  for_each_token(line, [&](std::string_view tok) { ids.push_back(id(tok)); });
  return ids;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::move(line));
  if (in.bad()) throw CorpusError("I/O error while reading " + path.string());
  return lines;
}

std::vector<Document> documents_from_lines(const std::vector<std::string>& lines,
                                           const Vocabulary& vocab, std::size_t min_tokens) {
  std::vector<Document> docs;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto ids = vocab.encode(lines[i]);
    if (ids.empty() || ids.size() < min_tokens) continue;
    docs.push_back({"line:" + std::to_string(i + 1), std::move(ids)});
  }
  return docs;
}

std::vector<Document> load_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                                  std::size_t min_tokens) {
  return documents_from_lines(read_lines(path), vocab, min_tokens);
}

TokenSequence sample_anchor(const Document& doc, std::size_t anchor_len, Rng& rng) {
  if (anchor_len == 0) throw PreconditionError("anchor_len must be positive");
  if (doc.tokens.size() < anchor_len)
    throw PreconditionError("document " + doc.id + " has " + std::to_string(doc.tokens.size()) +
                            " tokens, fewer than anchor_len " + std::to_string(anchor_len));
  std::uniform_int_distribution<std::size_t> pick(0, doc.tokens.size() - anchor_len);
  const std::size_t offset = pick(rng);
  TokenSequence seq;
  seq.tokens.assign(doc.tokens.begin() + static_cast<std::ptrdiff_t>(offset),
                    doc.tokens.begin() + static_cast<std::ptrdiff_t>(offset + anchor_len));
  seq.source_doc = doc.id;
  seq.offset = offset;
  return seq;
}

MaskedSequence apply_mlm_mask(const TokenSequence& seq, const MaskRecipe& recipe,
                              std::size_t vocab_size, Rng& rng) {
  if (!(recipe.mask_prob >= 0.0 && recipe.mask_prob <= 1.0))
    throw PreconditionError("mask_prob must lie in [0, 1]");
  if (recipe.replace_with_mask < 0.0 || recipe.replace_with_random < 0.0 ||
      recipe.replace_with_mask + recipe.replace_with_random > 1.0)
    throw PreconditionError("corruption fractions must be nonnegative and sum to at most 1");

  MaskedSequence out;
  out.target_tokens = seq.tokens;
  out.input_tokens = seq.tokens;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool has_regular = vocab_size > kNumReserved;
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
    if (!(unit(rng) < recipe.mask_prob)) continue;
    out.masked_positions.push_back(t);
    const double r = unit(rng);
    if (r < recipe.replace_with_mask) {
      out.input_tokens[t] = kMaskId;
    } else if (r < recipe.replace_with_mask + recipe.replace_with_random) {
      if (has_regular) {
        std::uniform_int_distribution<TokenId> pick(static_cast<TokenId>(kNumReserved),
                                                    static_cast<TokenId>(vocab_size - 1));
        out.input_tokens[t] = pick(rng);
      } else {
        out.input_tokens[t] = kMaskId;
      }
    }
  }
  return out;
}

}  // namespace effcl
