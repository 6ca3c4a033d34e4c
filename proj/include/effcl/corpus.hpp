#pragma once

#include "effcl/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace effcl {

class CorpusError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kMaskId = 2;
inline constexpr std::size_t kNumReserved = 3;

/// Whitespace vocabulary. IDs 0..2 are PAD, UNK and MASK; the rest follow in
/// order of first appearance (or frequency rank when capped).
class Vocabulary {
public:
  Vocabulary();

  /// Builds from raw corpus lines. max_size == 0 keeps every distinct token;
  /// otherwise the (max_size - 3) most frequent tokens are kept, ties broken by
  /// first appearance.
  static Vocabulary build(const std::vector<std::string>& lines, std::size_t max_size = 0);

  /// One token per line, line number = ID.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  std::vector<TokenId> encode(std::string_view line) const;

private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct Document {
  std::string id;
  std::vector<TokenId> tokens;
};

/// Fixed-length contiguous window of a document.
struct TokenSequence {
  std::vector<TokenId> tokens;
  std::string source_doc;
  std::size_t offset = 0;
};

struct MaskedSequence {
  std::vector<TokenId> input_tokens;
  std::vector<TokenId> target_tokens;
  std::vector<std::size_t> masked_positions;  // ascending
};

/// BERT-style corruption recipe for selected positions.
struct MaskRecipe {
  double mask_prob = 0.15;
  double replace_with_mask = 0.8;
  double replace_with_random = 0.1;
};

std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Documents with at least min_tokens tokens, in file order. Blank lines are
/// not documents.
std::vector<Document> load_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                                  std::size_t min_tokens);

std::vector<Document> documents_from_lines(const std::vector<std::string>& lines,
                                           const Vocabulary& vocab, std::size_t min_tokens);

/// Uniform offset in [0, len - anchor_len].
TokenSequence sample_anchor(const Document& doc, std::size_t anchor_len, Rng& rng);

MaskedSequence apply_mlm_mask(const TokenSequence& seq, const MaskRecipe& recipe,
                              std::size_t vocab_size, Rng& rng);

}  // namespace effcl
