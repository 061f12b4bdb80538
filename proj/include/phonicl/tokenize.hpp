#pragma once

// Token streams for retrieval. Three kinds:
//   ws   split on runs of Unicode whitespace
//   cs   one token per non-whitespace scalar
//   bpe  byte-pair encoding driven by a serialized tokenizer.json
//
// The BPE loader honours the file's own normalizer and pre-tokenizer. It
// supports the normalizers NFC/NFD/NFKC/NFKD, Lowercase, Prepend, Replace
// (string patterns) and Sequence; the pre-tokenizers ByteLevel,
// Split (the GPT-2 and Llama-3 split expressions, or a literal string),
// Metaspace, WhitespaceSplit and Sequence. Anything else is rejected at load
// time. Special tokens and post-processors are never applied.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace phonicl {

enum class TokenizerKind { Whitespace, PerCharacter, Bpe };

struct TokenStream {
  std::vector<std::string> tokens;
  /// Vocabulary ids, parallel to `tokens`; filled for BPE only.
  std::vector<std::int32_t> ids;
  /// Identity of the tokenizer that produced the stream (empty if built by hand).
  std::string tokenizer_id;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
};

namespace detail {
class BpeModel;
}

class Tokenizer {
 public:
  static Tokenizer whitespace();
  static Tokenizer per_character();
  /// Throws Error(VocabParseError) for missing, unparsable or unsupported files.
  static Tokenizer load_bpe(const std::filesystem::path& path);
  static Tokenizer bpe_from_json(std::string_view json_text, std::string_view label = "inline");

  /// `kind` is one of "ws", "cs", "bpe"; `vocab_path` is required for "bpe".
  static Tokenizer from_spec(std::string_view kind, const std::filesystem::path& vocab_path = {});

  TokenizerKind kind() const noexcept { return kind_; }

  /// Stable identity recorded in index snapshots: "ws", "cs" or
  /// "bpe:<first 16 hex digits of the file's SHA-256>".
  const std::string& id() const noexcept { return id_; }

  TokenStream tokenize(std::string_view text) const;

 private:
  TokenStream tokenize_raw(std::string_view text) const;

  Tokenizer(TokenizerKind kind, std::string id, std::shared_ptr<const detail::BpeModel> bpe)
      : kind_(kind), id_(std::move(id)), bpe_(std::move(bpe)) {}

  TokenizerKind kind_;
  std::string id_;
  std::shared_ptr<const detail::BpeModel> bpe_;
};

/// Pre-tokenization splitters, exposed for testing.
std::vector<std::string> split_gpt2_pattern(std::string_view text);
std::vector<std::string> split_llama3_pattern(std::string_view text);

}  // namespace phonicl
