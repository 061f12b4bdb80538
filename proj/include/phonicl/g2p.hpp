#pragma once

// Rule-based grapheme-to-phoneme and romanization transducer.
//
// A profile is a directory of per-language files:
//   <lang>.map.csv     "orth,phon" pairs, no header (RFC 4180 quoting)
//   <lang>.pre.rules   rewrite rules applied before mapping
//   <lang>.post.rules  rewrite rules applied after mapping
//   <lang>.dict.csv    "word,ipa" pairs for logographic scripts
//
// Rule syntax, one per line ("#" starts a comment line):
//   source -> target / left _ right
// The "/ left _ right" part is optional. source and target are literal
// strings; target may be empty. Contexts are sequences of
//   x        a literal scalar
//   [abc]    a class; "a-z" ranges and a leading "^" negation are allowed
//   #        a word boundary (string edge or adjacent whitespace), zero-width
// Backslash escapes the next scalar anywhere in a rule.
//
// Each rule makes one left-to-right pass over the whole string, replacing
// non-overlapping leftmost matches. Contexts are tested against the string as
// it was before that rule's pass. Rules run in file order.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace phonicl::g2p {

/// Grapheme table with greedy longest-match lookup.
class MappingTable {
 public:
  MappingTable() = default;

  /// Throws Error(InvalidArgument) on an empty or duplicate key.
  static MappingTable from_pairs(std::vector<std::pair<std::string, std::string>> pairs);

  /// Entries sorted by descending key length (in scalars), then key bytes.
  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept {
    return entries_;
  }
  bool empty() const noexcept { return entries_.empty(); }

  /// Longest key that is a prefix of text[pos..]; returns (byte length, value).
  std::optional<std::pair<std::size_t, const std::string*>> longest_match(
      std::string_view text, std::size_t pos) const;

  /// Greedy left-to-right rewrite; unmatched scalars are copied through.
  std::string apply(std::string_view text) const;

  friend bool operator==(const MappingTable& a, const MappingTable& b) {
    return a.entries_ == b.entries_;
  }

 private:
  struct Node {
    std::map<unsigned char, int> next;
    int entry = -1;
  };

  std::vector<std::pair<std::string, std::string>> entries_;
  std::vector<Node> trie_;
};

/// Context pattern from the restricted rule grammar.
class Pattern {
 public:
  struct Literal {
    char32_t cp;
  };
  struct CharClass {
    std::vector<std::pair<char32_t, char32_t>> ranges;
    bool negated = false;
    bool contains(char32_t cp) const noexcept;
  };
  struct Boundary {};
  using Element = std::variant<Literal, CharClass, Boundary>;

  Pattern() = default;

  /// Throws std::invalid_argument describing the syntax problem.
  static Pattern parse(std::string_view text);

  const std::string& text() const noexcept { return text_; }
  bool empty() const noexcept { return elements_.empty(); }

  /// Does the pattern match immediately before `pos` (scanning leftwards)?
  bool matches_before(std::u32string_view s, std::size_t pos) const;
  /// Does the pattern match starting at `pos`?
  bool matches_after(std::u32string_view s, std::size_t pos) const;

  friend bool operator==(const Pattern& a, const Pattern& b) { return a.text_ == b.text_; }

 private:
  std::string text_;
  std::vector<Element> elements_;
};

enum class Phase { Pre, Post };

struct RewriteRule {
  std::string source;
  std::string target;
  Pattern left;
  Pattern right;
  Phase phase = Phase::Pre;

  friend bool operator==(const RewriteRule&, const RewriteRule&) = default;
};

/// Parses one rule line. Throws std::invalid_argument on bad syntax.
RewriteRule parse_rule(std::string_view line, Phase phase);
std::string format_rule(const RewriteRule& rule);

/// Parses a whole rules file; comment and blank lines are skipped.
std::vector<RewriteRule> parse_rules(std::string_view content, Phase phase,
                                     const std::string& file_label);

/// One pass of a single rule.
std::string apply_rule(const RewriteRule& rule, std::string_view text);

enum class Mode { Rules, Dictionary };

struct G2pProfile {
  std::string lang;
  Mode mode = Mode::Rules;
  MappingTable mapping;
  std::vector<RewriteRule> pre_rules;
  std::vector<RewriteRule> post_rules;
  std::optional<MappingTable> dictionary;

  void validate() const;
  friend bool operator==(const G2pProfile&, const G2pProfile&) = default;
};

/// Rules mode: pre rules, longest-match mapping, post rules.
/// Dictionary mode: pre rules, longest-match dictionary lookup, post rules.
/// Unmapped scalars (punctuation, digits, spaces) pass through unchanged.
std::string transliterate(const G2pProfile& profile, std::string_view text);

G2pProfile load_profile(const std::filesystem::path& dir, std::string_view lang);
void save_profile(const std::filesystem::path& dir, const G2pProfile& profile);

std::vector<std::pair<std::string, std::string>> parse_csv_pairs(std::string_view content,
                                                                 const std::string& file_label);
std::string format_csv_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);

}  // namespace phonicl::g2p
