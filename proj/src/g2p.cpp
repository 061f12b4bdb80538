#include "phonicl/g2p.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "phonicl/error.hpp"
#include "phonicl/unicode.hpp"

namespace phonicl::g2p {

namespace uc = phonicl::unicode;

// ---------------------------------------------------------------------------
// MappingTable

MappingTable MappingTable::from_pairs(std::vector<std::pair<std::string, std::string>> pairs) {
  std::set<std::string> keys;
  for (const auto& [orth, phon] : pairs) {
    if (orth.empty()) throw Error(ErrorCode::InvalidArgument, "empty mapping key");
    if (!keys.insert(orth).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate mapping key '" + orth + "'");
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    const auto la = uc::count_scalars(a.first);
    const auto lb = uc::count_scalars(b.first);
    if (la != lb) return la > lb;
    return a.first < b.first;
  });

  MappingTable table;
  table.entries_ = std::move(pairs);
  table.trie_.emplace_back();
  for (std::size_t i = 0; i < table.entries_.size(); ++i) {
    int node = 0;
    for (unsigned char c : table.entries_[i].first) {
      auto it = table.trie_[node].next.find(c);
      if (it == table.trie_[node].next.end()) {
        table.trie_.emplace_back();
        const int child = static_cast<int>(table.trie_.size() - 1);
        table.trie_[node].next.emplace(c, child);
        node = child;
      } else {
        node = it->second;
      }
    }
    table.trie_[node].entry = static_cast<int>(i);
  }
  return table;
}

std::optional<std::pair<std::size_t, const std::string*>> MappingTable::longest_match(
    std::string_view text, std::size_t pos) const {
  if (trie_.empty()) return std::nullopt;
  int node = 0;
  std::optional<std::pair<std::size_t, const std::string*>> best;
  for (std::size_t i = pos; i < text.size(); ++i) {
    auto it = trie_[node].next.find(static_cast<unsigned char>(text[i]));
    if (it == trie_[node].next.end()) break;
    node = it->second;
    if (trie_[node].entry >= 0) {
      // Only accept matches that end on a scalar boundary.
      const bool boundary = i + 1 == text.size() ||
                            (static_cast<unsigned char>(text[i + 1]) & 0xC0) != 0x80;
      if (boundary) best.emplace(i + 1 - pos, &entries_[trie_[node].entry].second);
    }
  }
  return best;
}

std::string MappingTable::apply(std::string_view text) const {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (auto m = longest_match(text, pos)) {
      out += *m->second;
      pos += m->first;
    } else {
      const std::size_t len = uc::scalar_length(text, pos);
      out.append(text.substr(pos, len));
      pos += len;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patterns and rules

bool Pattern::CharClass::contains(char32_t cp) const noexcept {
  bool in = std::any_of(ranges.begin(), ranges.end(),
                        [cp](const auto& r) { return cp >= r.first && cp <= r.second; });
  return in != negated;
}

Pattern Pattern::parse(std::string_view text) {
  Pattern p;
  p.text_ = std::string(text);
  const std::u32string s = uc::to_u32(text);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char32_t c = s[i];
    if (uc::is_whitespace(c)) throw std::invalid_argument("whitespace inside context pattern");
    if (c == '\\') {
      if (i + 1 == s.size()) throw std::invalid_argument("dangling escape");
      p.elements_.push_back(Literal{s[++i]});
    } else if (c == '#') {
      p.elements_.push_back(Boundary{});
    } else if (c == ']') {
      throw std::invalid_argument("unbalanced ']'");
    } else if (c == '[') {
      CharClass cls;
      std::size_t j = i + 1;
      if (j < s.size() && s[j] == '^') {
        cls.negated = true;
        ++j;
      }
      bool closed = false;
      while (j < s.size()) {
        char32_t lo = s[j];
        if (lo == ']') {
          closed = true;
          break;
        }
        if (lo == '\\') {
          if (++j == s.size()) throw std::invalid_argument("dangling escape in class");
          lo = s[j];
        }
        char32_t hi = lo;
        if (j + 2 < s.size() && s[j + 1] == '-' && s[j + 2] != ']') {
          j += 2;
          hi = s[j];
          if (hi == '\\') {
            if (++j == s.size()) throw std::invalid_argument("dangling escape in class");
            hi = s[j];
          }
          if (hi < lo) throw std::invalid_argument("reversed class range");
        }
        cls.ranges.emplace_back(lo, hi);
        ++j;
      }
      if (!closed) throw std::invalid_argument("unterminated character class");
      if (cls.ranges.empty()) throw std::invalid_argument("empty character class");
      p.elements_.push_back(std::move(cls));
      i = j;
    } else {
      p.elements_.push_back(Literal{c});
    }
  }
  return p;
}

namespace {

bool boundary_left(std::u32string_view s, std::size_t pos) {
  return pos == 0 || uc::is_whitespace(s[pos - 1]);
}

bool boundary_right(std::u32string_view s, std::size_t pos) {
  return pos >= s.size() || uc::is_whitespace(s[pos]);
}

bool element_matches(const Pattern::Element& e, char32_t cp) {
  if (auto* lit = std::get_if<Pattern::Literal>(&e)) return lit->cp == cp;
  return std::get<Pattern::CharClass>(e).contains(cp);
}

}  // namespace

bool Pattern::matches_before(std::u32string_view s, std::size_t pos) const {
  std::size_t p = pos;
  for (auto it = elements_.rbegin(); it != elements_.rend(); ++it) {
    if (std::holds_alternative<Boundary>(*it)) {
      if (!boundary_left(s, p)) return false;
      continue;
    }
    if (p == 0 || !element_matches(*it, s[p - 1])) return false;
    --p;
  }
  return true;
}

bool Pattern::matches_after(std::u32string_view s, std::size_t pos) const {
  std::size_t p = pos;
  for (const auto& e : elements_) {
    if (std::holds_alternative<Boundary>(e)) {
      if (!boundary_right(s, p)) return false;
      continue;
    }
    if (p >= s.size() || !element_matches(e, s[p])) return false;
    ++p;
  }
  return true;
}

namespace {

// Finds `needle` at an unescaped position in `s`.
std::size_t find_unescaped(std::u32string_view s, std::u32string_view needle, std::size_t from = 0) {
  for (std::size_t i = from; i + needle.size() <= s.size(); ++i) {
    if (s[i] == '\\') {
      ++i;
      continue;
    }
    if (s.substr(i, needle.size()) == needle) return i;
  }
  return std::u32string_view::npos;
}

std::u32string_view trim(std::u32string_view s) {
  while (!s.empty() && uc::is_whitespace(s.front())) s.remove_prefix(1);
  // An escaped trailing space ("\ ") is content, not padding.
  while (!s.empty() && uc::is_whitespace(s.back()) &&
         !(s.size() >= 2 && s[s.size() - 2] == '\\')) {
    s.remove_suffix(1);
  }
  return s;
}

std::string unescape_literal(std::u32string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\') {
      if (i + 1 == s.size()) throw std::invalid_argument("dangling escape");
      out.push_back(s[++i]);
    } else if (uc::is_whitespace(s[i])) {
      throw std::invalid_argument("unescaped whitespace in literal");
    } else {
      out.push_back(s[i]);
    }
  }
  return uc::to_utf8(out);
}

std::string escape_literal(std::string_view s) {
  std::u32string out;
  for (char32_t c : uc::to_u32(s)) {
    if (c == '\\' || c == '#' || c == '[' || c == ']' || c == '_' || c == '/' || c == '-' ||
        c == '>' || uc::is_whitespace(c)) {
      out.push_back('\\');
    }
    out.push_back(c);
  }
  return uc::to_utf8(out);
}

}  // namespace

RewriteRule parse_rule(std::string_view line, Phase phase) {
  const std::u32string s = uc::to_u32(line);
  const std::u32string_view view(s);
  const auto arrow = find_unescaped(view, U"->");
  if (arrow == std::u32string_view::npos) throw std::invalid_argument("missing '->'");
  RewriteRule rule;
  rule.phase = phase;
  rule.source = unescape_literal(trim(view.substr(0, arrow)));
  if (rule.source.empty()) throw std::invalid_argument("empty rule source");

  const auto rhs = view.substr(arrow + 2);
  const auto slash = find_unescaped(rhs, U"/");
  rule.target = unescape_literal(trim(rhs.substr(0, slash)));
  if (slash != std::u32string_view::npos) {
    const auto ctx = rhs.substr(slash + 1);
    const auto under = find_unescaped(ctx, U"_");
    if (under == std::u32string_view::npos) throw std::invalid_argument("context lacks '_'");
    if (find_unescaped(ctx, U"_", under + 1) != std::u32string_view::npos) {
      throw std::invalid_argument("context has more than one '_'");
    }
    if (find_unescaped(ctx, U"/") != std::u32string_view::npos) {
      throw std::invalid_argument("more than one '/'");
    }
    rule.left = Pattern::parse(uc::to_utf8(trim(ctx.substr(0, under))));
    rule.right = Pattern::parse(uc::to_utf8(trim(ctx.substr(under + 1))));
  }
  return rule;
}

std::string format_rule(const RewriteRule& rule) {
  std::string out = escape_literal(rule.source) + " -> " + escape_literal(rule.target);
  if (!rule.left.empty() || !rule.right.empty()) {
    out += " / " + rule.left.text() + " _ " + rule.right.text();
  }
  return out;
}

std::vector<RewriteRule> parse_rules(std::string_view content, Phase phase,
                                     const std::string& file_label) {
  std::vector<RewriteRule> rules;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string_view::npos || line[first] == '#') {
      if (end == content.size()) break;
      continue;
    }
    try {
      rules.push_back(parse_rule(line, phase));
    } catch (const std::invalid_argument& e) {
      throw RuleParseError(file_label, line_no, e.what());
    }
    if (end == content.size()) break;
  }
  return rules;
}

std::string apply_rule(const RewriteRule& rule, std::string_view text) {
  const std::u32string s = uc::to_u32(text);
  const std::u32string src = uc::to_u32(rule.source);
  const std::u32string tgt = uc::to_u32(rule.target);
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.compare(i, src.size(), src) == 0 && rule.left.matches_before(s, i) &&
        rule.right.matches_after(s, i + src.size())) {
      out += tgt;
      i += src.size();
    } else {
      out.push_back(s[i++]);
    }
  }
  return uc::to_utf8(out);
}

// ---------------------------------------------------------------------------
// Profiles

void G2pProfile::validate() const {
  if (mode == Mode::Dictionary && (!dictionary || dictionary->empty())) {
    throw Error(ErrorCode::InvalidArgument, "dictionary mode requires a non-empty dictionary");
  }
}

std::string transliterate(const G2pProfile& profile, std::string_view text) {
  if (text.empty()) return {};
  std::string s(text);
  for (const auto& r : profile.pre_rules) s = apply_rule(r, s);
  if (profile.mode == Mode::Dictionary) {
    s = profile.dictionary ? profile.dictionary->apply(s) : s;
  } else {
    s = profile.mapping.apply(s);
  }
  for (const auto& r : profile.post_rules) s = apply_rule(r, s);
  return s;
}

namespace {

std::vector<std::pair<std::string, std::string>> parse_csv_pairs_lines(
    std::string_view content, const std::string& file_label, std::vector<std::size_t>* lines) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::vector<std::string> fields(1);
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            fields.back().push_back('"');
            ++i;
          } else {
            quoted = false;
          }
        } else {
          fields.back().push_back(c);
        }
      } else if (c == '"' && fields.back().empty() && !was_quoted) {
        quoted = was_quoted = true;
      } else if (c == ',') {
        fields.emplace_back();
        was_quoted = false;
      } else {
        fields.back().push_back(c);
      }
    }
    if (quoted) throw RuleParseError(file_label, line_no, "unterminated quote");
    if (fields.size() != 2) throw RuleParseError(file_label, line_no, "expected two columns");
    if (fields[0].empty()) throw RuleParseError(file_label, line_no, "empty key");
    out.emplace_back(std::move(fields[0]), std::move(fields[1]));
    if (lines) lines->push_back(line_no);
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_csv_pairs(std::string_view content,
                                                                 const std::string& file_label) {
  return parse_csv_pairs_lines(content, file_label, nullptr);
}

namespace {

std::string csv_field(const std::string& f) {
  if (f.find_first_of(",\"\r\n") == std::string::npos && (f.empty() || f.front() != ' ')) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::optional<std::string> read_optional(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MappingTable table_from_file(const std::string& content, const std::string& label) {
  std::vector<std::size_t> lines;
  auto pairs = parse_csv_pairs_lines(content, label, &lines);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!seen.insert(pairs[i].first).second) {
      throw RuleParseError(label, lines[i], "duplicate key '" + pairs[i].first + "'");
    }
  }
  return MappingTable::from_pairs(std::move(pairs));
}

}  // namespace

std::string format_csv_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::string out;
  for (const auto& [k, v] : pairs) out += csv_field(k) + "," + csv_field(v) + "\n";
  return out;
}

G2pProfile load_profile(const std::filesystem::path& dir, std::string_view lang) {
  const std::string l(lang);
  const auto map_path = dir / (l + ".map.csv");
  const auto dict_path = dir / (l + ".dict.csv");
  const auto pre_path = dir / (l + ".pre.rules");
  const auto post_path = dir / (l + ".post.rules");

  const auto map_text = read_optional(map_path);
  const auto dict_text = read_optional(dict_path);
  if (!map_text && !dict_text) {
    throw Error(ErrorCode::ProfileNotFound,
                "no " + l + ".map.csv or " + l + ".dict.csv in " + dir.string());
  }

  G2pProfile profile;
  profile.lang = l;
  if (map_text) profile.mapping = table_from_file(*map_text, map_path.string());
  if (dict_text) profile.dictionary = table_from_file(*dict_text, dict_path.string());
  profile.mode = (dict_text && !map_text) ? Mode::Dictionary : Mode::Rules;
  if (auto pre = read_optional(pre_path)) {
    profile.pre_rules = parse_rules(*pre, Phase::Pre, pre_path.string());
  }
  if (auto post = read_optional(post_path)) {
    profile.post_rules = parse_rules(*post, Phase::Post, post_path.string());
  }
  profile.validate();
  return profile;
}

void save_profile(const std::filesystem::path& dir, const G2pProfile& profile) {
  profile.validate();
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << content;
  };
  const std::string& l = profile.lang;
  if (profile.mode == Mode::Rules) {
    write(dir / (l + ".map.csv"), format_csv_pairs(profile.mapping.entries()));
  }
  if (profile.dictionary) {
    write(dir / (l + ".dict.csv"), format_csv_pairs(profile.dictionary->entries()));
  }
  auto rules_text = [](const std::vector<RewriteRule>& rules) {
    std::string out;
    for (const auto& r : rules) out += format_rule(r) + "\n";
    return out;
  };
  if (!profile.pre_rules.empty()) write(dir / (l + ".pre.rules"), rules_text(profile.pre_rules));
  if (!profile.post_rules.empty()) write(dir / (l + ".post.rules"), rules_text(profile.post_rules));
}

}  // namespace phonicl::g2p
