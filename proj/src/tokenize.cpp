#include "phonicl/tokenize.hpp"

#include <array>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "phonicl/digest.hpp"
#include "phonicl/error.hpp"
#include "phonicl/unicode.hpp"

namespace phonicl {

namespace uc = phonicl::unicode;
using nlohmann::json;

namespace {

bool is_ws(char32_t c) { return uc::is_whitespace(c); }
bool is_l(char32_t c) { return uc::is_letter(c); }
bool is_n(char32_t c) { return uc::is_number(c); }
bool is_nl(char32_t c) { return c == U'\r' || c == U'\n'; }

// Length of an English contraction suffix at i ('s 't 're 've 'm 'll 'd), or 0.
std::size_t contraction_at(const std::u32string& s, std::size_t i, bool ignore_case) {
  if (s[i] != U'\'' || i + 1 >= s.size()) return 0;
  auto low = [&](std::size_t k) -> char32_t {
    if (k >= s.size()) return 0;
    return ignore_case ? uc::to_lower(s[k]) : s[k];
  };
  const char32_t a = low(i + 1);
  const char32_t b = low(i + 2);
  if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l')) return 3;
  if (a == U's' || a == U't' || a == U'm' || a == U'd') return 2;
  return 0;
}

std::size_t run(const std::u32string& s, std::size_t j, bool (*pred)(char32_t)) {
  while (j < s.size() && pred(s[j])) ++j;
  return j;
}

bool is_other(char32_t c) { return !is_ws(c) && !is_l(c) && !is_n(c); }

// `\s+(?!\S)|\s+` starting at a whitespace scalar.
std::size_t trailing_ws(const std::u32string& s, std::size_t i) {
  const std::size_t k = run(s, i, is_ws);
  if (k == s.size()) return k;
  return k - i > 1 ? k - 1 : k;
}

std::vector<std::string> to_pieces(const std::u32string& s, const std::vector<std::size_t>& cuts) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
    out.push_back(uc::to_utf8(std::u32string_view(s).substr(cuts[c], cuts[c + 1] - cuts[c])));
  }
  return out;
}

}  // namespace

// 's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
std::vector<std::string> split_gpt2_pattern(std::string_view text) {
  const std::u32string s = uc::to_u32(text);
  std::vector<std::size_t> cuts{0};
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t end = 0;
    if (std::size_t c = contraction_at(s, i, false)) {
      end = i + c;
    } else {
      const std::size_t j = (s[i] == U' ' && i + 1 < s.size()) ? i + 1 : i;
      if (is_l(s[j])) {
        end = run(s, j, is_l);
      } else if (is_n(s[j])) {
        end = run(s, j, is_n);
      } else if (is_other(s[j])) {
        end = run(s, j, is_other);
      } else {
        end = trailing_ws(s, i);
      }
    }
    cuts.push_back(end);
    i = end;
  }
  return to_pieces(s, cuts);
}

// (?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}|
//  ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+
std::vector<std::string> split_llama3_pattern(std::string_view text) {
  const std::u32string s = uc::to_u32(text);
  std::vector<std::size_t> cuts{0};
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t end = 0;
    const char32_t c = s[i];
    if (std::size_t k = contraction_at(s, i, true)) {
      end = i + k;
    } else if (!is_nl(c) && !is_l(c) && !is_n(c) && i + 1 < s.size() && is_l(s[i + 1])) {
      end = run(s, i + 1, is_l);
    } else if (is_l(c)) {
      end = run(s, i, is_l);
    } else if (is_n(c)) {
      end = i;
      while (end < s.size() && end - i < 3 && is_n(s[end])) ++end;
    } else if ((c == U' ' && i + 1 < s.size() && is_other(s[i + 1])) || is_other(c)) {
      end = run(s, c == U' ' ? i + 1 : i, is_other);
      end = run(s, end, is_nl);
    } else {
      // c is whitespace.
      const std::size_t k = run(s, i, is_ws);
      std::size_t last_nl = std::u32string::npos;
      for (std::size_t p = i; p < k; ++p) {
        if (is_nl(s[p])) last_nl = p;
      }
      end = last_nl != std::u32string::npos ? last_nl + 1 : trailing_ws(s, i);
    }
    cuts.push_back(end);
    i = end;
  }
  return to_pieces(s, cuts);
}

namespace detail {

namespace {

constexpr std::string_view kGpt2Pattern =
    R"('s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+)";
constexpr std::string_view kLlama3Pattern =
    R"((?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+)";

// GPT-2's reversible byte -> printable scalar table.
std::array<std::string, 256> byte_encoder() {
  std::array<std::string, 256> table;
  std::array<bool, 256> direct{};
  for (int b = '!'; b <= '~'; ++b) direct[b] = true;
  for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
  for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
  int n = 0;
  for (int b = 0; b < 256; ++b) {
    const char32_t cp = direct[b] ? static_cast<char32_t>(b) : static_cast<char32_t>(256 + n++);
    table[b] = uc::encode(cp);
  }
  return table;
}

[[noreturn]] void fail(std::string_view label, const std::string& what) {
  throw Error(ErrorCode::VocabParseError, std::string(label) + ": " + what);
}

}  // namespace

class BpeModel {
 public:
  BpeModel(const json& root, std::string_view label);

  TokenStream encode(std::string_view text) const;

 private:
  struct NormStep {
    enum Kind { Nfc, Nfd, Nfkc, Nfkd, Lower, Prepend, Replace } kind;
    std::string a, b;
  };
  struct PreStep {
    enum Kind { ByteLevel, SplitGpt2, SplitLlama3, SplitLiteral, Metaspace, WsSplit } kind = WsSplit;
    bool add_prefix_space = false;
    bool use_regex = true;
    bool remove_matches = false;
    std::string literal;
    std::string replacement;
    std::string prepend_scheme;
    bool split = true;
  };

  void parse_normalizer(const json& j, std::string_view label);
  void parse_pre_tokenizer(const json& j, std::string_view label);
  void parse_model(const json& j, std::string_view label);

  std::string normalize(std::string_view text) const;
  std::vector<std::string> pre_tokenize(std::string text) const;
  void encode_word(const std::string& word, TokenStream& out) const;
  void emit(const std::string& symbol, TokenStream& out) const;

  std::vector<NormStep> norm_;
  std::vector<PreStep> pre_;
  bool byte_level_ = false;
  std::unordered_map<std::string, std::int32_t> vocab_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> merge_rank_;
  std::string unk_;
  bool byte_fallback_ = false;
  bool ignore_merges_ = false;
  std::array<std::string, 256> byte_enc_ = byte_encoder();
};

BpeModel::BpeModel(const json& root, std::string_view label) {
  if (!root.is_object()) fail(label, "top level is not an object");
  if (root.contains("normalizer")) parse_normalizer(root["normalizer"], label);
  if (root.contains("pre_tokenizer")) parse_pre_tokenizer(root["pre_tokenizer"], label);
  if (!root.contains("model")) fail(label, "missing model");
  parse_model(root["model"], label);
}

void BpeModel::parse_normalizer(const json& j, std::string_view label) {
  if (j.is_null()) return;
  const std::string type = j.value("type", "");
  if (type == "Sequence") {
    for (const auto& n : j.at("normalizers")) parse_normalizer(n, label);
  } else if (type == "NFC") {
    norm_.push_back({NormStep::Nfc, {}, {}});
  } else if (type == "NFD") {
    norm_.push_back({NormStep::Nfd, {}, {}});
  } else if (type == "NFKC") {
    norm_.push_back({NormStep::Nfkc, {}, {}});
  } else if (type == "NFKD") {
    norm_.push_back({NormStep::Nfkd, {}, {}});
  } else if (type == "Lowercase") {
    norm_.push_back({NormStep::Lower, {}, {}});
  } else if (type == "Prepend") {
    norm_.push_back({NormStep::Prepend, j.at("prepend").get<std::string>(), {}});
  } else if (type == "Replace") {
    const auto& pat = j.at("pattern");
    if (!pat.contains("String")) fail(label, "Replace normalizer with a regex pattern is unsupported");
    norm_.push_back({NormStep::Replace, pat["String"].get<std::string>(),
                     j.at("content").get<std::string>()});
  } else {
    fail(label, "unsupported normalizer '" + type + "'");
  }
}

void BpeModel::parse_pre_tokenizer(const json& j, std::string_view label) {
  if (j.is_null()) return;
  const std::string type = j.value("type", "");
  if (type == "Sequence") {
    for (const auto& p : j.at("pretokenizers")) parse_pre_tokenizer(p, label);
  } else if (type == "ByteLevel") {
    PreStep s;
    s.kind = PreStep::ByteLevel;
    s.add_prefix_space = j.value("add_prefix_space", false);
    s.use_regex = j.value("use_regex", true);
    pre_.push_back(s);
    byte_level_ = true;
  } else if (type == "Split") {
    const auto& pat = j.at("pattern");
    const std::string behavior = j.value("behavior", "Isolated");
    if (j.value("invert", false)) fail(label, "inverted Split is unsupported");
    PreStep s;
    s.kind = PreStep::SplitLiteral;
    if (pat.contains("Regex")) {
      const std::string re = pat["Regex"].get<std::string>();
      if (re == kGpt2Pattern) {
        s.kind = PreStep::SplitGpt2;
      } else if (re == kLlama3Pattern) {
        s.kind = PreStep::SplitLlama3;
      } else {
        fail(label, "unsupported Split regex");
      }
      if (behavior != "Isolated") fail(label, "unsupported Split behavior '" + behavior + "'");
    } else if (pat.contains("String")) {
      s.literal = pat["String"].get<std::string>();
      if (s.literal.empty()) fail(label, "empty Split string");
      if (behavior == "Removed") {
        s.remove_matches = true;
      } else if (behavior != "Isolated") {
        fail(label, "unsupported Split behavior '" + behavior + "'");
      }
    } else {
      fail(label, "Split without pattern");
    }
    pre_.push_back(s);
  } else if (type == "Metaspace") {
    PreStep s;
    s.kind = PreStep::Metaspace;
    s.replacement = j.value("replacement", std::string("\xE2\x96\x81"));
    s.prepend_scheme = j.value("prepend_scheme", std::string("always"));
    s.split = j.value("split", true);
    if (s.prepend_scheme != "always" && s.prepend_scheme != "first" && s.prepend_scheme != "never") {
      fail(label, "unsupported Metaspace prepend_scheme");
    }
    pre_.push_back(s);
  } else if (type == "WhitespaceSplit") {
    pre_.push_back(PreStep{});
  } else {
    fail(label, "unsupported pre_tokenizer '" + type + "'");
  }
}

void BpeModel::parse_model(const json& m, std::string_view label) {
  if (m.value("type", "BPE") != "BPE") fail(label, "model type is not BPE");
  if (m.contains("dropout") && !m["dropout"].is_null()) fail(label, "BPE dropout is unsupported");
  for (const char* key : {"continuing_subword_prefix", "end_of_word_suffix"}) {
    if (m.contains(key) && !m[key].is_null() && !m[key].get<std::string>().empty()) {
      fail(label, std::string(key) + " is unsupported");
    }
  }
  if (m.contains("unk_token") && m["unk_token"].is_string()) unk_ = m["unk_token"].get<std::string>();
  byte_fallback_ = m.value("byte_fallback", false);
  ignore_merges_ = m.value("ignore_merges", false);

  const auto& vocab = m.at("vocab");
  if (!vocab.is_object() || vocab.empty()) fail(label, "empty vocab");
  std::int32_t max_id = -1;
  for (auto it = vocab.begin(); it != vocab.end(); ++it) {
    const auto id = it.value().get<std::int32_t>();
    if (id < 0) fail(label, "negative token id");
    vocab_.emplace(it.key(), id);
    max_id = std::max(max_id, id);
  }
  id_to_token_.assign(static_cast<std::size_t>(max_id) + 1, {});
  for (const auto& [tok, id] : vocab_) id_to_token_[static_cast<std::size_t>(id)] = tok;

  std::int32_t rank = 0;
  for (const auto& merge : m.at("merges")) {
    std::string a, b;
    if (merge.is_string()) {
      const std::string s = merge.get<std::string>();
      const auto sp = s.find(' ');
      if (sp == std::string::npos || sp == 0 || sp + 1 == s.size()) fail(label, "bad merge '" + s + "'");
      a = s.substr(0, sp);
      b = s.substr(sp + 1);
    } else if (merge.is_array() && merge.size() == 2) {
      a = merge[0].get<std::string>();
      b = merge[1].get<std::string>();
    } else {
      fail(label, "bad merge entry");
    }
    merge_rank_.emplace(a + '\0' + b, rank++);
  }
}

std::string BpeModel::normalize(std::string_view text) const {
  std::string s(text);
  for (const auto& step : norm_) {
    switch (step.kind) {
      case NormStep::Nfc: s = uc::normalize(s, uc::NormalForm::NFC); break;
      case NormStep::Nfd: s = uc::normalize(s, uc::NormalForm::NFD); break;
      case NormStep::Nfkc: s = uc::normalize(s, uc::NormalForm::NFKC); break;
      case NormStep::Nfkd: s = uc::normalize(s, uc::NormalForm::NFKD); break;
      case NormStep::Lower: s = uc::lowercase(s); break;
      case NormStep::Prepend:
        if (!s.empty()) s = step.a + s;
        break;
      case NormStep::Replace: {
        std::string out;
        std::size_t pos = 0;
        while (true) {
          const auto hit = s.find(step.a, pos);
          if (hit == std::string::npos) break;
          out.append(s, pos, hit - pos);
          out += step.b;
          pos = hit + step.a.size();
        }
        out.append(s, pos);
        s = std::move(out);
        break;
      }
    }
  }
  return s;
}

std::vector<std::string> BpeModel::pre_tokenize(std::string text) const {
  std::vector<std::string> pieces{std::move(text)};
  for (const auto& step : pre_) {
    std::vector<std::string> next;
    for (std::size_t pi = 0; pi < pieces.size(); ++pi) {
      std::string& piece = pieces[pi];
      switch (step.kind) {
        case PreStep::ByteLevel: {
          if (step.add_prefix_space && (piece.empty() || piece.front() != ' ')) piece.insert(0, " ");
          std::vector<std::string> parts =
              step.use_regex ? split_gpt2_pattern(piece) : std::vector<std::string>{piece};
          for (const auto& part : parts) {
            std::string mapped;
            for (unsigned char c : part) mapped += byte_enc_[c];
            next.push_back(std::move(mapped));
          }
          break;
        }
        case PreStep::SplitGpt2:
          for (auto& p : split_gpt2_pattern(piece)) next.push_back(std::move(p));
          break;
        case PreStep::SplitLlama3:
          for (auto& p : split_llama3_pattern(piece)) next.push_back(std::move(p));
          break;
        case PreStep::SplitLiteral: {
          std::size_t pos = 0;
          while (true) {
            const auto hit = piece.find(step.literal, pos);
            if (hit == std::string::npos) break;
            if (hit > pos) next.push_back(piece.substr(pos, hit - pos));
            if (!step.remove_matches) next.push_back(step.literal);
            pos = hit + step.literal.size();
          }
          if (pos < piece.size()) next.push_back(piece.substr(pos));
          break;
        }
        case PreStep::Metaspace: {
          std::string s;
          for (char c : piece) {
            if (c == ' ') {
              s += step.replacement;
            } else {
              s.push_back(c);
            }
          }
          const bool prepend = step.prepend_scheme == "always" ||
                               (step.prepend_scheme == "first" && pi == 0);
          if (prepend && s.rfind(step.replacement, 0) != 0) s = step.replacement + s;
          if (!step.split) {
            next.push_back(std::move(s));
            break;
          }
          std::size_t start = 0;
          std::size_t pos = s.find(step.replacement, 1);
          while (pos != std::string::npos) {
            next.push_back(s.substr(start, pos - start));
            start = pos;
            pos = s.find(step.replacement, pos + step.replacement.size());
          }
          next.push_back(s.substr(start));
          break;
        }
        case PreStep::WsSplit:
          for (auto& p : uc::split_whitespace(piece)) next.push_back(std::move(p));
          break;
      }
    }
    pieces.clear();
    for (auto& p : next) {
      if (!p.empty()) pieces.push_back(std::move(p));
    }
  }
  return pieces;
}

void BpeModel::emit(const std::string& symbol, TokenStream& out) const {
  if (auto it = vocab_.find(symbol); it != vocab_.end()) {
    out.tokens.push_back(symbol);
    out.ids.push_back(it->second);
    return;
  }
  if (byte_fallback_) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    bool all = true;
    std::vector<std::pair<std::string, std::int32_t>> bytes;
    for (unsigned char c : symbol) {
      std::string tok = "<0x";
      tok.push_back(kHex[c >> 4]);
      tok.push_back(kHex[c & 0xF]);
      tok.push_back('>');
      auto it = vocab_.find(tok);
      if (it == vocab_.end()) {
        all = false;
        break;
      }
      bytes.emplace_back(tok, it->second);
    }
    if (all) {
      for (auto& [t, id] : bytes) {
        out.tokens.push_back(std::move(t));
        out.ids.push_back(id);
      }
      return;
    }
  }
  if (!unk_.empty()) {
    if (auto it = vocab_.find(unk_); it != vocab_.end()) {
      out.tokens.push_back(unk_);
      out.ids.push_back(it->second);
    }
  }
}

void BpeModel::encode_word(const std::string& word, TokenStream& out) const {
  if (ignore_merges_ && vocab_.contains(word)) {
    emit(word, out);
    return;
  }
  // Initial symbols: one per scalar; scalars outside the vocabulary become
  // fallback/unknown pieces that never take part in merges.
  struct Sym {
    std::string text;
    bool known;
  };
  std::vector<Sym> syms;
  for (auto sv : uc::scalars(word)) {
    std::string s(sv);
    const bool known = vocab_.contains(s);
    syms.push_back({std::move(s), known});
  }
  while (syms.size() > 1) {
    std::int32_t best = std::numeric_limits<std::int32_t>::max();
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      if (!syms[i].known || !syms[i + 1].known) continue;
      auto it = merge_rank_.find(syms[i].text + '\0' + syms[i + 1].text);
      if (it != merge_rank_.end() && it->second < best) best = it->second;
    }
    if (best == std::numeric_limits<std::int32_t>::max()) break;
    std::vector<Sym> merged;
    merged.reserve(syms.size());
    for (std::size_t i = 0; i < syms.size(); ++i) {
      if (i + 1 < syms.size() && syms[i].known && syms[i + 1].known) {
        auto it = merge_rank_.find(syms[i].text + '\0' + syms[i + 1].text);
        if (it != merge_rank_.end() && it->second == best) {
          merged.push_back({syms[i].text + syms[i + 1].text, true});
          ++i;
          continue;
        }
      }
      merged.push_back(std::move(syms[i]));
    }
    syms = std::move(merged);
  }
  for (const auto& s : syms) emit(s.text, out);
}

TokenStream BpeModel::encode(std::string_view text) const {
  TokenStream out;
  if (text.empty()) return out;
  for (const auto& piece : pre_tokenize(normalize(text))) encode_word(piece, out);
  return out;
}

}  // namespace detail

Tokenizer Tokenizer::whitespace() { return Tokenizer(TokenizerKind::Whitespace, "ws", nullptr); }

Tokenizer Tokenizer::per_character() {
  return Tokenizer(TokenizerKind::PerCharacter, "cs", nullptr);
}

Tokenizer Tokenizer::bpe_from_json(std::string_view json_text, std::string_view label) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::VocabParseError, std::string(label) + ": " + e.what());
  }
  std::shared_ptr<const detail::BpeModel> model;
  try {
    model = std::make_shared<const detail::BpeModel>(root, label);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::VocabParseError, std::string(label) + ": " + e.what());
  }
  return Tokenizer(TokenizerKind::Bpe, "bpe:" + sha256_hex(json_text).substr(0, 16), std::move(model));
}

Tokenizer Tokenizer::load_bpe(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::VocabParseError, "cannot open tokenizer file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return bpe_from_json(ss.str(), path.string());
}

Tokenizer Tokenizer::from_spec(std::string_view kind, const std::filesystem::path& vocab_path) {
  if (kind == "ws") return whitespace();
  if (kind == "cs") return per_character();
  if (kind == "bpe") {
    if (vocab_path.empty()) throw Error(ErrorCode::VocabParseError, "bpe tokenizer needs a vocabulary path");
    return load_bpe(vocab_path);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown tokenizer kind '" + std::string(kind) + "'");
}

TokenStream Tokenizer::tokenize(std::string_view text) const {
  TokenStream ts = tokenize_raw(text);
  ts.tokenizer_id = id_;
  return ts;
}

TokenStream Tokenizer::tokenize_raw(std::string_view text) const {
  switch (kind_) {
    case TokenizerKind::Whitespace: {
      TokenStream ts;
      ts.tokens = uc::split_whitespace(text);
      return ts;
    }
    case TokenizerKind::PerCharacter: {
      TokenStream ts;
      for (auto sv : uc::scalars(text)) {
        std::size_t p = 0;
        if (!uc::is_whitespace(uc::decode_at(sv, p))) ts.tokens.emplace_back(sv);
      }
      return ts;
    }
    case TokenizerKind::Bpe:
      return bpe_->encode(text);
  }
  return {};
}

}  // namespace phonicl
