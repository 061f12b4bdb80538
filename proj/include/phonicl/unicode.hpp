#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace phonicl::unicode {

/// Decodes one scalar at `pos`, advancing `pos`. Invalid bytes decode to
/// U+FFFD and advance by one byte.
char32_t decode_at(std::string_view text, std::size_t& pos) noexcept;

/// Byte length of the scalar that starts at `pos` (1 for invalid bytes).
std::size_t scalar_length(std::string_view text, std::size_t pos) noexcept;

void append_utf8(std::string& out, char32_t cp);
std::string encode(char32_t cp);
std::u32string to_u32(std::string_view text);
std::string to_utf8(std::u32string_view text);

std::size_t count_scalars(std::string_view text) noexcept;

/// Splits into one view per scalar (views alias `text`).
std::vector<std::string_view> scalars(std::string_view text);

bool is_whitespace(char32_t cp) noexcept;
bool is_punctuation(char32_t cp) noexcept;
bool is_letter(char32_t cp) noexcept;
bool is_number(char32_t cp) noexcept;
bool is_symbol(char32_t cp) noexcept;
char32_t to_lower(char32_t cp) noexcept;

std::string lowercase(std::string_view text);

/// Splits on runs of Unicode whitespace; never yields empty pieces.
std::vector<std::string> split_whitespace(std::string_view text);

enum class NormalForm { NFC, NFD, NFKC, NFKD };
std::string normalize(std::string_view text, NormalForm form);

}  // namespace phonicl::unicode
