#pragma once

// Prompt assembly.
//
// A rendered prompt is
//   header "\n\n" (example "\n\n")* query
// The header is literal text. Example and query blocks are line-oriented:
// a line holding {{input}}, {{input_ipa}} or {{input_roman}} is that field's
// line. An excluded field's line is dropped (Omit) or rendered with an empty
// value (BlankField), e.g. "<ipa input>: ".
//
// Template file format:
//   @@ task <name>
//   @@ header
//   ...lines...
//   @@ example
//   ...lines...
//   @@ query
//   ...lines...
// Trailing blank lines of each section are dropped. Lines starting with
// "@@@" stand for a literal line starting with "@@".

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "phonicl/corpus.hpp"

namespace phonicl {

struct PromptTemplate {
  Task task;
  std::string header;
  std::string example_block;
  std::string query_block;

  /// Throws Error(TemplateParseError) on unknown placeholders or an
  /// {{answer}} inside the query block.
  void validate() const;
  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

enum class BlankMode { Omit, BlankField };

struct PromptConfig {
  std::size_t k_shots = 3;
  bool include_script = true;
  bool include_ipa = true;
  bool include_roman = false;
  BlankMode blank_mode = BlankMode::Omit;

  void validate() const;
};

/// Throws Error(MissingField) when a shot or the query lacks text for an
/// included field, Error(InvalidArgument) when shots.size() != k_shots.
std::string render_prompt(const PromptTemplate& tpl, const PromptConfig& config,
                          const std::vector<Example>& shots, const Example& query);

using TemplateSet = std::map<std::string, PromptTemplate>;

/// Keyed by Task::name.
const TemplateSet& default_templates();
std::string default_templates_text();

TemplateSet parse_templates(std::string_view text, std::string_view label = "templates");
std::string format_templates(const TemplateSet& templates);

/// Defaults, overridden task by task by the file's entries.
TemplateSet load_templates(const std::filesystem::path& path);

/// Template for a task; throws Error(TemplateParseError) if absent.
const PromptTemplate& template_for(const TemplateSet& templates, const Task& task);

}  // namespace phonicl
