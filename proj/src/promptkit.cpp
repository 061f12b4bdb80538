#include "phonicl/promptkit.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "phonicl/error.hpp"

namespace phonicl {

namespace {

constexpr std::string_view kDefaultTemplates = R"(@@ task aya-wiki
@@ header
You are an expert in Text Simplification task. Given the <script input>, generate a more complex version of the given input. You are also given the IPA phonemic transcription as supplementary information. The format will be as follows:
## Input: {{input}}
## Input (in IPA): {{input (in IPA)}}
## Answer: {{answer}}

The Answer must be a complete sentence with correct grammatical structure of the target language. The Answer must be in the target language script. Follow the examples if given.
@@ example
## Input: {{input}}
## Input (in IPA): {{input_ipa}}
## Answer: {{answer}}
@@ query
## Input: {{input}}
## Input (in IPA): {{input_ipa}}
## Answer:

@@ task flores
@@ header
Given the <script input> and IPA <ipa input>, translate the <script input> to English. Return one single answer. Do not provide explanations. The format is as follows:
<script input>: {{input}}
<ipa input>: {{input_ipa}}
<script output>: {{script_output}}

The Answer must be in the target language script. Follow the examples if given.
@@ example
<script input>: {{input}}
<ipa input>: {{input_ipa}}
<script output>: {{answer}}
@@ query
<script input>: {{input}}
<ipa input>: {{input_ipa}}
<script output>:

@@ task aya-mlqa
@@ header
You are an expert in extractive question answering. You will be given Context and a Question (Context + Question) and you must generate at most one Answer, based only on the information in the Context + Question. You are also given the IPA phonemic transcriptions of the equivalent Context + Question (in IPA) as supplementary information. The overall format will be:
## Context + Question: {{context+question}}
## Context + Question (in IPA): {{context+question (in IPA)}}
## Answer: {{answer}}

The Answer must appear verbatim in the Context + Question. The answer must be in the target language script. If the Question cannot be answered based on the Context, you will output "unanswerable". Follow the examples if given.
@@ example
## Context + Question: {{input}}
## Context + Question (in IPA): {{input_ipa}}
## Answer: {{answer}}
@@ query
## Context + Question: {{input}}
## Context + Question (in IPA): {{input_ipa}}
## Answer:
)";

enum class Field { Script, Ipa, Roman, Answer };

struct Placeholder {
  std::string_view name;
  Field field;
};

constexpr Placeholder kPlaceholders[] = {
    {"input", Field::Script},
    {"input_ipa", Field::Ipa},
    {"input_roman", Field::Roman},
    {"answer", Field::Answer},
};

[[noreturn]] void template_error(const std::string& what) { throw Error(ErrorCode::TemplateParseError, what); }

/// Placeholder names in a block, in order of appearance.
std::vector<std::string> placeholders_in(std::string_view block) {
  std::vector<std::string> names;
  std::size_t pos = 0;
  while ((pos = block.find("{{", pos)) != std::string_view::npos) {
    const auto close = block.find("}}", pos + 2);
    if (close == std::string_view::npos) template_error("unterminated '{{' in block");
    names.emplace_back(block.substr(pos + 2, close - pos - 2));
    pos = close + 2;
  }
  return names;
}

const Placeholder* lookup(std::string_view name) {
  for (const auto& p : kPlaceholders) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::vector<std::string_view> lines_of(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (true) {
    const auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(s.substr(start));
      break;
    }
    lines.push_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

const char* field_name(Field f) {
  switch (f) {
    case Field::Script: return "script";
    case Field::Ipa: return "ipa";
    case Field::Roman: return "roman";
    case Field::Answer: return "answer";
  }
  return "?";
}

std::string field_value(const Example& ex, Field f) {
  switch (f) {
    case Field::Script: return ex.script_text;
    case Field::Ipa: return ex.ipa_text;
    case Field::Roman: return ex.roman_text.value_or("");
    case Field::Answer: return ex.target_text;
  }
  return {};
}

bool included(const PromptConfig& c, Field f) {
  switch (f) {
    case Field::Script: return c.include_script;
    case Field::Ipa: return c.include_ipa;
    case Field::Roman: return c.include_roman;
    case Field::Answer: return true;
  }
  return false;
}

std::string render_block(std::string_view block, const PromptConfig& config, const Example& ex) {
  std::string out;
  bool first = true;
  for (auto line : lines_of(block)) {
    bool drop = false;
    std::string rendered;
    std::size_t pos = 0;
    while (true) {
      const auto open = line.find("{{", pos);
      if (open == std::string_view::npos) {
        rendered.append(line.substr(pos));
        break;
      }
      const auto close = line.find("}}", open + 2);
      rendered.append(line.substr(pos, open - pos));
      const Placeholder* ph = lookup(line.substr(open + 2, close - open - 2));
      if (!included(config, ph->field)) {
        if (config.blank_mode == BlankMode::Omit) drop = true;
      } else {
        const std::string value = field_value(ex, ph->field);
        if (value.empty()) {
          throw Error(ErrorCode::MissingField,
                      std::string("missing ") + field_name(ph->field) + " text for example '" + ex.id + "'");
        }
        rendered += value;
      }
      pos = close + 2;
    }
    if (drop) continue;
    if (!first) out.push_back('\n');
    out += rendered;
    first = false;
  }
  return out;
}

}  // namespace

void PromptTemplate::validate() const {
  for (const auto& name : placeholders_in(example_block)) {
    if (!lookup(name)) template_error("unknown placeholder {{" + name + "}} in " + task.name + " example block");
  }
  for (const auto& name : placeholders_in(query_block)) {
    const Placeholder* p = lookup(name);
    if (!p) template_error("unknown placeholder {{" + name + "}} in " + task.name + " query block");
    if (p->field == Field::Answer) template_error("query block of " + task.name + " contains {{answer}}");
  }
}

void PromptConfig::validate() const {
  if (!include_script && !include_ipa && !include_roman) {
    throw Error(ErrorCode::InvalidArgument, "prompt config includes no input field");
  }
}

std::string render_prompt(const PromptTemplate& tpl, const PromptConfig& config,
                          const std::vector<Example>& shots, const Example& query) {
  config.validate();
  tpl.validate();
  if (shots.size() != config.k_shots) {
    throw Error(ErrorCode::InvalidArgument, "expected " + std::to_string(config.k_shots) + " shots, got " +
                                                std::to_string(shots.size()));
  }
  if (config.include_roman) {
    const auto names = placeholders_in(tpl.query_block);
    if (std::find(names.begin(), names.end(), "input_roman") == names.end()) {
      template_error("template for " + tpl.task.name + " has no {{input_roman}} line");
    }
  }
  std::string out = tpl.header;
  out += "\n\n";
  for (const auto& shot : shots) {
    out += render_block(tpl.example_block, config, shot);
    out += "\n\n";
  }
  out += render_block(tpl.query_block, config, query);
  return out;
}

TemplateSet parse_templates(std::string_view text, std::string_view label) {
  TemplateSet out;
  PromptTemplate* current = nullptr;
  std::string* section = nullptr;
  std::size_t line_no = 0;

  auto finish_section = [&] {
    if (!section) return;
    while (!section->empty() && section->back() == '\n') section->pop_back();
  };
  auto where = [&] { return std::string(label) + ":" + std::to_string(line_no) + ": "; };

  for (auto line : lines_of(text)) {
    ++line_no;
    if (line.starts_with("@@@")) {
      if (!section) template_error(where() + "text outside a section");
      *section += std::string(line.substr(1)) + "\n";
      continue;
    }
    if (line.starts_with("@@")) {
      finish_section();
      std::string_view directive = line.substr(2);
      while (directive.starts_with(' ')) directive.remove_prefix(1);
      while (directive.ends_with(' ') || directive.ends_with('\r')) directive.remove_suffix(1);
      if (directive.starts_with("task ")) {
        const Task task = Task::parse(directive.substr(5));
        current = &out[task.name];
        *current = PromptTemplate{task, {}, {}, {}};
        section = nullptr;
      } else if (!current) {
        template_error(where() + "section before any '@@ task'");
      } else if (directive == "header") {
        section = &current->header;
      } else if (directive == "example") {
        section = &current->example_block;
      } else if (directive == "query") {
        section = &current->query_block;
      } else {
        template_error(where() + "unknown directive '" + std::string(directive) + "'");
      }
      continue;
    }
    if (!section) {
      if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      template_error(where() + "text outside a section");
    }
    *section += std::string(line) + "\n";
  }
  finish_section();
  for (const auto& [name, tpl] : out) {
    if (tpl.example_block.empty() || tpl.query_block.empty()) {
      template_error(std::string(label) + ": task " + name + " lacks an example or query section");
    }
    tpl.validate();
  }
  return out;
}

std::string format_templates(const TemplateSet& templates) {
  auto escape = [](const std::string& block) {
    std::string out;
    for (auto line : lines_of(block)) {
      if (line.starts_with("@@")) out.push_back('@');
      out.append(line);
      out.push_back('\n');
    }
    return out;
  };
  std::string out;
  bool first = true;
  for (const auto& [name, tpl] : templates) {
    if (!first) out += "\n";
    first = false;
    out += "@@ task " + name + "\n";
    out += "@@ header\n" + escape(tpl.header);
    out += "@@ example\n" + escape(tpl.example_block);
    out += "@@ query\n" + escape(tpl.query_block);
  }
  return out;
}

std::string default_templates_text() { return std::string(kDefaultTemplates); }

const TemplateSet& default_templates() {
  static const TemplateSet templates = parse_templates(kDefaultTemplates, "built-in templates");
  return templates;
}

TemplateSet load_templates(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::TemplateParseError, "cannot open template file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  TemplateSet merged = default_templates();
  for (auto& [name, tpl] : parse_templates(ss.str(), path.string())) merged[name] = std::move(tpl);
  return merged;
}

const PromptTemplate& template_for(const TemplateSet& templates, const Task& task) {
  auto it = templates.find(task.name);
  if (it == templates.end()) template_error("no prompt template for task '" + task.name + "'");
  return it->second;
}

}  // namespace phonicl
