// Copyright 2026 The CFC Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cfc/prompts.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace cfc {
namespace {

namespace fs = std::filesystem;

constexpr std::string_view kEasyReject =
    R"(Paper:
{{TEXT}}
Task:
There are following categories:
{{{ID_LABELS}}}.
Is the topic of this paper in the category list? Provide your answer and a confidence number between [0-1].
Choose False only if you are very certain that the paper does not belong to any of the listed categories.
If True, specify which category in
{{{ID_LABELS}}} the paper belongs to. If False, provide a suggested category that is not in the category list.
[{"answer": <True or False>, "confidence": <confidence_here>, "category": <category_here>}]
)";

constexpr std::string_view kHardReject =
    R"(Paper:
{{TEXT}}
Task:
There are the following categories:
[{{ID_LABELS}}].
Is the topic of this paper in the category list?
If True, specify which category in
[{{ID_LABELS}}] the paper belongs to.
If False, provide a suggested category that is not in the category list. The suggested category includes but not limited to the following: [{{CANDIDATE_LABELS}}, ...]
Provide your answer, a confidence number between [0-1], and suggested category.
[{"answer": <True or False>, "confidence": <confidence_here>, "category": <category_here>}]
)";

constexpr std::string_view kMajorCategory =
    R"(Task:
There are following listed Paper topics:
{{{ID_LABELS}}}.
Which major category do these themes belong to?
Output : [{"answer": <your_answer>}].
)";

constexpr std::string_view kCandidateOod =
    R"(Task:
Generate {{N}} possible paper {{TOPIC_NOUN}} that belong to {{MAJOR_CATEGORY}} but are distinct from the provided topics {{{ID_LABELS}}}.
Output : [{"answer": <your_answer>}, {"answer": <your_answer>}, ...].
)";

constexpr std::string_view kOodClassification =
    R"(Paper:
{{TEXT}}
Task:
There are the following categories:
{{{OOD_LABELS}}}.
Which category does this paper belong to? Provide your best guess with a confidence ranging from 0 to 1. For example:
[{"answer": <category_here>, "confidence": <confidence_here>}]
)";

struct TemplateFile {
  const char* name;
  std::string PromptTemplates::*field;
};

constexpr TemplateFile kFiles[] = {
    {"easy_reject.txt", &PromptTemplates::easy_reject},
    {"hard_reject.txt", &PromptTemplates::hard_reject},
    {"major_category.txt", &PromptTemplates::major_category},
    {"candidate_ood.txt", &PromptTemplates::candidate_ood},
    {"ood_classification.txt", &PromptTemplates::ood_classification},
};

bool IsPlaceholderChar(char c) { return (c >= 'A' && c <= 'Z') || c == '_'; }

// Index one past the bracket matching raw[start], or npos.
std::size_t MatchBracket(std::string_view raw, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < raw.size(); ++i) {
    const char c = raw[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        break;
      case '[':
      case '{':
        stack.push_back(c);
        break;
      case ']':
      case '}':
        if (stack.empty() || (c == ']') != (stack.back() == '[')) return std::string_view::npos;
        stack.pop_back();
        if (stack.empty()) return i + 1;
        break;
      default:
        break;
    }
  }
  return std::string_view::npos;
}

std::string NormalizePythonLiterals(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < s.size();) {
    const char c = s[i];
    if (in_string) {
      out.push_back(c);
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      ++i;
      continue;
    }
    if (c == '"') {
      in_string = true;
      out.push_back(c);
      ++i;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < s.size() && std::isalnum(static_cast<unsigned char>(s[j]))) ++j;
      const auto word = s.substr(i, j - i);
      if (word == "True") {
        out += "true";
      } else if (word == "False") {
        out += "false";
      } else if (word == "None") {
        out += "null";
      } else {
        out += word;
      }
      i = j;
      continue;
    }
    out.push_back(c);
    ++i;
  }
  return out;
}

}  // namespace

PromptTemplates PromptTemplates::Defaults() {
  return {std::string(kEasyReject), std::string(kHardReject), std::string(kMajorCategory),
          std::string(kCandidateOod), std::string(kOodClassification)};
}

namespace {

// Leading lines that start with '#', plus one blank separator line, are not
// part of the template.
std::string StripCommentHeader(const std::string& text) {
  std::size_t pos = 0;
  bool any = false;
  while (pos < text.size() && text[pos] == '#') {
    const auto nl = text.find('\n', pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    any = true;
  }
  if (any && pos < text.size() && text[pos] == '\n') ++pos;
  return text.substr(pos);
}

}  // namespace

PromptTemplates PromptTemplates::LoadDir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("template directory not found: " + dir.string());
  PromptTemplates t = Defaults();
  for (const auto& f : kFiles) {
    const auto path = dir / f.name;
    if (!fs::exists(path)) continue;
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    t.*(f.field) = StripCommentHeader(ss.str());
  }
  return t;
}

void PromptTemplates::SaveDir(const fs::path& dir) const {
  fs::create_directories(dir);
  for (const auto& f : kFiles) {
    std::ofstream out(dir / f.name, std::ios::binary);
    out << this->*(f.field);
  }
}

std::string RenderTemplate(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.compare(i, 2, "{{") == 0) {
      std::size_t j = i + 2;
      while (j < tmpl.size() && IsPlaceholderChar(tmpl[j])) ++j;
      if (j > i + 2 && tmpl.compare(j, 2, "}}") == 0) {
        const std::string name(tmpl.substr(i + 2, j - i - 2));
        const auto it = vars.find(name);
        if (it == vars.end()) throw ValidationError("template placeholder {{" + name + "}} has no value");
        out += it->second;
        i = j + 2;
        continue;
      }
    }
    out.push_back(tmpl[i]);
    ++i;
  }
  return out;
}

std::string RenderLabelList(const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += ", ";
    const auto& l = labels[i];
    if (l.find(',') == std::string::npos) {
      out += l;
      continue;
    }
    out.push_back('"');
    for (const char c : l) {
      if (c == '"' || c == '\\') out.push_back('\\');
      out.push_back(c);
    }
    out.push_back('"');
  }
  return out;
}

std::string TruncateText(std::string_view text, std::size_t budget) {
  if (text.size() <= budget) return std::string(text);
  std::size_t cut = budget;
  // Back off UTF-8 continuation bytes.
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return std::string(text.substr(0, cut)) + "...";
}

std::string NormalizeCategory(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (const char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::optional<nlohmann::json> ExtractFirstJson(std::string_view raw) {
  for (std::size_t start = 0; start < raw.size(); ++start) {
    if (raw[start] != '[' && raw[start] != '{') continue;
    const std::size_t end = MatchBracket(raw, start);
    if (end == std::string_view::npos) continue;
    const auto candidate = NormalizePythonLiterals(raw.substr(start, end - start));
    auto parsed = nlohmann::json::parse(candidate, nullptr, /*allow_exceptions=*/false);
    if (!parsed.is_discarded()) return parsed;
  }
  return std::nullopt;
}

}  // namespace cfc
