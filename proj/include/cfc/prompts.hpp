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

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfc/common.hpp"

namespace cfc {

/// Prompt text with {{NAME}} placeholders. Recognized names: TEXT, ID_LABELS,
/// CANDIDATE_LABELS, OOD_LABELS, MAJOR_CATEGORY, N, TOPIC_NOUN.
struct PromptTemplates {
  std::string easy_reject;
  std::string hard_reject;
  std::string major_category;
  std::string candidate_ood;
  std::string ood_classification;

  static PromptTemplates Defaults();

  /// Defaults overridden by whichever of easy_reject.txt, hard_reject.txt,
  /// major_category.txt, candidate_ood.txt, ood_classification.txt exist.
  /// A leading block of '#' lines is skipped.
  static PromptTemplates LoadDir(const std::filesystem::path& dir);

  /// Writes all five templates as text files.
  void SaveDir(const std::filesystem::path& dir) const;
};

/// Single pass over `tmpl`; substituted text is never rescanned. Throws
/// ValidationError for placeholders without a value.
std::string RenderTemplate(std::string_view tmpl, const std::map<std::string, std::string>& vars);

/// "a, b, c" with labels containing commas wrapped in double quotes.
std::string RenderLabelList(const std::vector<std::string>& labels);

/// Keeps at most `budget` bytes (cut on a UTF-8 boundary) and appends "..."
/// when anything was dropped.
std::string TruncateText(std::string_view text, std::size_t budget);

/// Trim, lowercase, collapse internal whitespace.
std::string NormalizeCategory(std::string_view s);

class ParseError : public Error {
 public:
  using Error::Error;
};

/// First parseable JSON array or object embedded in free text. Python-style
/// True/False/None literals outside strings are accepted.
std::optional<nlohmann::json> ExtractFirstJson(std::string_view raw);

}  // namespace cfc
