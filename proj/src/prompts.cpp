#include "sticker_tts/prompts.hpp"

#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

namespace sticker_tts {

namespace {

const char* const kExtractorTemplate =
    R"tpl(Given the solution provided below, Generate an abstract of the key conditions that help solve the problem. The abstract should include both the key conditions and the question.

Abstract Format:

**Conditions:**

1. [Condition 1]

2. [Condition 2]

... (add more conditions as needed)

**Question:**

[Clearly state what is being asked.]

Requirements:

1. **Conditions**

   - Only retain the key steps that directly impact solving the problem, ignoring lengthy derivations and irrelevant calculations.

   - Each step must have a clear mathematical significance, meaning it makes a substantial contribution to the final conclusion.

   - The conditions can come from the reasoning process.

   - Write each condition on a separate line, numbered sequentially.

   - Remove repetitive calculations and obvious equation transformations.

   - **List as many conditions as possible**

   - **Do not record direct substitutions of common formulas unless they play a key role in the derivation.**

   - **Each condition must be atomic and indivisible** (i.e., it cannot be divided into two sub-conditions).

   - **Each condition must refer to something clearly and without ambiguity.**!!!

2. **Question:**

   - Summarize what is being asked in one clear sentence.

   - Remove all known conditions.

solution to question:

{solution}

Please provide your output strictly following the abstract format without other unnecessary words.)tpl";

const char* const kModifierTemplate =
    R"tpl(Given a question and the abstract generated from the solution, carefully check and verify whether the extracted key conditions contain any errors in reasoning or incorrect conditions.

### Step 1: Verify and refine the **Conditions** section.

- **Conditions can come from the reasoning process.**

- Check if any condition includes unnecessary reasoning or incorrect logic. If it exists, it must be refined.

- Ensure all conditions are atomic and indivisible.

- Ensure all conditions must refer to something clearly and without ambiguity.

- If a condition is derived through reasoning, please strictly verify whether it is correct and contributes to solving the problem. If there is a problem, refine it.

- If any key condition is missing or incorrectly formulated, supplement or refine it.

### Step 2: Verify the **Question** section.

- Ensure the question summary is concise and does not include any known conditions.

- If incorrect, provide a refined version.

### Step 3: Generate the output.

- you should output your refined abstract in the following format:

  **Conditions:** 1. [Corrected Condition 1]

  2. [Corrected Condition 2]

  ... (more conditions if necessary)

  **Question:** [Refined question summary]

Here is the given question:

{question}

Here is the given abstract:

{sticker}

Please provide your output strictly following the step 3 without other unnecessary words.)tpl";

const char* const kUtilizerTemplate =
    R"tpl(Given a question:

{question}

Given a sticker that may be correct or incorrect:

{sticker}

The previous answer that may be correct or incorrect:

{answer}

Please reason step by step and put the final answer in the \boxed{}.)tpl";

const char* const kBoxedInstruction =
    "Please reason step by step and put the final answer in the \\boxed{}.";

bool allowed_placeholder(std::string_view name) {
  return name == "solution" || name == "question" || name == "sticker" ||
         name == "answer";
}

// Scans for {word} spans with a lowercase identifier inside; empty braces
// (e.g. \boxed{}) are not placeholders.
std::vector<std::pair<size_t, std::string>> find_placeholders(
    std::string_view text) {
  std::vector<std::pair<size_t, std::string>> found;
  for (size_t i = 0; i + 1 < text.size(); ++i) {
    if (text[i] != '{') continue;
    size_t j = i + 1;
    while (j < text.size() &&
           (std::islower(static_cast<unsigned char>(text[j])) || text[j] == '_')) {
      ++j;
    }
    if (j > i + 1 && j < text.size() && text[j] == '}') {
      found.emplace_back(i, std::string(text.substr(i + 1, j - i - 1)));
      i = j;
    }
  }
  return found;
}

}  // namespace

bool placeholders_valid(std::string_view template_text) {
  for (const auto& [pos, name] : find_placeholders(template_text)) {
    if (!allowed_placeholder(name)) return false;
  }
  return true;
}

std::string render(const PromptTemplate& tpl,
                   const std::map<std::string, std::string>& args) {
  std::string out;
  out.reserve(tpl.template_text.size());
  std::string_view text = tpl.template_text;
  size_t last = 0;
  for (const auto& [pos, name] : find_placeholders(text)) {
    if (!allowed_placeholder(name)) {
      throw ParseError("template uses unknown placeholder {" + name + "}");
    }
    auto it = args.find(name);
    if (it == args.end()) {
      throw ParseError("no value for placeholder {" + name + "}");
    }
    out.append(text.substr(last, pos - last));
    out.append(it->second);
    last = pos + name.size() + 2;
  }
  out.append(text.substr(last));
  return out;
}

const PromptTemplate& extractor_template() {
  static const PromptTemplate tpl{Role::Extractor, kExtractorTemplate,
                                  TemplateSource::BuiltIn};
  return tpl;
}

const PromptTemplate& modifier_template() {
  static const PromptTemplate tpl{Role::Modifier, kModifierTemplate,
                                  TemplateSource::BuiltIn};
  return tpl;
}

const PromptTemplate& utilizer_template() {
  static const PromptTemplate tpl{Role::Utilizer, kUtilizerTemplate,
                                  TemplateSource::BuiltIn};
  return tpl;
}

std::string render_extractor(std::string_view solution) {
  if (solution.empty()) throw EmptyInputError("render_extractor: empty solution");
  return render(extractor_template(), {{"solution", std::string(solution)}});
}

std::string render_modifier(std::string_view question, std::string_view sticker) {
  if (question.empty()) throw EmptyInputError("render_modifier: empty question");
  if (sticker.empty()) throw EmptyInputError("render_modifier: empty sticker");
  return render(modifier_template(), {{"question", std::string(question)},
                                      {"sticker", std::string(sticker)}});
}

std::string render_utilizer(std::string_view question, std::string_view sticker,
                            const Answer& prev_answer) {
  if (question.empty()) throw EmptyInputError("render_utilizer: empty question");
  if (sticker.empty()) throw EmptyInputError("render_utilizer: empty sticker");
  std::string answer = prev_answer.raw ? *prev_answer.raw
                                       : std::string(kNoPreviousAnswer);
  return render(utilizer_template(), {{"question", std::string(question)},
                                      {"sticker", std::string(sticker)},
                                      {"answer", std::move(answer)}});
}

std::string render_initial(std::string_view question) {
  if (question.empty()) throw EmptyInputError("render_initial: empty question");
  std::string out(question);
  out += "\n\n";
  out += kBoxedInstruction;
  return out;
}

namespace {

struct HeaderMatch {
  size_t begin;      // start of the header in the text
  size_t value_pos;  // first char after the colon and any trailing markers
};

const std::regex& header_regex(const std::string& word) {
  static const std::regex conditions(
      "\\*{0,2}\\s*conditions\\s*\\*{0,2}\\s*:", std::regex::icase);
  static const std::regex question("\\*{0,2}\\s*question\\s*\\*{0,2}\\s*:",
                                   std::regex::icase);
  static const std::regex requirements(
      "\\*{0,2}\\s*requirements\\s*\\*{0,2}\\s*:", std::regex::icase);
  if (word == "conditions") return conditions;
  if (word == "question") return question;
  return requirements;
}

// Finds "word:" allowing ** markers around the word and any letter case,
// e.g. "**Conditions:**", "conditions :", "**Question**:".
std::optional<HeaderMatch> find_header(std::string_view text,
                                       const std::string& word,
                                       size_t from = 0) {
  const std::regex& re = header_regex(word);
  std::cmatch m;
  if (!std::regex_search(text.data() + from, text.data() + text.size(), m, re)) {
    return std::nullopt;
  }
  size_t begin = from + static_cast<size_t>(m.position(0));
  size_t end = begin + static_cast<size_t>(m.length(0));
  // skip markers/space directly after the colon
  while (end < text.size() && (text[end] == '*' || text[end] == ' ')) ++end;
  return HeaderMatch{begin, end};
}

std::string trim_copy(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_numbered(std::string_view block) {
  std::vector<std::string> out;
  std::string current;
  bool in_item = false;
  std::istringstream lines{std::string(block)};
  std::string line;
  static const std::regex item_re("^\\s*\\d+\\.\\s*(.*)$");
  while (std::getline(lines, line)) {
    std::smatch m;
    if (std::regex_match(line, m, item_re)) {
      if (in_item && !trim_copy(current).empty()) out.push_back(trim_copy(current));
      current = m[1].str();
      in_item = true;
    } else if (in_item && !trim_copy(line).empty()) {
      if (!current.empty()) current += " ";
      current += trim_copy(line);
    }
  }
  if (in_item && !trim_copy(current).empty()) out.push_back(trim_copy(current));
  return out;
}

Sticker unparsed(std::string_view text) {
  Sticker s;
  s.raw = std::string(text);
  s.parse_failed = true;
  return s;
}

}  // namespace

Sticker parse_sticker(std::string_view text) {
  auto cond = find_header(text, "conditions");
  if (!cond) return unparsed(text);
  auto quest = find_header(text, "question", cond->value_pos);
  if (!quest) return unparsed(text);

  Sticker s;
  s.raw = std::string(text);
  std::string_view cond_block =
      text.substr(cond->value_pos, quest->begin - cond->value_pos);
  s.conditions = split_numbered(cond_block);

  std::string_view rest = text.substr(quest->value_pos);
  auto req = find_header(rest, "requirements");
  if (req) {
    s.question_summary = trim_copy(rest.substr(0, req->begin));
    std::string requirements = trim_copy(rest.substr(req->value_pos));
    if (!requirements.empty()) s.requirements = std::move(requirements);
  } else {
    s.question_summary = trim_copy(rest);
  }

  if (s.conditions.empty() || s.question_summary.empty()) {
    return unparsed(text);
  }
  return s;
}

PromptTemplate load_template_file(const std::string& path, Role role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open template file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  PromptTemplate tpl{role, buf.str(), TemplateSource::Custom};
  if (!placeholders_valid(tpl.template_text)) {
    throw ParseError("template file uses placeholders outside "
                     "{solution},{question},{sticker},{answer}: " + path);
  }
  return tpl;
}

}  // namespace sticker_tts
