// The three role prompts and the initial-response prompt, plus structured
// sticker parsing. The shipped templates are immutable; custom templates with
// the same placeholder syntax can be loaded from plain-text files.
#pragma once

#include <map>
#include <string>
#include <string_view>

#include "sticker_tts/core.hpp"

namespace sticker_tts {

enum class TemplateSource { BuiltIn, Custom };

// Placeholders are single-pass: substituted values are never rescanned, so a
// solution containing a literal "{question}" survives verbatim.
struct PromptTemplate {
  Role role = Role::Utilizer;
  std::string template_text;
  TemplateSource source = TemplateSource::Custom;
};

// Allowed placeholder names: solution, question, sticker, answer.
bool placeholders_valid(std::string_view template_text);

// Generic single-pass renderer. Throws ParseError if the template references
// a placeholder that is missing from `args` or one outside the allowed set.
std::string render(const PromptTemplate& tpl,
                   const std::map<std::string, std::string>& args);

// Shipped defaults.
const PromptTemplate& extractor_template();
const PromptTemplate& modifier_template();
const PromptTemplate& utilizer_template();

// Substituted when the previous answer is absent.
inline constexpr std::string_view kNoPreviousAnswer =
    "No answer was produced in the previous attempt.";

// All renderers throw EmptyInputError on an empty required argument.
std::string render_extractor(std::string_view solution);
std::string render_modifier(std::string_view question, std::string_view sticker);
std::string render_utilizer(std::string_view question, std::string_view sticker,
                            const Answer& prev_answer);
// Question followed by the utilizer prompt's closing instruction line.
std::string render_initial(std::string_view question);

// Tolerant Conditions/Question/Requirements split (optional ** markers, any
// case). Never throws; on failure returns a Sticker with parse_failed set and
// raw preserved byte-for-byte.
Sticker parse_sticker(std::string_view text);

// Custom template from a plain-text file; validates the placeholder set.
PromptTemplate load_template_file(const std::string& path, Role role);

}  // namespace sticker_tts
