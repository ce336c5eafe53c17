#include "sticker_tts/answers.hpp"

#include <algorithm>
#include <cctype>

namespace sticker_tts {

namespace {

constexpr std::string_view kBoxed = "\\boxed{";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string collapse_ws(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_run = false;
  for (char c : s) {
    if (is_space(c)) {
      in_run = true;
      continue;
    }
    if (in_run && !out.empty()) out.push_back(' ');
    in_run = false;
    out.push_back(c);
  }
  return out;
}

std::string strip_dollars(std::string_view s) {
  if (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
    return trim(s.substr(1, s.size() - 2));
  }
  return std::string(s);
}

std::string remove_all(std::string s, std::string_view needle) {
  size_t pos = 0;
  while ((pos = s.find(needle, pos)) != std::string::npos) {
    s.erase(pos, needle.size());
  }
  return s;
}

// Position one past the matching close brace for the '{' at `open`, or npos.
size_t match_brace(std::string_view s, size_t open) {
  int depth = 0;
  for (size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') ++depth;
    else if (s[i] == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

std::string rewrite_frac(std::string s) {
  for (std::string_view cmd : {"\\dfrac", "\\frac"}) {
    size_t pos = 0;
    while ((pos = s.find(cmd, pos)) != std::string::npos) {
      size_t a_open = pos + cmd.size();
      if (a_open >= s.size() || s[a_open] != '{') {
        pos = a_open;
        continue;
      }
      size_t a_end = match_brace(s, a_open);
      if (a_end == std::string::npos || a_end >= s.size() || s[a_end] != '{') {
        pos = a_open;
        continue;
      }
      size_t b_end = match_brace(s, a_end);
      if (b_end == std::string::npos) {
        pos = a_open;
        continue;
      }
      std::string num = s.substr(a_open + 1, a_end - a_open - 2);
      std::string den = s.substr(a_end + 1, b_end - a_end - 2);
      s.replace(pos, b_end - pos, num + "/" + den);
      // continue scanning from the rewritten text; nested fracs inside num/den
      // are picked up on the next find
    }
  }
  return s;
}

std::string normalize_integer(std::string s) {
  if (s.empty()) return s;
  size_t i = 0;
  bool neg = false;
  if (s[0] == '+' || s[0] == '-') {
    neg = s[0] == '-';
    i = 1;
  }
  if (i == s.size()) return s;
  for (size_t j = i; j < s.size(); ++j) {
    if (!std::isdigit(static_cast<unsigned char>(s[j]))) return s;
  }
  while (i + 1 < s.size() && s[i] == '0') ++i;
  std::string digits = s.substr(i);
  if (digits == "0") return "0";
  return neg ? "-" + digits : digits;
}

std::string canonicalize_pass(std::string_view raw) {
  std::string s = collapse_ws(trim(raw));
  s = strip_dollars(s);
  s = remove_all(std::move(s), "\\left");
  s = remove_all(std::move(s), "\\right");
  s = trim(s);
  s = rewrite_frac(std::move(s));
  s = collapse_ws(trim(s));
  if (!s.empty() && s.back() == '.') {
    s.pop_back();
    s = trim(s);
  }
  return normalize_integer(std::move(s));
}

}  // namespace

std::optional<std::string> extract_boxed(std::string_view text) {
  // Last balanced occurrence wins; unbalanced trailing occurrences are
  // skipped in favor of earlier ones.
  size_t search_end = text.size();
  while (true) {
    size_t pos = text.rfind(kBoxed, search_end == 0 ? 0 : search_end - 1);
    if (pos == std::string_view::npos) return std::nullopt;
    size_t open = pos + kBoxed.size() - 1;  // the '{'
    size_t close = match_brace(text, open);
    if (close != std::string_view::npos) {
      return std::string(text.substr(open + 1, close - open - 2));
    }
    if (pos == 0) return std::nullopt;
    search_end = pos;
  }
}

std::string canonicalize(std::string_view raw) {
  std::string cur(raw);
  // Every rewrite shrinks or preserves the string, so this terminates.
  for (;;) {
    std::string next = canonicalize_pass(cur);
    if (next == cur) return cur;
    cur = std::move(next);
  }
}

VoteResult majority_vote(const std::vector<std::string>& ballots) {
  if (ballots.empty()) throw EmptyBallotsError("majority_vote: empty ballots");
  VoteResult r;
  r.total_ballots = static_cast<int>(ballots.size());
  std::map<std::string, size_t> last_pos;
  for (size_t i = 0; i < ballots.size(); ++i) {
    ++r.counts[ballots[i]];
    last_pos[ballots[i]] = i;
  }
  int best = 0;
  for (const auto& [value, count] : r.counts) best = std::max(best, count);
  std::string winner;
  size_t winner_pos = 0;
  bool have_winner = false;
  int tied = 0;
  for (const auto& [value, count] : r.counts) {
    if (count != best) continue;
    ++tied;
    size_t pos = last_pos[value];
    if (!have_winner || pos > winner_pos) {
      winner = value;
      winner_pos = pos;
      have_winner = true;
    }
  }
  r.winner = winner;
  r.tie_broken = tied > 1;
  return r;
}

bool equals_gold(std::string_view a, std::string_view gold) {
  return canonicalize(a) == canonicalize(gold);
}

Answer answer_from_text(std::string_view completion_text) {
  Answer a;
  a.raw = extract_boxed(completion_text);
  if (a.raw) a.canonical = canonicalize(*a.raw);
  return a;
}

}  // namespace sticker_tts
