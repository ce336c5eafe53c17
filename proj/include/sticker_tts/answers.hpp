// Boxed-answer extraction, canonicalization, and majority voting.
// All functions here are pure.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sticker_tts/core.hpp"

namespace sticker_tts {

struct VoteResult {
  std::string winner;
  std::map<std::string, int> counts;
  int total_ballots = 0;
  bool tie_broken = false;

  bool operator==(const VoteResult&) const = default;
};

// Contents of the LAST balanced `\boxed{...}` in `text`; nullopt when no
// balanced occurrence exists. Brace matching is plain depth counting.
std::optional<std::string> extract_boxed(std::string_view text);

// Normalization pipeline, applied in order: trim; collapse whitespace runs;
// strip enclosing $...$; drop \left/\right; rewrite \frac{a}{b} (and \dfrac)
// to a/b; strip one trailing '.'; normalize base-10 integers (no leading
// zeros, no '+'). Idempotent: the pass repeats until a fixed point, which the
// strictly shrinking rewrites reach in at most a couple of rounds.
std::string canonicalize(std::string_view raw);

// Plurality winner over canonical ballots. Ties are broken by the LATEST
// occurrence position among the tied values (later iterations are more
// refined), so the result is deterministic. Throws EmptyBallotsError.
VoteResult majority_vote(const std::vector<std::string>& ballots);

// Exact string equality after canonicalizing both sides.
bool equals_gold(std::string_view a, std::string_view gold);

// extract_boxed + canonicalize in one step, as every trace consumer needs.
Answer answer_from_text(std::string_view completion_text);

}  // namespace sticker_tts
