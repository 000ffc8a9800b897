#pragma once

#include <vector>

namespace aepo {

using Token = int;
using TokenSeq = std::vector<Token>;

// Fixed vocabulary layout shared by the task generator, the stage segmenter
// and the policy:
//   [0, 5)    control tokens <T> <D> <R> <A> <END>
//   [5, 13)   option letters A..H
//   13        query marker '?'
//   [14, ..)  symbol tokens used for fact keys and values
namespace vocab {

inline constexpr Token kThink = 0;
inline constexpr Token kDraft = 1;
inline constexpr Token kReflect = 2;
inline constexpr Token kAnswer = 3;
inline constexpr Token kEnd = 4;
inline constexpr int kNumControl = 5;

inline constexpr Token kFirstLetter = 5;
inline constexpr int kMaxOptions = 8;

inline constexpr Token kQuery = 13;
inline constexpr Token kFirstSymbol = 14;

constexpr bool is_control(Token t) { return t >= 0 && t < kNumControl; }
constexpr bool is_letter(Token t) { return t >= kFirstLetter && t < kFirstLetter + kMaxOptions; }
constexpr Token letter(int option) { return kFirstLetter + option; }
constexpr int option_of(Token letter_token) { return letter_token - kFirstLetter; }
constexpr Token symbol(int index) { return kFirstSymbol + index; }
constexpr int vocab_size_for(int n_symbols) { return kFirstSymbol + n_symbols; }

}  // namespace vocab
}  // namespace aepo
