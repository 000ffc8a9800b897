#pragma once

// Synthetic multiple-choice fact-lookup tasks.
//
// A fixed fact table maps two-symbol keys (prefix, suffix) to value symbols;
// facts are grouped by prefix. A question shows the facts behind every option
// (all sharing the query's prefix), the query key, and the lettered options:
//
//   p s1 v1  p s2 v2 ...  ? p s*  A va  B vb ...
//
// The answer is the letter whose value is the one stored under the query key.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "aepo/rng.hpp"
#include "aepo/tokens.hpp"

namespace aepo {

/// Length of every oracle response produced by gold_response.
inline constexpr int kGoldResponseLength = 12;

struct TaskSpec {
  int n_facts = 192;
  int n_options = 4;
  int n_symbols = 32;
  int n_train = 2000;
  int n_eval = 200;
  int context_len = 256;
  std::uint64_t seed = 0;

  /// Facts per prefix group; the query's distractors come from its group.
  int group_size() const { return n_options + 2; }
  int vocab_size() const { return vocab::vocab_size_for(n_symbols); }
  /// Rendered prompt length including the trailing <T> cue.
  int prompt_length() const { return 5 * n_options + 4; }
  void validate() const;  // throws InvalidConfig
};

struct TaskInstance {
  std::int64_t id = 0;
  TokenSeq question_tokens;
  TokenSeq option_tokens;
  int label = 0;

  int n_options() const { return static_cast<int>(option_tokens.size()); }
  bool operator==(const TaskInstance&) const = default;
};

struct Dataset {
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> eval;
};

/// Pure function of the TaskSpec. Eval questions never repeat a train question.
Dataset generate_dataset(const TaskSpec& spec);

/// True iff `answer_option` is the instance's label; out-of-range is false.
bool verify(int answer_option, const TaskInstance& instance);

/// question_tokens followed by the <T> cue that opens the thinking stage.
TokenSeq render_prompt(const TaskInstance& instance);

/// A gold four-stage response (everything generated after the <T> cue):
///   p s v <D> X <R> p s v <A> X <END>
/// With probability `draft_error_rate` the draft names a wrong option that the
/// answer stage corrects.
TokenSeq gold_response(const TaskInstance& instance, Rng& rng, double draft_error_rate = 0.0);

// JSONL: one {id, question_tokens, option_tokens, label} object per line.
std::string to_jsonl(const std::vector<TaskInstance>& instances);
std::vector<TaskInstance> from_jsonl(std::string_view text);
void write_jsonl(const std::filesystem::path& path, const std::vector<TaskInstance>& instances);
std::vector<TaskInstance> read_jsonl(const std::filesystem::path& path);

}  // namespace aepo
