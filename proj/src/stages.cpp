#include "aepo/stages.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace aepo {

namespace {

constexpr std::array<const char*, vocab::kNumControl> kControlNames = {"<T>", "<D>", "<R>", "<A>", "<END>"};

}  // namespace

StageSpans segment(std::span<const Token> trace) {
  std::array<std::size_t, vocab::kNumControl> at{};
  std::array<int, vocab::kNumControl> seen{};
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const Token t = trace[i];
    if (!vocab::is_control(t)) continue;
    const auto c = static_cast<std::size_t>(t);
    if (++seen[c] > 1) {
      throw FormatError(std::string("duplicated control token ") + kControlNames[c]);
    }
    at[c] = i;
  }
  for (std::size_t c = 0; c < at.size(); ++c) {
    if (seen[c] == 0) {
      throw FormatError(std::string("missing control token ") + kControlNames[c]);
    }
  }
  for (std::size_t c = 1; c < at.size(); ++c) {
    if (at[c] < at[c - 1]) {
      throw FormatError(std::string("control token ") + kControlNames[c] + " out of order");
    }
  }
  if (at[vocab::kThink] != 0) {
    throw FormatError("trace must start with <T>");
  }
  if (at[vocab::kEnd] + 1 != trace.size()) {
    throw FormatError("tokens after <END>");
  }

  StageSpans spans;
  spans.thinking = {at[vocab::kThink] + 1, at[vocab::kDraft]};
  spans.draft = {at[vocab::kDraft] + 1, at[vocab::kReflect]};
  spans.reflection = {at[vocab::kReflect] + 1, at[vocab::kAnswer]};
  spans.answer = {at[vocab::kAnswer] + 1, at[vocab::kEnd]};

  if (spans.thinking.empty()) throw FormatError("empty thinking stage");
  if (spans.reflection.empty()) throw FormatError("empty reflection stage");
  if (spans.draft.size() != 1 || !vocab::is_letter(trace[spans.draft.begin])) {
    throw FormatError("draft stage must be exactly one option token");
  }
  if (spans.answer.size() != 1 || !vocab::is_letter(trace[spans.answer.begin])) {
    throw FormatError("answer stage must be exactly one option token");
  }
  return spans;
}

StageSpans segment_response(std::span<const Token> response) {
  std::vector<Token> trace;
  trace.reserve(response.size() + 1);
  trace.push_back(vocab::kThink);
  trace.insert(trace.end(), response.begin(), response.end());
  StageSpans s = segment(trace);
  for (IndexRange* r : {&s.thinking, &s.draft, &s.reflection, &s.answer}) {
    r->begin -= 1;
    r->end -= 1;
  }
  return s;
}

double token_entropy(const Distribution& dist, EntropyUnit unit) {
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  h = std::max(h, 0.0);
  return unit == EntropyUnit::bits ? h / std::numbers::ln2 : h;
}

double stage_mean_entropy(std::span<const double> entropies, IndexRange span) {
  if (span.empty()) {
    throw std::invalid_argument("stage_mean_entropy: empty span");
  }
  if (span.end > entropies.size() || span.begin > span.end) {
    throw std::invalid_argument("stage_mean_entropy: span outside the sequence");
  }
  double s = 0.0;
  for (std::size_t i = span.begin; i < span.end; ++i) s += entropies[i];
  return s / static_cast<double>(span.size());
}

}  // namespace aepo
