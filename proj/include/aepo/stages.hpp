#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>

#include "aepo/policy.hpp"
#include "aepo/tokens.hpp"

namespace aepo {

/// Half-open token index range.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  bool operator==(const IndexRange&) const = default;
};

/// Thinking, draft, reflection and answer spans of one response. Control
/// tokens are never inside a span.
struct StageSpans {
  IndexRange thinking;
  IndexRange draft;
  IndexRange reflection;
  IndexRange answer;

  bool operator==(const StageSpans&) const = default;
};

/// Raised for responses that do not follow <T> .. <D> X <R> .. <A> X <END>.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class EntropyUnit { nats, bits };

/// Segments a full trace that starts with <T> and ends with <END>. Each
/// control token must appear exactly once and in order; draft and answer hold
/// exactly one option letter; thinking and reflection are non-empty. Spans
/// index into `trace`.
StageSpans segment(std::span<const Token> trace);

/// Segments a generated response whose <T> cue was the last prompt token.
/// Spans index into `response`.
StageSpans segment_response(std::span<const Token> response);

/// Shannon entropy of a distribution, 0 log 0 = 0.
double token_entropy(const Distribution& dist, EntropyUnit unit = EntropyUnit::nats);

/// Arithmetic mean of `entropies` over `span`. Throws std::invalid_argument for
/// an empty span or one reaching past the sequence.
double stage_mean_entropy(std::span<const double> entropies, IndexRange span);

}  // namespace aepo
