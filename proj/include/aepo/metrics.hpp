#pragma once

// Reflection novelty, training curves and cross-run comparison.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aepo/policy.hpp"
#include "aepo/rollout.hpp"
#include "aepo/tasks.hpp"
#include "aepo/trainer.hpp"

namespace aepo {

/// Positional n-gram containment of a reflection in a reference. A proxy for
/// a corpus-level creativity index, not a reimplementation of one.
struct EchoScore {
  double overlap = 0.0;
  double novelty = 1.0;
  int n = 3;
};

/// overlap = (# reflection n-gram positions whose n-gram occurs anywhere in
/// the reference) / (# reflection n-gram positions). Throws
/// std::invalid_argument when the reflection is shorter than n or n < 1.
EchoScore echo_overlap(std::span<const Token> reflection, std::span<const Token> reference, int n = 3);

struct EchoSample {
  std::int64_t prompt_id = 0;
  bool parse_ok = false;
  bool correct = false;
  /// Set when the reflection has at least n tokens.
  std::optional<EchoScore> score;
};

/// One sampled response per instance; the reference is the question followed
/// by the response's thinking stage.
std::vector<EchoSample> sample_echo(const PolicyParams& params, std::span<const TaskInstance> instances,
                                    double temperature, double top_p, int max_response_len, std::uint64_t seed,
                                    int n = 3);

std::string echo_to_jsonl(const std::vector<EchoSample>& samples);
std::vector<EchoSample> echo_from_jsonl(std::string_view text);

struct LabeledRun {
  std::string label;
  RunLog log;
  std::vector<EchoSample> echo;
};

/// Last non-null eval accuracy.
std::optional<double> final_accuracy(const RunLog& log);
/// Mean |h_r - h_star| over the last ceil(10%) of records with h_r set.
std::optional<double> entropy_gap(const RunLog& log, double h_star);
/// Mean novelty over correct samples that have a score.
std::optional<double> mean_novelty(const std::vector<EchoSample>& samples);

/// {label: {final_acc, entropy_gap, mean_novelty}}, pretty-printed JSON.
std::string compare_report(const std::vector<LabeledRun>& runs, double h_star);

/// Writes <out_prefix>.csv (step, <label>_reward, <label>_h_r, ...) and
/// <out_prefix>.svg. Throws std::invalid_argument when `runs` is empty or any
/// log is empty.
void export_curves(const std::vector<LabeledRun>& runs, const std::filesystem::path& out_prefix);
std::string curves_csv(const std::vector<LabeledRun>& runs);
std::string curves_svg(const std::vector<LabeledRun>& runs);

}  // namespace aepo
