#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aepo/policy.hpp"
#include "aepo/reward.hpp"
#include "aepo/stages.hpp"
#include "aepo/tasks.hpp"

namespace aepo {

struct SamplingConfig {
  int group_size = 5;
  double temperature = 1.0;
  double top_p = 0.99;
  int max_response_len = 24;

  void validate() const;  // throws InvalidConfig
};

struct Rollout {
  std::int64_t prompt_id = 0;
  TokenSeq prompt;
  TokenSeq response_tokens;
  /// log pi_old(token) under the untruncated temperature-1 distribution.
  std::vector<double> old_logprobs;
  /// Entropy (nats) of the distribution that produced each response token.
  std::vector<double> entropies;
  /// Empty when the response is malformed.
  std::optional<StageSpans> spans;
  RewardBreakdown breakdown;
};

using RolloutGroup = std::vector<Rollout>;

/// Generates one response from `params` with the given sampling settings.
/// Stops after <END> or max_response_len tokens.
Rollout generate(const PolicyParams& params, const TaskInstance& instance, double temperature, double top_p,
                 int max_response_len, Rng& rng);

/// G rollouts from the frozen snapshot. Sample i draws from the stream
/// derive_seed(stream_seed, {i}), so the group does not depend on `workers`.
/// Throws std::invalid_argument when prompt + max_response_len exceeds the
/// context.
RolloutGroup sample_group(const PolicyParams& params_old, const TaskInstance& instance,
                          const SamplingConfig& config, std::uint64_t stream_seed, int workers = 1);

/// Fills spans and breakdown from the recorded tokens and entropies.
void score_rollout(Rollout& rollout, const TaskInstance& instance, const RewardConfig& config,
                   const RegularizerFlags& flags = {});

/// One JSON object per rollout: prompt_id, tokens, old_logprobs, spans,
/// breakdown.
std::string rollouts_to_jsonl(const std::vector<Rollout>& rollouts);

}  // namespace aepo
