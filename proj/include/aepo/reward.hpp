#pragma once

// Sequence-level reward and regularizer quantities of one rollout.

#include <optional>
#include <span>
#include <string_view>

#include "aepo/stages.hpp"
#include "aepo/tasks.hpp"

namespace aepo {

/// Direction of the reflection-entropy term in the information-bottleneck
/// proxy: prose gives L_IB = -h_r - beta*C, figure gives +h_r - beta*C.
enum class IbSign { prose, figure };

std::string_view to_string(IbSign sign);
IbSign ib_sign_from_string(std::string_view name);  // throws InvalidConfig

struct RewardConfig {
  double beta = 1.0;
  double h_star = 0.67;
  bool c_as_reward = true;
  IbSign ib_sign = IbSign::prose;
  double correct_reward = 1.0;
  double format_penalty = 0.0;
  EntropyUnit entropy_unit = EntropyUnit::nats;

  void validate(int vocab_size) const;  // throws InvalidConfig
};

/// Component switches of the ablation grid. rif_on enables L_IB (and folding
/// C into the reward), ae_on enables the adaptive-entropy terms, gae_on gates
/// them on final correctness.
struct RegularizerFlags {
  bool rif_on = true;
  bool ae_on = true;
  bool gae_on = true;

  bool any() const { return rif_on || ae_on; }
  bool operator==(const RegularizerFlags&) const = default;
};

struct RewardBreakdown {
  bool parse_ok = false;
  bool correct = false;
  bool draft_correct = false;
  double c_value = 0.0;
  double h_t = 0.0;
  double h_r = 0.0;
  double f_ae_t = 0.0;
  double f_ae_r = 0.0;
  double f_gae = 0.0;
  double l_ib = 0.0;
  double l_seq = 0.0;
  double shaped_reward = 0.0;

  bool operator==(const RewardBreakdown&) const = default;
};

/// True iff the answer-stage option token maps to the label.
bool correctness(const StageSpans& spans, std::span<const Token> response, const TaskInstance& instance);

/// Contribution of the reflection to the draft -> answer transition.
double contribution_indicator(bool draft_correct, bool answer_correct);

double ib_loss(double h_r, double c_value, const RewardConfig& config);

/// -|h_bar - h_star|.
double adaptive_entropy(double h_bar, double h_star);

double gated_adaptive_entropy(double f_ae_t, double f_ae_r, bool correct);

/// L_IB - F_GAE, the per-sequence quantity that is minimized.
double sequence_objective(double l_ib, double f_gae);

double shaped_reward(bool correct, double c_value, bool parse_ok, const RewardConfig& config);

/// Scores a response given its per-token entropies under the current policy.
/// Malformed responses get zero regularizers and the format penalty.
RewardBreakdown score_response(std::span<const Token> response, std::span<const double> entropies,
                               const TaskInstance& instance, const RewardConfig& config,
                               const RegularizerFlags& flags = {});

}  // namespace aepo
