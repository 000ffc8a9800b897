#include "aepo/reward.hpp"

#include <cmath>
#include <string>

#include "aepo/policy.hpp"

namespace aepo {

std::string_view to_string(IbSign sign) { return sign == IbSign::prose ? "prose" : "figure"; }

IbSign ib_sign_from_string(std::string_view name) {
  if (name == "prose") return IbSign::prose;
  if (name == "figure") return IbSign::figure;
  throw InvalidConfig("unknown ib_sign '" + std::string(name) + "' (expected prose or figure)");
}

void RewardConfig::validate(int vocab_size) const {
  if (!(beta >= 0.0)) throw InvalidConfig("reward.beta must be >= 0");
  if (!(h_star > 0.0 && h_star < std::log(static_cast<double>(vocab_size)))) {
    throw InvalidConfig("reward.h_star must be in (0, ln vocab_size)");
  }
  if (!std::isfinite(correct_reward) || !std::isfinite(format_penalty)) {
    throw InvalidConfig("reward values must be finite");
  }
}

bool correctness(const StageSpans& spans, std::span<const Token> response, const TaskInstance& instance) {
  if (spans.answer.size() != 1 || spans.answer.begin >= response.size()) return false;
  const Token t = response[spans.answer.begin];
  return vocab::is_letter(t) && verify(vocab::option_of(t), instance);
}

double contribution_indicator(bool draft_correct, bool answer_correct) {
  if (answer_correct) return draft_correct ? 0.4 : 0.6;
  return draft_correct ? -0.3 : 0.0;
}

double ib_loss(double h_r, double c_value, const RewardConfig& config) {
  const double sign = config.ib_sign == IbSign::prose ? -1.0 : 1.0;
  return sign * h_r - config.beta * c_value;
}

double adaptive_entropy(double h_bar, double h_star) { return -std::abs(h_bar - h_star); }

double gated_adaptive_entropy(double f_ae_t, double f_ae_r, bool correct) {
  return correct ? f_ae_t + f_ae_r : 0.0;
}

double sequence_objective(double l_ib, double f_gae) { return l_ib - f_gae; }

double shaped_reward(bool correct, double c_value, bool parse_ok, const RewardConfig& config) {
  if (!parse_ok) return config.format_penalty;
  return (correct ? config.correct_reward : 0.0) + (config.c_as_reward ? c_value : 0.0);
}

RewardBreakdown score_response(std::span<const Token> response, std::span<const double> entropies,
                               const TaskInstance& instance, const RewardConfig& config,
                               const RegularizerFlags& flags) {
  RewardBreakdown b;
  StageSpans spans;
  try {
    spans = segment_response(response);
  } catch (const FormatError&) {
    b.shaped_reward = config.format_penalty;
    return b;
  }
  const double unit = config.entropy_unit == EntropyUnit::bits ? 1.0 / std::log(2.0) : 1.0;
  b.parse_ok = true;
  b.correct = correctness(spans, response, instance);
  const Token draft = response[spans.draft.begin];
  b.draft_correct = verify(vocab::option_of(draft), instance);
  b.c_value = contribution_indicator(b.draft_correct, b.correct);
  b.h_t = unit * stage_mean_entropy(entropies, spans.thinking);
  b.h_r = unit * stage_mean_entropy(entropies, spans.reflection);

  if (flags.ae_on) {
    b.f_ae_t = adaptive_entropy(b.h_t, config.h_star);
    b.f_ae_r = adaptive_entropy(b.h_r, config.h_star);
    b.f_gae = flags.gae_on ? gated_adaptive_entropy(b.f_ae_t, b.f_ae_r, b.correct) : b.f_ae_t + b.f_ae_r;
  }
  if (flags.rif_on) b.l_ib = ib_loss(b.h_r, b.c_value, config);
  b.l_seq = sequence_objective(b.l_ib, b.f_gae);

  RewardConfig shaping = config;
  shaping.c_as_reward = config.c_as_reward && flags.rif_on;
  b.shaped_reward = shaped_reward(b.correct, b.c_value, true, shaping);
  return b;
}

}  // namespace aepo
