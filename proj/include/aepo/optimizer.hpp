#pragma once

// Group-relative clipped policy-gradient objectives and the AdamW update.

#include <span>
#include <string_view>
#include <vector>

#include "aepo/policy.hpp"
#include "aepo/reward.hpp"
#include "aepo/rollout.hpp"

namespace aepo {

struct ClipConfig {
  double eps_low = 0.2;
  double eps_high = 0.28;

  void validate() const;  // throws InvalidConfig
};

struct GroupAdvantages {
  std::vector<double> values;
  bool degenerate = false;
};

/// (R_i - mean) / max(popstd, 1e-8); all zeros when max - min < 1e-12.
/// Throws std::invalid_argument for fewer than two rewards.
GroupAdvantages group_advantages(std::span<const double> rewards);

double importance_ratio(double logprob_new, double logprob_old);

/// min(r * adv, clip(r, 1 - eps_low, 1 + eps_high) * adv).
double clipped_token_term(double r, double adv, const ClipConfig& clip);

/// token: each group is scaled by 1 / sum_i |O_i|. sequence: each rollout by
/// 1 / (G |O_i|). Groups are then averaged.
enum class Normalization { token, sequence };

std::string_view to_string(Normalization n);
Normalization normalization_from_string(std::string_view name);  // throws InvalidConfig

struct LossSpec {
  ClipConfig clip;
  Normalization normalization = Normalization::token;
  bool regularizers = true;
  /// false scales each rollout's L(O_i) by 1/G instead of the token weight.
  bool normalize_regularizer = true;
  RewardConfig reward;
  RegularizerFlags flags;
};

struct LossBreakdown {
  double total = 0.0;
  double surrogate = 0.0;
  double regularizer = 0.0;
  double mean_reward = 0.0;
  /// Means of H_T / H_R over well-formed rollouts; NaN when there are none.
  double h_t = 0.0;
  double h_r = 0.0;
  int n_well_formed = 0;
  int n_correct = 0;
  int n_rollouts = 0;
};

/// Evaluates total = regularizer - surrogate under `params` for scored
/// groups. Advantages come from each rollout's shaped reward. When `grad` is
/// non-null it receives d(total)/d(params); per-rollout gradients are summed
/// in rollout order so the result does not depend on `workers`.
/// Throws std::invalid_argument for an empty batch.
LossBreakdown evaluate_loss(const std::vector<RolloutGroup>& groups, const PolicyParams& params,
                            const LossSpec& spec, std::vector<double>* grad = nullptr, int workers = 1);

LossBreakdown aepo_loss(const std::vector<RolloutGroup>& groups, const PolicyParams& params,
                        const ClipConfig& clip, const RewardConfig& reward_cfg, const RegularizerFlags& flags = {},
                        std::vector<double>* grad = nullptr, int workers = 1);

/// Symmetric clip, sequence normalization, no regularizer.
LossBreakdown grpo_loss(const std::vector<RolloutGroup>& groups, const PolicyParams& params, double eps,
                        std::vector<double>* grad = nullptr, int workers = 1);

/// Asymmetric clip, token normalization, no regularizer.
LossBreakdown dapo_loss(const std::vector<RolloutGroup>& groups, const PolicyParams& params,
                        const ClipConfig& clip, std::vector<double>* grad = nullptr, int workers = 1);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamW {
 public:
  AdamW(std::size_t n_params, AdamWConfig config = {});

  /// One bias-corrected update of `params` in place.
  void step(std::span<double> params, std::span<const double> grad, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace aepo
