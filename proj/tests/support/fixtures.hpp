#pragma once

// Shared test fixtures: a tiny task/model configuration and independent
// reference implementations used as oracles.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "aepo/optimizer.hpp"
#include "aepo/policy.hpp"
#include "aepo/rollout.hpp"
#include "aepo/tasks.hpp"
#include "aepo/trainer.hpp"

namespace fixtures {

using namespace aepo;

/// Two-option tasks over four symbols and a one-layer, width-4 attention
/// model: under 1000 parameters.
inline RunConfig tiny_run_config(std::uint64_t seed = 11, Arch arch = Arch::tiny_attention) {
  RunConfig c;
  c.seed = seed;
  c.task.n_facts = 8;
  c.task.n_options = 2;
  c.task.n_symbols = 4;
  c.task.n_train = 64;
  c.task.n_eval = 16;
  c.model.arch = arch;
  c.model.hidden_dim = 4;
  c.model.n_layers = 1;
  c.model.n_heads = 1;
  c.model.context_len = 26;
  c.sampling.max_response_len = 12;
  c.train.prompts_per_step = 2;
  c.train.total_steps = 3;
  c.train.eval_every = 2;
  c.train.echo_instances = 4;
  c.warmup.steps = 0;
  return c;
}

/// Behavior-clones the tiny model so that most sampled responses parse.
inline PolicyParams tiny_warm_params(const RunConfig& cfg, const Dataset& data, int steps = 300) {
  WarmupConfig w;
  w.steps = steps;
  w.lr = 3e-2;
  w.batch_size = 8;
  w.min_parse_rate = 0.0;
  return sft_warmup(init_params(cfg.model_config(), cfg.seed), data.train, data.eval, w,
                    cfg.sampling.max_response_len, cfg.seed);
}

inline PolicyParams perturbed(const PolicyParams& p, double scale, std::uint64_t seed) {
  PolicyParams out = p;
  Rng rng(seed);
  for (double& v : out.values) v += scale * rng.normal();
  return out;
}

/// Recomputes old log-probs and entropies of a rollout under `params` with
/// the plain (non-tape) forward pass.
inline void rescore_under(Rollout& r, const PolicyParams& params) {
  TokenSeq prefix = r.prompt;
  r.old_logprobs.clear();
  r.entropies.clear();
  for (Token t : r.response_tokens) {
    const Distribution d = forward_distribution(params, prefix);
    double h = 0.0;
    for (double p : d.probs) {
      if (p > 0.0) h -= p * std::log(p);
    }
    r.old_logprobs.push_back(std::log(d.probs[static_cast<std::size_t>(t)]));
    r.entropies.push_back(h);
    prefix.push_back(t);
  }
}

/// Loss by a per-token loop over plain forward passes.
inline LossBreakdown naive_loss(const std::vector<RolloutGroup>& groups, const PolicyParams& params,
                                const LossSpec& spec) {
  LossBreakdown out;
  const double n_groups = static_cast<double>(groups.size());
  for (const auto& group : groups) {
    const double g = static_cast<double>(group.size());
    double mean = 0.0;
    for (const auto& r : group) mean += r.breakdown.shaped_reward;
    mean /= g;
    double var = 0.0, lo = 1e300, hi = -1e300;
    for (const auto& r : group) {
      const double x = r.breakdown.shaped_reward;
      var += (x - mean) * (x - mean);
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    const double sd = std::max(std::sqrt(var / g), 1e-8);
    double group_tokens = 0.0;
    for (const auto& r : group) group_tokens += static_cast<double>(r.response_tokens.size());

    for (const auto& r : group) {
      const double adv = (hi - lo < 1e-12) ? 0.0 : (r.breakdown.shaped_reward - mean) / sd;
      const double len = static_cast<double>(r.response_tokens.size());
      const double w = spec.normalization == Normalization::token ? 1.0 / (group_tokens * n_groups)
                                                                  : 1.0 / (len * g * n_groups);
      const double w_reg = spec.normalize_regularizer ? w : 1.0 / (g * n_groups);

      TokenSeq prefix = r.prompt;
      std::vector<double> ent;
      double s = 0.0;
      for (std::size_t t = 0; t < r.response_tokens.size(); ++t) {
        const Distribution d = forward_distribution(params, prefix);
        const Token tok = r.response_tokens[t];
        const double ratio = std::exp(std::log(d.probs[static_cast<std::size_t>(tok)]) - r.old_logprobs[t]);
        const double clipped = std::min(std::max(ratio, 1.0 - spec.clip.eps_low), 1.0 + spec.clip.eps_high);
        s += std::min(ratio * adv, clipped * adv);
        double h = 0.0;
        for (double p : d.probs) {
          if (p > 0.0) h -= p * std::log(p);
        }
        ent.push_back(h);
        prefix.push_back(tok);
      }
      out.surrogate += w * s;

      const RewardBreakdown& b = r.breakdown;
      if (spec.regularizers && b.parse_ok && r.spans) {
        const auto mean_over = [&ent](const IndexRange& span) {
          double acc = 0.0;
          for (std::size_t i = span.begin; i < span.end; ++i) acc += ent[i];
          return acc / static_cast<double>(span.size());
        };
        const double h_t = mean_over(r.spans->thinking);
        const double h_r = mean_over(r.spans->reflection);
        double l = 0.0;
        if (spec.flags.rif_on) {
          l += (spec.reward.ib_sign == IbSign::prose ? -h_r : h_r) - spec.reward.beta * b.c_value;
        }
        if (spec.flags.ae_on && (!spec.flags.gae_on || b.correct)) {
          l += std::abs(h_t - spec.reward.h_star) + std::abs(h_r - spec.reward.h_star);
        }
        out.regularizer += w_reg * l;
      }
    }
  }
  out.total = out.regularizer - out.surrogate;
  return out;
}

/// Groups sampled from `sampler`, scored, with old log-probs taken under
/// `old` (which may differ from the sampler to move ratios off 1).
inline std::vector<RolloutGroup> sampled_groups(const PolicyParams& sampler, const PolicyParams& old,
                                                const std::vector<TaskInstance>& instances, int n_groups, int g,
                                                std::uint64_t seed, const RewardConfig& reward = {},
                                                const RegularizerFlags& flags = {}) {
  SamplingConfig sc;
  sc.group_size = g;
  sc.max_response_len = 12;
  std::vector<RolloutGroup> out;
  for (int k = 0; k < n_groups; ++k) {
    const TaskInstance& inst = instances[static_cast<std::size_t>(k) % instances.size()];
    RolloutGroup group = sample_group(sampler, inst, sc, derive_seed(seed, {static_cast<std::uint64_t>(k)}));
    for (auto& r : group) {
      rescore_under(r, old);
      score_rollout(r, inst, reward, flags);
    }
    out.push_back(std::move(group));
  }
  return out;
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace fixtures
