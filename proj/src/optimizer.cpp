#include "aepo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "aepo/parallel.hpp"

namespace aepo {

void ClipConfig::validate() const {
  if (!(eps_low > 0.0 && eps_low < 1.0)) throw InvalidConfig("clip.eps_low must be in (0, 1)");
  if (!(eps_high >= eps_low)) throw InvalidConfig("clip.eps_high must be >= clip.eps_low");
}

GroupAdvantages group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) {
    throw std::invalid_argument("group_advantages: need at least two rewards");
  }
  GroupAdvantages out;
  out.values.assign(rewards.size(), 0.0);
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*hi - *lo < 1e-12) {
    out.degenerate = true;
    return out;
  }
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::max(std::sqrt(var / n), 1e-8);
  for (std::size_t i = 0; i < rewards.size(); ++i) out.values[i] = (rewards[i] - mean) / sd;
  return out;
}

double importance_ratio(double logprob_new, double logprob_old) { return std::exp(logprob_new - logprob_old); }

double clipped_token_term(double r, double adv, const ClipConfig& clip) {
  const double clipped = std::clamp(r, 1.0 - clip.eps_low, 1.0 + clip.eps_high);
  return std::min(r * adv, clipped * adv);
}

std::string_view to_string(Normalization n) { return n == Normalization::token ? "token" : "sequence"; }

Normalization normalization_from_string(std::string_view name) {
  if (name == "token") return Normalization::token;
  if (name == "sequence") return Normalization::sequence;
  throw InvalidConfig("unknown normalization '" + std::string(name) + "' (expected token or sequence)");
}

namespace {

struct Job {
  const Rollout* rollout = nullptr;
  double adv = 0.0;
  double w_surrogate = 0.0;
  double w_reg = 0.0;
  bool use_reg = false;
};

struct Term {
  double surrogate = 0.0;  // weighted
  double reg = 0.0;        // weighted
  std::vector<double> grad;
};

std::vector<std::size_t> span_indices(const IndexRange& r) {
  std::vector<std::size_t> idx(r.size());
  std::iota(idx.begin(), idx.end(), r.begin);
  return idx;
}

Term run_job(const Job& job, const PolicyParams& params, const LossSpec& spec, bool want_grad) {
  using namespace ad;
  const Rollout& r = *job.rollout;
  const std::size_t len = r.response_tokens.size();
  const std::size_t p = r.prompt.size();

  TokenSeq input = r.prompt;
  input.insert(input.end(), r.response_tokens.begin(), r.response_tokens.end() - 1);

  Tape tape(params.values);
  const Var logits = forward_logits(tape, params, input, p - 1);
  const Var lp = log_softmax_rows(logits);
  std::vector<std::size_t> rows(len), cols(len);
  for (std::size_t t = 0; t < len; ++t) {
    rows[t] = t;
    cols[t] = static_cast<std::size_t>(r.response_tokens[t]);
  }
  const Var new_lp = pick(lp, rows, cols);
  const Var ratio = exp(new_lp - tape.constant(r.old_logprobs, len, 1));
  const double lo = 1.0 - spec.clip.eps_low;
  const double hi = 1.0 + spec.clip.eps_high;
  const Var s = sum(minimum(job.adv * ratio, job.adv * clamp(ratio, lo, hi)));

  Term out;
  out.surrogate = job.w_surrogate * tape.item(s);
  Var loss = (-job.w_surrogate) * s;

  if (job.use_reg) {
    const StageSpans& spans = *r.spans;
    const Var ent = entropy_from_log_probs(lp);
    const double unit = spec.reward.entropy_unit == EntropyUnit::bits ? 1.0 / std::log(2.0) : 1.0;
    const Var h_t = unit * mean_at(ent, span_indices(spans.thinking));
    const Var h_r = unit * mean_at(ent, span_indices(spans.reflection));
    const RewardBreakdown& b = r.breakdown;

    Var l_seq = tape.scalar(0.0);
    if (spec.flags.rif_on) {
      const double sign = spec.reward.ib_sign == IbSign::prose ? -1.0 : 1.0;
      l_seq = affine(h_r, sign, -spec.reward.beta * b.c_value);
    }
    if (spec.flags.ae_on && (!spec.flags.gae_on || b.correct)) {
      const Var dist_t = abs(h_t - spec.reward.h_star);
      const Var dist_r = abs(h_r - spec.reward.h_star);
      l_seq = l_seq + dist_t + dist_r;  // minus F_GAE
    }
    out.reg = job.w_reg * tape.item(l_seq);
    loss = loss + job.w_reg * l_seq;
  }
  if (want_grad) out.grad = tape.gradient(loss);
  return out;
}

}  // namespace

LossBreakdown evaluate_loss(const std::vector<RolloutGroup>& groups, const PolicyParams& params,
                            const LossSpec& spec, std::vector<double>* grad, int workers) {
  if (groups.empty()) throw std::invalid_argument("loss: empty batch");
  const double n_groups = static_cast<double>(groups.size());

  LossBreakdown out;
  std::vector<Job> jobs;
  double h_t_sum = 0.0, h_r_sum = 0.0, reward_sum = 0.0;
  for (const auto& group : groups) {
    if (group.size() < 2) throw std::invalid_argument("loss: every group needs at least two rollouts");
    std::vector<double> rewards;
    std::size_t group_tokens = 0;
    for (const auto& r : group) {
      if (r.response_tokens.empty() || r.old_logprobs.size() != r.response_tokens.size()) {
        throw std::invalid_argument("loss: rollout without tokens or with mismatched old_logprobs");
      }
      rewards.push_back(r.breakdown.shaped_reward);
      group_tokens += r.response_tokens.size();
    }
    const GroupAdvantages adv = group_advantages(rewards);
    const double g = static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      const Rollout& r = group[i];
      const RewardBreakdown& b = r.breakdown;
      ++out.n_rollouts;
      reward_sum += b.shaped_reward;
      if (b.parse_ok) {
        ++out.n_well_formed;
        h_t_sum += b.h_t;
        h_r_sum += b.h_r;
      }
      if (b.correct) ++out.n_correct;

      Job job;
      job.rollout = &r;
      job.adv = adv.values[i];
      job.w_surrogate = spec.normalization == Normalization::token
                            ? 1.0 / (static_cast<double>(group_tokens) * n_groups)
                            : 1.0 / (static_cast<double>(r.response_tokens.size()) * g * n_groups);
      job.w_reg = spec.normalize_regularizer ? job.w_surrogate : 1.0 / (g * n_groups);
      const bool gate_open = !spec.flags.gae_on || b.correct;
      job.use_reg = spec.regularizers && b.parse_ok && r.spans.has_value() &&
                    (spec.flags.rif_on || (spec.flags.ae_on && gate_open));
      if (job.adv == 0.0 && !job.use_reg) continue;  // contributes exactly zero
      jobs.push_back(job);
    }
  }
  out.mean_reward = reward_sum / static_cast<double>(out.n_rollouts);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.h_t = out.n_well_formed > 0 ? h_t_sum / out.n_well_formed : nan;
  out.h_r = out.n_well_formed > 0 ? h_r_sum / out.n_well_formed : nan;

  std::vector<Term> terms(jobs.size());
  const bool want_grad = grad != nullptr;
  if (want_grad) grad->assign(params.values.size(), 0.0);

  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      Term t = run_job(jobs[j], params, spec, want_grad);
      if (want_grad) {
        for (std::size_t k = 0; k < t.grad.size(); ++k) (*grad)[k] += t.grad[k];
      }
      terms[j].surrogate = t.surrogate;
      terms[j].reg = t.reg;
    }
  } else {
    parallel_for(jobs.size(), workers, [&](std::size_t j) { terms[j] = run_job(jobs[j], params, spec, want_grad); });
    if (want_grad) {
      for (const auto& t : terms) {
        for (std::size_t k = 0; k < t.grad.size(); ++k) (*grad)[k] += t.grad[k];
      }
    }
  }
  for (const auto& t : terms) {
    out.surrogate += t.surrogate;
    out.regularizer += t.reg;
  }
  out.total = out.regularizer - out.surrogate;
  return out;
}

LossBreakdown aepo_loss(const std::vector<RolloutGroup>& groups, const PolicyParams& params,
                        const ClipConfig& clip, const RewardConfig& reward_cfg, const RegularizerFlags& flags,
                        std::vector<double>* grad, int workers) {
  LossSpec spec;
  spec.clip = clip;
  spec.reward = reward_cfg;
  spec.flags = flags;
  return evaluate_loss(groups, params, spec, grad, workers);
}

LossBreakdown grpo_loss(const std::vector<RolloutGroup>& groups, const PolicyParams& params, double eps,
                        std::vector<double>* grad, int workers) {
  LossSpec spec;
  spec.clip = {eps, eps};
  spec.normalization = Normalization::sequence;
  spec.regularizers = false;
  return evaluate_loss(groups, params, spec, grad, workers);
}

LossBreakdown dapo_loss(const std::vector<RolloutGroup>& groups, const PolicyParams& params,
                        const ClipConfig& clip, std::vector<double>* grad, int workers) {
  LossSpec spec;
  spec.clip = clip;
  spec.regularizers = false;
  return evaluate_loss(groups, params, spec, grad, workers);
}

AdamW::AdamW(std::size_t n_params, AdamWConfig config) : cfg_(config), m_(n_params, 0.0), v_(n_params, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw std::invalid_argument("AdamW: size mismatch");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    params[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * params[i]);
  }
}

}  // namespace aepo
