#include "aepo/rollout.hpp"

#include <cmath>
#include <stdexcept>

#include "aepo/parallel.hpp"
#include "json.hpp"

namespace aepo {

void SamplingConfig::validate() const {
  if (group_size < 2) throw InvalidConfig("sampling.group_size must be >= 2");
  if (!(temperature > 0.0)) throw InvalidConfig("sampling.temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidConfig("sampling.top_p must be in (0, 1]");
  if (max_response_len < 1) throw InvalidConfig("sampling.max_response_len must be >= 1");
}

Rollout generate(const PolicyParams& params, const TaskInstance& instance, double temperature, double top_p,
                 int max_response_len, Rng& rng) {
  Rollout r;
  r.prompt_id = instance.id;
  r.prompt = render_prompt(instance);
  if (r.prompt.size() + static_cast<std::size_t>(max_response_len) >
      static_cast<std::size_t>(params.config.context_len)) {
    throw std::invalid_argument("prompt of " + std::to_string(r.prompt.size()) + " tokens plus " +
                                std::to_string(max_response_len) + " response tokens overflows context_len " +
                                std::to_string(params.config.context_len));
  }
  for (Token t : r.prompt) {
    if (t < 0 || t >= params.config.vocab_size) {
      throw std::invalid_argument("prompt token out of range for the model vocabulary");
    }
  }

  Decoder dec(params);
  std::span<const double> logits;
  for (Token t : r.prompt) logits = dec.push(t);

  for (int step = 0; step < max_response_len; ++step) {
    const std::vector<double> lp = log_softmax(logits);
    Distribution dist;
    dist.probs.resize(lp.size());
    double h = 0.0;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      dist.probs[v] = std::exp(lp[v]);
      if (dist.probs[v] > 0.0) h -= dist.probs[v] * lp[v];
    }
    const Token tok = sample_token(dist, temperature, top_p, rng);
    r.response_tokens.push_back(tok);
    r.old_logprobs.push_back(lp[static_cast<std::size_t>(tok)]);
    r.entropies.push_back(std::max(h, 0.0));
    if (tok == vocab::kEnd || step + 1 == max_response_len) break;
    logits = dec.push(tok);
  }
  return r;
}

RolloutGroup sample_group(const PolicyParams& params_old, const TaskInstance& instance,
                          const SamplingConfig& config, std::uint64_t stream_seed, int workers) {
  config.validate();
  RolloutGroup group(static_cast<std::size_t>(config.group_size));
  parallel_for(group.size(), workers, [&](std::size_t i) {
    Rng rng(derive_seed(stream_seed, {i}));
    group[i] = generate(params_old, instance, config.temperature, config.top_p, config.max_response_len, rng);
  });
  return group;
}

void score_rollout(Rollout& rollout, const TaskInstance& instance, const RewardConfig& config,
                   const RegularizerFlags& flags) {
  try {
    rollout.spans = segment_response(rollout.response_tokens);
  } catch (const FormatError&) {
    rollout.spans.reset();
  }
  rollout.breakdown = score_response(rollout.response_tokens, rollout.entropies, instance, config, flags);
}

namespace {

nlohmann::json range_json(const IndexRange& r) { return nlohmann::json::array({r.begin, r.end}); }

}  // namespace

std::string rollouts_to_jsonl(const std::vector<Rollout>& rollouts) {
  std::string out;
  for (const auto& r : rollouts) {
    nlohmann::json spans = nullptr;
    if (r.spans) {
      spans = {{"thinking", range_json(r.spans->thinking)},
               {"draft", range_json(r.spans->draft)},
               {"reflection", range_json(r.spans->reflection)},
               {"answer", range_json(r.spans->answer)}};
    }
    const auto& b = r.breakdown;
    nlohmann::json breakdown = {{"parse_ok", b.parse_ok}, {"correct", b.correct},   {"c_value", b.c_value},
                                {"h_t", b.h_t},           {"h_r", b.h_r},           {"f_ae_t", b.f_ae_t},
                                {"f_ae_r", b.f_ae_r},     {"f_gae", b.f_gae},       {"l_ib", b.l_ib},
                                {"l_seq", b.l_seq},       {"shaped_reward", b.shaped_reward}};
    nlohmann::json j = {{"prompt_id", r.prompt_id},
                        {"tokens", r.response_tokens},
                        {"old_logprobs", r.old_logprobs},
                        {"spans", spans},
                        {"breakdown", breakdown}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace aepo
