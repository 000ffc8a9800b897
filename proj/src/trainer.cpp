#include "aepo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "aepo/parallel.hpp"
#include "json.hpp"

namespace aepo {

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::aepo: return "aepo";
    case Algorithm::grpo: return "grpo";
    case Algorithm::dapo: return "dapo";
  }
  return "aepo";
}

Algorithm algorithm_from_string(std::string_view name) {
  if (name == "aepo") return Algorithm::aepo;
  if (name == "grpo") return Algorithm::grpo;
  if (name == "dapo") return Algorithm::dapo;
  throw InvalidConfig("unknown algorithm '" + std::string(name) + "' (expected one of: aepo, grpo, dapo)");
}

void TrainConfig::validate() const {
  if (prompts_per_step < 1) throw InvalidConfig("train.prompts_per_step must be >= 1");
  if (!(lr > 0.0)) throw InvalidConfig("train.lr must be > 0");
  if (warmup_steps < 0) throw InvalidConfig("train.warmup_steps must be >= 0");
  if (total_steps < 0) throw InvalidConfig("train.total_steps must be >= 1");
  if (eval_every < 1) throw InvalidConfig("train.eval_every must be >= 1");
  if (echo_instances < 0) throw InvalidConfig("train.echo_instances must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw InvalidConfig("train.adam betas must be in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw InvalidConfig("train.adam.eps must be > 0");
  if (!(adam.weight_decay >= 0.0)) throw InvalidConfig("train.adam.weight_decay must be >= 0");
}

void WarmupConfig::validate() const {
  if (steps < 0) throw InvalidConfig("warmup.steps must be >= 0");
  if (batch_size < 1) throw InvalidConfig("warmup.batch_size must be >= 1");
  if (!(lr > 0.0)) throw InvalidConfig("warmup.lr must be > 0");
  if (!(draft_error_rate >= 0.0 && draft_error_rate <= 1.0)) {
    throw InvalidConfig("warmup.draft_error_rate must be in [0, 1]");
  }
  if (probes < 1) throw InvalidConfig("warmup.probes must be >= 1");
  if (!(min_parse_rate >= 0.0 && min_parse_rate <= 1.0)) {
    throw InvalidConfig("warmup.min_parse_rate must be in [0, 1]");
  }
}

TaskSpec RunConfig::task_spec() const {
  TaskSpec t = task;
  t.seed = seed;
  t.context_len = model.context_len;
  return t;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  m.vocab_size = task.vocab_size();
  return m;
}

void RunConfig::validate() const {
  const TaskSpec t = task_spec();
  t.validate();
  model_config().validate();
  sampling.validate();
  reward.validate(t.vocab_size());
  clip.validate();
  train.validate();
  warmup.validate();
  if (sampling.max_response_len < kGoldResponseLength) {
    throw InvalidConfig("sampling.max_response_len must be >= " + std::to_string(kGoldResponseLength));
  }
  if (t.prompt_length() + sampling.max_response_len > model.context_len) {
    throw InvalidConfig("prompt length " + std::to_string(t.prompt_length()) + " plus sampling.max_response_len " +
                        std::to_string(sampling.max_response_len) + " exceeds model.context_len " +
                        std::to_string(model.context_len));
  }
}

std::string to_json_line(const RunLogRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["mean_reward"] = r.mean_reward;
  j["h_t"] = opt(r.h_t);
  j["h_r"] = opt(r.h_r);
  j["loss_total"] = r.loss_total;
  j["loss_surrogate"] = r.loss_surrogate;
  j["loss_reg"] = r.loss_reg;
  j["eval_acc"] = opt(r.eval_acc);
  return j.dump();
}

RunLogRecord runlog_record_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  auto opt = [&j](const char* key) -> std::optional<double> {
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  RunLogRecord r;
  r.step = j.at("step").get<int>();
  r.mean_reward = j.at("mean_reward").get<double>();
  r.h_t = opt("h_t");
  r.h_r = opt("h_r");
  r.loss_total = j.at("loss_total").get<double>();
  r.loss_surrogate = j.at("loss_surrogate").get<double>();
  r.loss_reg = j.at("loss_reg").get<double>();
  r.eval_acc = opt("eval_acc");
  return r;
}

WarmupInsufficient::WarmupInsufficient(double parse_rate, double required)
    : std::runtime_error("warm-up insufficient: greedy parse rate " + std::to_string(parse_rate) + " < " +
                         std::to_string(required)),
      parse_rate_(parse_rate) {}

NonFiniteLoss::NonFiniteLoss(int step, std::string detail)
    : std::runtime_error("non-finite loss at step " + std::to_string(step) + ": " + detail), step_(step) {}

double learning_rate(int step, const TrainConfig& config) {
  if (config.warmup_steps <= 0) return config.lr;
  const double ramp = static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
  return config.lr * std::min(1.0, ramp);
}

namespace {

Rollout greedy(const PolicyParams& params, const TaskInstance& inst, int max_response_len) {
  Rng unused(0);
  return generate(params, inst, 0.0, 1.0, max_response_len, unused);
}

void add_into(std::vector<double>& acc, const std::vector<double>& g) {
  for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
}

}  // namespace

double greedy_parse_rate(const PolicyParams& params, const std::vector<TaskInstance>& instances,
                         int max_response_len) {
  if (instances.empty()) return 0.0;
  int ok = 0;
  for (const auto& inst : instances) {
    const Rollout r = greedy(params, inst, max_response_len);
    try {
      segment_response(r.response_tokens);
      ++ok;
    } catch (const FormatError&) {
    }
  }
  return static_cast<double>(ok) / static_cast<double>(instances.size());
}

PolicyParams sft_warmup(const PolicyParams& params, const std::vector<TaskInstance>& train_set,
                        const std::vector<TaskInstance>& probes, const WarmupConfig& config,
                        int max_response_len, std::uint64_t seed, int workers) {
  config.validate();
  if (config.steps == 0) return params;
  if (train_set.empty()) throw std::invalid_argument("sft_warmup: empty training set");

  PolicyParams out = params;
  AdamW adam(out.values.size());
  Rng rng(derive_seed(seed, {stream::kWarmup}));
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int step = 0; step < config.steps; ++step) {
    std::vector<TokenSeq> prompts(batch), targets(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& inst = train_set[rng.below(train_set.size())];
      prompts[b] = render_prompt(inst);
      targets[b] = gold_response(inst, rng, config.draft_error_rate);
    }
    std::vector<std::vector<double>> grads(batch);
    parallel_for(batch, workers, [&](std::size_t b) {
      const TokenSeq& target = targets[b];
      TokenSeq input = prompts[b];
      input.insert(input.end(), target.begin(), target.end() - 1);
      ad::Tape tape(out.values);
      const ad::Var lp = ad::log_softmax_rows(forward_logits(tape, out, input, prompts[b].size() - 1));
      std::vector<std::size_t> rows(target.size()), cols(target.size());
      for (std::size_t t = 0; t < target.size(); ++t) {
        rows[t] = t;
        cols[t] = static_cast<std::size_t>(target[t]);
      }
      const double scale = -1.0 / (static_cast<double>(target.size()) * static_cast<double>(batch));
      const ad::Var loss = scale * ad::sum(ad::pick(lp, rows, cols));
      grads[b] = tape.gradient(loss);
    });
    std::vector<double> grad(out.values.size(), 0.0);
    for (const auto& g : grads) add_into(grad, g);
    adam.step(out.values, grad, config.lr);
  }

  const std::size_t n_probes = std::min(probes.size(), static_cast<std::size_t>(config.probes));
  const std::vector<TaskInstance> probe_set(probes.begin(), probes.begin() + static_cast<std::ptrdiff_t>(n_probes));
  const double rate = greedy_parse_rate(out, probe_set, max_response_len);
  if (rate < config.min_parse_rate) throw WarmupInsufficient(rate, config.min_parse_rate);
  return out;
}

double response_accuracy(const std::vector<TokenSeq>& responses, const std::vector<TaskInstance>& instances) {
  if (responses.size() != instances.size()) {
    throw std::invalid_argument("response_accuracy: one response per instance required");
  }
  if (instances.empty()) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    try {
      const StageSpans spans = segment_response(responses[i]);
      if (correctness(spans, responses[i], instances[i])) ++correct;
    } catch (const FormatError&) {
    }
  }
  return static_cast<double>(correct) / static_cast<double>(instances.size());
}

double evaluate(const PolicyParams& params, const std::vector<TaskInstance>& eval_set, int max_response_len) {
  std::vector<TokenSeq> responses;
  responses.reserve(eval_set.size());
  for (const auto& inst : eval_set) responses.push_back(greedy(params, inst, max_response_len).response_tokens);
  return response_accuracy(responses, eval_set);
}

LossSpec loss_spec(const RunConfig& config) {
  const TrainConfig& t = config.train;
  LossSpec spec;
  spec.reward = config.reward;
  spec.clip = config.clip;
  spec.normalize_regularizer = t.normalize_regularizer;
  switch (t.algorithm) {
    case Algorithm::aepo:
      spec.normalization = Normalization::token;
      spec.regularizers = true;
      spec.flags = t.flags;
      break;
    case Algorithm::grpo:
      spec.clip = {config.clip.eps_low, config.clip.eps_low};
      spec.normalization = Normalization::sequence;
      spec.regularizers = false;
      spec.flags = {false, false, false};
      break;
    case Algorithm::dapo:
      spec.normalization = Normalization::token;
      spec.regularizers = false;
      spec.flags = {false, false, false};
      break;
  }
  if (t.normalization) spec.normalization = *t.normalization;
  return spec;
}

RegularizerFlags scoring_flags(const RunConfig& config) {
  if (config.train.algorithm == Algorithm::aepo) return config.train.flags;
  return {false, false, false};
}

RunLogRecord train_step(const RunConfig& config, const Dataset& data, PolicyParams& params, AdamW& adam,
                        int step, int workers) {
  const auto s = static_cast<std::uint64_t>(step);
  const PolicyParams params_old = params;
  const RegularizerFlags flags = scoring_flags(config);

  Rng prompt_rng(derive_seed(config.seed, {stream::kPrompts, s}));
  const auto n_prompts = static_cast<std::size_t>(config.train.prompts_per_step);
  std::vector<const TaskInstance*> prompts(n_prompts);
  for (auto& p : prompts) p = &data.train[prompt_rng.below(data.train.size())];

  std::vector<RolloutGroup> groups(n_prompts);
  for (std::size_t j = 0; j < n_prompts; ++j) {
    groups[j] = sample_group(params_old, *prompts[j], config.sampling,
                             derive_seed(config.seed, {stream::kRollout, s, j}), workers);
    for (auto& r : groups[j]) score_rollout(r, *prompts[j], config.reward, flags);
  }

  std::vector<double> grad;
  const LossBreakdown loss = evaluate_loss(groups, params, loss_spec(config), &grad, workers);
  if (!std::isfinite(loss.total)) {
    std::ostringstream msg;
    msg << "total=" << loss.total << " surrogate=" << loss.surrogate << " regularizer=" << loss.regularizer;
    throw NonFiniteLoss(step, msg.str());
  }
  for (std::size_t k = 0; k < grad.size(); ++k) {
    if (!std::isfinite(grad[k])) throw NonFiniteLoss(step, "gradient coordinate " + std::to_string(k));
  }
  adam.step(params.values, grad, learning_rate(step, config.train));

  RunLogRecord rec;
  rec.step = step;
  rec.mean_reward = loss.mean_reward;
  if (loss.n_well_formed > 0) {
    rec.h_t = loss.h_t;
    rec.h_r = loss.h_r;
  }
  rec.loss_total = loss.total;
  rec.loss_surrogate = loss.surrogate;
  rec.loss_reg = loss.regularizer;
  return rec;
}

TrainResult train(const RunConfig& config, const Dataset& data, PolicyParams init, const TrainHooks& hooks,
                  int workers) {
  config.validate();
  if (config.train.total_steps < 1) throw InvalidConfig("train.total_steps must be >= 1");
  if (data.train.empty()) throw std::invalid_argument("train: empty training set");
  if (init.config != config.model_config()) {
    throw InvalidConfig("initial parameters do not match the model config");
  }

  TrainResult out{std::move(init), {}};
  AdamW adam(out.params.values.size(), config.train.adam);
  const int total = config.train.total_steps;
  for (int step = 0; step < total; ++step) {
    RunLogRecord rec = train_step(config, data, out.params, adam, step, workers);
    if (step % config.train.eval_every == 0 || step == total - 1) {
      rec.eval_acc = evaluate(out.params, data.eval, config.sampling.max_response_len);
      if (hooks.on_checkpoint) hooks.on_checkpoint(step, out.params);
    }
    if (hooks.on_record) hooks.on_record(rec);
    out.log.push_back(rec);
  }
  return out;
}

}  // namespace aepo
