#pragma once

// Warm-up behavior cloning, the RL loop and greedy evaluation.

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "aepo/optimizer.hpp"
#include "aepo/policy.hpp"
#include "aepo/reward.hpp"
#include "aepo/rollout.hpp"
#include "aepo/tasks.hpp"

namespace aepo {

enum class Algorithm { aepo, grpo, dapo };

std::string_view to_string(Algorithm a);
/// Throws InvalidConfig naming the accepted values.
Algorithm algorithm_from_string(std::string_view name);

struct TrainConfig {
  Algorithm algorithm = Algorithm::aepo;
  int prompts_per_step = 16;  // large-model setting: 64
  double lr = 3e-4;           // large-model setting: 1e-6
  int warmup_steps = 10;
  int total_steps = 0;
  int eval_every = 50;
  RegularizerFlags flags;
  /// Unset picks token normalization for aepo/dapo and sequence for grpo.
  std::optional<Normalization> normalization;
  bool normalize_regularizer = true;
  AdamWConfig adam;
  /// Eval instances sampled once at the end for the echo metric.
  int echo_instances = 200;

  void validate() const;  // throws InvalidConfig
};

struct WarmupConfig {
  int steps = 2000;
  int batch_size = 16;
  double lr = 3e-3;
  double draft_error_rate = 0.25;
  int probes = 100;
  double min_parse_rate = 0.99;

  void validate() const;  // throws InvalidConfig
};

/// Every setting of a run. All randomness derives from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  TaskSpec task;
  ModelConfig model;
  SamplingConfig sampling;
  RewardConfig reward;
  ClipConfig clip;
  TrainConfig train;
  WarmupConfig warmup;

  /// task.seed and model vocabulary/context follow the other sections.
  TaskSpec task_spec() const;
  ModelConfig model_config() const;
  void validate() const;  // throws InvalidConfig
};

struct RunLogRecord {
  int step = 0;
  double mean_reward = 0.0;
  std::optional<double> h_t;
  std::optional<double> h_r;
  double loss_total = 0.0;
  double loss_surrogate = 0.0;
  double loss_reg = 0.0;
  std::optional<double> eval_acc;

  bool operator==(const RunLogRecord&) const = default;
};

using RunLog = std::vector<RunLogRecord>;

std::string to_json_line(const RunLogRecord& record);
RunLogRecord runlog_record_from_json(std::string_view line);

class WarmupInsufficient : public std::runtime_error {
 public:
  WarmupInsufficient(double parse_rate, double required);
  double parse_rate() const { return parse_rate_; }

 private:
  double parse_rate_;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(int step, std::string detail);
  int step() const { return step_; }

 private:
  int step_;
};

double learning_rate(int step, const TrainConfig& config);

/// Fraction of greedy decodes that segment without a FormatError.
double greedy_parse_rate(const PolicyParams& params, const std::vector<TaskInstance>& instances,
                         int max_response_len);

/// Teacher-forced cross-entropy on oracle traces. Zero steps returns `params`
/// unchanged; otherwise throws WarmupInsufficient when the greedy parse rate
/// on `probes` stays below config.min_parse_rate.
PolicyParams sft_warmup(const PolicyParams& params, const std::vector<TaskInstance>& train_set,
                        const std::vector<TaskInstance>& probes, const WarmupConfig& config,
                        int max_response_len, std::uint64_t seed, int workers = 1);

/// Fraction of responses that segment and answer their instance correctly.
double response_accuracy(const std::vector<TokenSeq>& responses, const std::vector<TaskInstance>& instances);

/// Greedy accuracy; malformed decodes count as wrong.
double evaluate(const PolicyParams& params, const std::vector<TaskInstance>& eval_set, int max_response_len);

struct TrainHooks {
  std::function<void(const RunLogRecord&)> on_record;
  std::function<void(int step, const PolicyParams&)> on_checkpoint;
};

struct TrainResult {
  PolicyParams params;
  RunLog log;
};

/// The loss an algorithm optimizes under `config`.
LossSpec loss_spec(const RunConfig& config);
/// The regularizer flags used when scoring rollouts for the run's algorithm.
RegularizerFlags scoring_flags(const RunConfig& config);

/// One step: snapshot, sample, score, loss, update. Returns the log record
/// without eval_acc. Throws NonFiniteLoss.
RunLogRecord train_step(const RunConfig& config, const Dataset& data, PolicyParams& params, AdamW& adam,
                        int step, int workers = 1);

/// Runs config.train.total_steps steps from `init`. Evaluates and
/// checkpoints at step 0, every eval_every steps and at the last step.
TrainResult train(const RunConfig& config, const Dataset& data, PolicyParams init, const TrainHooks& hooks = {},
                  int workers = 1);

}  // namespace aepo
