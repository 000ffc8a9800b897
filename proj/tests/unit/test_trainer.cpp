#include <cmath>
#include <vector>

#include "aepo/trainer.hpp"
#include "doctest.h"
#include "support/fixtures.hpp"

using namespace aepo;

namespace {

struct Warm {
  RunConfig cfg = fixtures::tiny_run_config();
  Dataset data = generate_dataset(cfg.task_spec());
  PolicyParams params = fixtures::tiny_warm_params(cfg, data);
};

const Warm& warm() {
  static const Warm w;
  return w;
}

}  // namespace

TEST_CASE("learning rate ramps linearly then stays constant") {
  TrainConfig t;
  CHECK(learning_rate(0, t) == doctest::Approx(3e-5).epsilon(1e-15));
  CHECK(learning_rate(9, t) == doctest::Approx(3e-4).epsilon(1e-15));
  CHECK(learning_rate(10000, t) == 3e-4);
  t.warmup_steps = 0;
  CHECK(learning_rate(0, t) == 3e-4);
}

TEST_CASE("zero warm-up steps returns the parameters unchanged") {
  const RunConfig cfg = fixtures::tiny_run_config();
  const Dataset data = generate_dataset(cfg.task_spec());
  const PolicyParams p = init_params(cfg.model_config(), 1);
  WarmupConfig w;
  w.steps = 0;
  CHECK(sft_warmup(p, data.train, data.eval, w, 12, 1).values == p.values);
}

TEST_CASE("warm-up is deterministic and signals an unparseable policy") {
  const RunConfig cfg = fixtures::tiny_run_config();
  const Dataset data = generate_dataset(cfg.task_spec());
  const PolicyParams p = init_params(cfg.model_config(), 1);
  WarmupConfig w;
  w.steps = 20;
  w.batch_size = 4;
  w.min_parse_rate = 0.0;
  const PolicyParams a = sft_warmup(p, data.train, data.eval, w, 12, 5);
  const PolicyParams b = sft_warmup(p, data.train, data.eval, w, 12, 5, 3);
  CHECK(a.values == b.values);
  CHECK(a.values != p.values);

  w.steps = 1;
  w.min_parse_rate = 1.0;
  CHECK_THROWS_AS(sft_warmup(p, data.train, data.eval, w, 12, 5), WarmupInsufficient);
}

TEST_CASE("tiny warm-up teaches the response format") {
  const Warm& w = warm();
  CHECK(greedy_parse_rate(w.params, w.data.eval, 12) >= 0.9);
}

TEST_CASE("accuracy of scripted responses") {
  TaskSpec spec;
  spec.n_facts = 48;
  spec.n_symbols = 16;
  spec.n_train = 2000;
  spec.n_eval = 10;
  spec.seed = 3;
  const Dataset d = generate_dataset(spec);
  Rng rng(4);

  std::vector<TokenSeq> gold, guessed, broken;
  for (const auto& inst : d.train) {
    gold.push_back(gold_response(inst, rng, 0.3));
    TokenSeq g = gold.back();
    g[10] = vocab::letter(static_cast<int>(rng.below(4)));  // answer slot
    guessed.push_back(g);
    TokenSeq b = gold.back();
    b.erase(b.begin() + 5);  // drop <R>
    broken.push_back(b);
  }
  CHECK(response_accuracy(gold, d.train) == 1.0);
  // 2000 uniform guesses: binomial std is about 0.0097.
  CHECK(std::abs(response_accuracy(guessed, d.train) - 0.25) < 0.04);
  CHECK(response_accuracy(broken, d.train) == 0.0);
  CHECK_THROWS_AS(response_accuracy({}, d.train), std::invalid_argument);
}

TEST_CASE("greedy evaluation is a fraction and deterministic") {
  const Warm& w = warm();
  const double a = evaluate(w.params, w.data.eval, 12);
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);
  CHECK(evaluate(w.params, w.data.eval, 12) == a);
}

TEST_CASE("algorithms pick their loss settings") {
  RunConfig cfg = fixtures::tiny_run_config();
  cfg.train.algorithm = Algorithm::grpo;
  LossSpec s = loss_spec(cfg);
  CHECK(s.normalization == Normalization::sequence);
  CHECK_FALSE(s.regularizers);
  CHECK(s.clip.eps_high == s.clip.eps_low);
  CHECK(scoring_flags(cfg) == RegularizerFlags{false, false, false});

  cfg.train.algorithm = Algorithm::dapo;
  s = loss_spec(cfg);
  CHECK(s.normalization == Normalization::token);
  CHECK_FALSE(s.regularizers);
  CHECK(s.clip.eps_high == 0.28);

  cfg.train.algorithm = Algorithm::aepo;
  cfg.train.flags = {true, false, true};
  s = loss_spec(cfg);
  CHECK(s.regularizers);
  CHECK(s.flags == RegularizerFlags{true, false, true});
  CHECK(scoring_flags(cfg) == cfg.train.flags);
  cfg.train.normalization = Normalization::sequence;
  CHECK(loss_spec(cfg).normalization == Normalization::sequence);

  CHECK(algorithm_from_string("dapo") == Algorithm::dapo);
  CHECK_THROWS_WITH_AS(algorithm_from_string("ppo"), doctest::Contains("aepo, grpo, dapo"), InvalidConfig);
}

TEST_CASE("grpo and a stripped-down aepo share the step-0 loss") {
  const Warm& w = warm();
  RunConfig grpo = w.cfg;
  grpo.train.algorithm = Algorithm::grpo;
  RunConfig aepo = w.cfg;
  aepo.train.algorithm = Algorithm::aepo;
  aepo.train.flags = {false, false, false};
  aepo.clip = {0.2, 0.2};
  aepo.train.normalization = Normalization::sequence;

  PolicyParams pa = w.params, pb = w.params;
  AdamW aa(pa.values.size()), ab(pb.values.size());
  const RunLogRecord ra = train_step(grpo, w.data, pa, aa, 0);
  const RunLogRecord rb = train_step(aepo, w.data, pb, ab, 0);
  CHECK(ra == rb);
  CHECK(pa.values == pb.values);
}

TEST_CASE("logged means are the means over the step's rollouts") {
  const Warm& w = warm();
  RunConfig cfg = w.cfg;
  cfg.train.prompts_per_step = 4;
  PolicyParams p = w.params;
  AdamW adam(p.values.size());
  const int step = 3;
  const RunLogRecord rec = train_step(cfg, w.data, p, adam, step);

  // Replay the step's documented random streams.
  const auto s = static_cast<std::uint64_t>(step);
  Rng prompt_rng(derive_seed(cfg.seed, {stream::kPrompts, s}));
  double reward = 0.0, h_t = 0.0, h_r = 0.0;
  int n = 0, well_formed = 0;
  for (std::size_t j = 0; j < 4; ++j) {
    const TaskInstance& inst = w.data.train[prompt_rng.below(w.data.train.size())];
    RolloutGroup g = sample_group(w.params, inst, cfg.sampling, derive_seed(cfg.seed, {stream::kRollout, s, j}));
    for (auto& r : g) {
      score_rollout(r, inst, cfg.reward, scoring_flags(cfg));
      reward += r.breakdown.shaped_reward;
      ++n;
      if (r.breakdown.parse_ok) {
        h_t += r.breakdown.h_t;
        h_r += r.breakdown.h_r;
        ++well_formed;
      }
    }
  }
  REQUIRE(well_formed > 0);
  CHECK(std::abs(rec.mean_reward - reward / n) < 1e-12);
  CHECK(std::abs(*rec.h_t - h_t / well_formed) < 1e-12);
  CHECK(std::abs(*rec.h_r - h_r / well_formed) < 1e-12);
  CHECK(std::abs(rec.loss_total - (rec.loss_reg - rec.loss_surrogate)) < 1e-12);
}

TEST_CASE("training is deterministic and independent of worker count") {
  const Warm& w = warm();
  RunConfig cfg = w.cfg;
  cfg.train.total_steps = 4;
  std::vector<int> checkpoints;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](int step, const PolicyParams&) { checkpoints.push_back(step); };
  const TrainResult a = train(cfg, w.data, w.params, hooks, 1);
  const TrainResult b = train(cfg, w.data, w.params, {}, 3);
  CHECK(a.log == b.log);
  CHECK(a.params.values == b.params.values);
  CHECK(checkpoints == std::vector<int>{0, 2, 3});
  REQUIRE(a.log.size() == 4u);
  for (int i = 0; i < 4; ++i) {
    CHECK(a.log[static_cast<std::size_t>(i)].step == i);
    CHECK(a.log[static_cast<std::size_t>(i)].eval_acc.has_value() == (i != 1));
  }
  CHECK(a.params.values != w.params.values);
}

TEST_CASE("training rejects mismatched parameters and empty budgets") {
  const Warm& w = warm();
  RunConfig cfg = w.cfg;
  cfg.train.total_steps = 0;
  CHECK_THROWS_AS(train(cfg, w.data, w.params), InvalidConfig);
  cfg.train.total_steps = 1;
  cfg.model.hidden_dim = 6;
  cfg.model.n_heads = 1;
  CHECK_THROWS_AS(train(cfg, w.data, w.params), InvalidConfig);
}

TEST_CASE("run configuration checks the response budget") {
  RunConfig cfg = fixtures::tiny_run_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.sampling.max_response_len = 11;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = fixtures::tiny_run_config();
  cfg.sampling.max_response_len = 13;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("run log records round-trip through JSON") {
  RunLogRecord r;
  r.step = 7;
  r.mean_reward = 0.125;
  r.h_r = 0.67;
  r.loss_total = -0.5;
  r.loss_surrogate = 0.75;
  r.loss_reg = 0.25;
  const std::string line = to_json_line(r);
  CHECK(line ==
        R"({"step":7,"mean_reward":0.125,"h_t":null,"h_r":0.67,"loss_total":-0.5,"loss_surrogate":0.75,"loss_reg":0.25,"eval_acc":null})");
  CHECK(runlog_record_from_json(line) == r);
}
