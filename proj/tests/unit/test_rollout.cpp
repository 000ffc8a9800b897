#include <algorithm>
#include <cmath>
#include <vector>

#include "aepo/rollout.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support/fixtures.hpp"

using namespace aepo;

namespace {

struct Setup {
  RunConfig cfg = fixtures::tiny_run_config();
  Dataset data = generate_dataset(cfg.task_spec());
  PolicyParams params = init_params(cfg.model_config(), 3);
};

SamplingConfig sampling(int g = 5) {
  SamplingConfig s;
  s.group_size = g;
  s.max_response_len = 12;
  return s;
}

bool same(const Rollout& a, const Rollout& b) {
  return a.prompt_id == b.prompt_id && a.prompt == b.prompt && a.response_tokens == b.response_tokens &&
         a.old_logprobs == b.old_logprobs && a.entropies == b.entropies;
}

}  // namespace

TEST_CASE("a group holds G rollouts with per-token records") {
  const Setup s;
  const RolloutGroup g = sample_group(s.params, s.data.train[0], sampling(), 42);
  REQUIRE(g.size() == 5u);
  for (const auto& r : g) {
    CHECK(r.prompt_id == s.data.train[0].id);
    CHECK(r.old_logprobs.size() == r.response_tokens.size());
    CHECK(r.entropies.size() == r.response_tokens.size());
    CHECK((r.response_tokens.back() == vocab::kEnd || r.response_tokens.size() == 12u));
    for (double lp : r.old_logprobs) CHECK(lp <= 0.0);
  }
}

TEST_CASE("same stream seed gives the same group") {
  const Setup s;
  const RolloutGroup a = sample_group(s.params, s.data.train[1], sampling(), 7);
  const RolloutGroup b = sample_group(s.params, s.data.train[1], sampling(), 7);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same(a[i], b[i]));
  const RolloutGroup c = sample_group(s.params, s.data.train[1], sampling(), 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= a[i].response_tokens != c[i].response_tokens;
  CHECK(any_diff);
}

TEST_CASE("worker count does not change a group") {
  const Setup s;
  const RolloutGroup a = sample_group(s.params, s.data.train[2], sampling(6), 99, 1);
  const RolloutGroup b = sample_group(s.params, s.data.train[2], sampling(6), 99, 4);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same(a[i], b[i]));
}

TEST_CASE("replaying per-sample streams in any order recovers the group") {
  const Setup s;
  const SamplingConfig sc = sampling();
  const RolloutGroup g = sample_group(s.params, s.data.train[3], sc, 5);
  for (std::size_t i : {4u, 2u, 0u, 3u, 1u}) {
    Rng rng(derive_seed(5, {i}));
    CHECK(same(generate(s.params, s.data.train[3], sc.temperature, sc.top_p, sc.max_response_len, rng), g[i]));
  }
}

TEST_CASE("recorded log-probs and entropies match the forward pass") {
  Setup s;
  for (Arch arch : {Arch::tiny_attention, Arch::gru_like}) {
    s.cfg.model.arch = arch;
    const PolicyParams p = init_params(s.cfg.model_config(), 4);
    for (int k = 0; k < 4; ++k) {
      const RolloutGroup g = sample_group(p, s.data.train[static_cast<std::size_t>(k)], sampling(), 100 + k);
      for (const auto& r : g) {
        Rollout again = r;
        fixtures::rescore_under(again, p);
        for (std::size_t t = 0; t < r.old_logprobs.size(); ++t) {
          CHECK(std::abs(again.old_logprobs[t] - r.old_logprobs[t]) < 1e-12);
          CHECK(std::abs(again.entropies[t] - r.entropies[t]) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("a head forcing <END> yields length-one malformed rollouts") {
  Setup s;
  for (double& w : s.params.head_weights()) w = 0.0;
  auto bias = s.params.head_bias();
  std::fill(bias.begin(), bias.end(), -1e3);
  bias[vocab::kEnd] = 1e3;
  RolloutGroup g = sample_group(s.params, s.data.train[0], sampling(), 1);
  for (auto& r : g) {
    CHECK(r.response_tokens == TokenSeq{vocab::kEnd});
    score_rollout(r, s.data.train[0], RewardConfig{});
    CHECK_FALSE(r.spans.has_value());
    CHECK_FALSE(r.breakdown.parse_ok);
    CHECK(r.breakdown.shaped_reward == 0.0);
  }
}

TEST_CASE("context overflow is rejected") {
  const Setup s;
  SamplingConfig sc = sampling();
  sc.max_response_len = 13;  // prompt 14 + 13 > context 26
  CHECK_THROWS_AS(sample_group(s.params, s.data.train[0], sc, 1), std::invalid_argument);
}

TEST_CASE("group size below two is rejected") {
  const Setup s;
  CHECK_THROWS_AS(sample_group(s.params, s.data.train[0], sampling(1), 1), InvalidConfig);
}

TEST_CASE("rollout dump has one object per rollout") {
  const Setup s;
  RolloutGroup g = sample_group(s.params, s.data.train[0], sampling(), 3);
  for (auto& r : g) score_rollout(r, s.data.train[0], RewardConfig{});
  const std::string text = rollouts_to_jsonl(g);
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);
  const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  for (const char* key : {"prompt_id", "tokens", "old_logprobs", "spans", "breakdown"}) CHECK(first.contains(key));
}
