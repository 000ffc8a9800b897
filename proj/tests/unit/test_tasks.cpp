#include <algorithm>
#include <map>
#include <optional>
#include <set>

#include "aepo/stages.hpp"
#include "aepo/tasks.hpp"
#include "doctest.h"

using namespace aepo;

namespace {

TaskSpec small_spec(std::uint64_t seed = 1) {
  TaskSpec s;
  s.n_facts = 48;
  s.n_symbols = 16;
  s.n_train = 300;
  s.n_eval = 60;
  s.seed = seed;
  return s;
}

// Reads the shown facts and returns the option whose value is stored under
// the query key, independently of the generator.
std::optional<int> brute_force_answer(const TaskInstance& inst) {
  const auto& q = inst.question_tokens;
  const auto query = std::find(q.begin(), q.end(), vocab::kQuery);
  if (query == q.end()) return std::nullopt;
  const auto at = static_cast<std::size_t>(query - q.begin());
  std::map<std::pair<Token, Token>, Token> facts;
  for (std::size_t i = 0; i + 2 < at; i += 3) facts[{q[i], q[i + 1]}] = q[i + 2];
  const auto hit = facts.find({q[at + 1], q[at + 2]});
  if (hit == facts.end()) return std::nullopt;
  std::optional<int> found;
  for (std::size_t i = at + 3; i + 1 < q.size(); i += 2) {
    if (q[i + 1] == hit->second) {
      if (found) return std::nullopt;  // ambiguous
      found = vocab::option_of(q[i]);
    }
  }
  return found;
}

}  // namespace

TEST_CASE("dataset generation is a pure function of its TaskSpec") {
  const Dataset a = generate_dataset(small_spec());
  const Dataset b = generate_dataset(small_spec());
  CHECK(a.train == b.train);
  CHECK(a.eval == b.eval);
  CHECK(generate_dataset(small_spec(2)).train != a.train);
}

TEST_CASE("train and eval questions are disjoint") {
  const Dataset d = generate_dataset(small_spec());
  std::set<TokenSeq> train_q;
  std::set<std::int64_t> train_ids;
  for (const auto& t : d.train) {
    train_q.insert(t.question_tokens);
    train_ids.insert(t.id);
  }
  for (const auto& e : d.eval) {
    CHECK_FALSE(train_q.contains(e.question_tokens));
    CHECK_FALSE(train_ids.contains(e.id));
  }
  CHECK(d.train.size() == 300u);
  CHECK(d.eval.size() == 60u);
}

TEST_CASE("every instance is solvable from its embedded facts") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    TaskSpec spec = small_spec(seed);
    for (int n_options : {2, 4, 8}) {
      spec.n_options = n_options;
      spec.n_facts = 3 * (n_options + 2);
      spec.n_symbols = n_options + 6;
      spec.n_train = 50;
      spec.n_eval = 20;
      const Dataset d = generate_dataset(spec);
      for (const auto* set : {&d.train, &d.eval}) {
        for (const auto& inst : *set) {
          REQUIRE(inst.n_options() == n_options);
          CHECK(brute_force_answer(inst) == inst.label);
        }
      }
    }
  }
}

TEST_CASE("verify accepts only the label") {
  const Dataset d = generate_dataset(small_spec());
  for (const auto& inst : d.eval) {
    CHECK(verify(inst.label, inst));
    CHECK_FALSE(verify((inst.label + 1) % inst.n_options(), inst));
    CHECK_FALSE(verify(255, inst));
    CHECK_FALSE(verify(-1, inst));
  }
}

TEST_CASE("uniform guessing over four options hits about a quarter") {
  const Dataset d = generate_dataset(small_spec());
  Rng rng(5);
  int hits = 0, n = 0;
  for (int rep = 0; rep < 20; ++rep) {
    for (const auto& inst : d.train) {
      hits += verify(static_cast<int>(rng.below(4)), inst) ? 1 : 0;
      ++n;
    }
  }
  const double acc = static_cast<double>(hits) / n;
  // 6000 draws: binomial std is about 0.0056.
  CHECK(std::abs(acc - 0.25) < 0.03);
}

TEST_CASE("rendered prompts are stable, cue thinking and list each option once") {
  const TaskSpec spec = small_spec();
  const Dataset d = generate_dataset(spec);
  for (const auto& inst : d.eval) {
    const TokenSeq p = render_prompt(inst);
    CHECK(p == render_prompt(inst));
    CHECK(p.back() == vocab::kThink);
    CHECK(static_cast<int>(p.size()) == spec.prompt_length());
    CHECK(static_cast<int>(p.size()) + 24 <= spec.context_len);
    for (Token opt : inst.option_tokens) CHECK(std::count(p.begin(), p.end(), opt) == 1);
  }
}

TEST_CASE("gold responses segment and answer correctly") {
  const Dataset d = generate_dataset(small_spec());
  Rng rng(8);
  int wrong_drafts = 0;
  for (const auto& inst : d.train) {
    const TokenSeq r = gold_response(inst, rng, 0.5);
    CHECK(static_cast<int>(r.size()) == kGoldResponseLength);
    const StageSpans s = segment_response(r);
    CHECK(r[s.answer.begin] == inst.option_tokens[static_cast<std::size_t>(inst.label)]);
    if (r[s.draft.begin] != r[s.answer.begin]) ++wrong_drafts;
  }
  CHECK(wrong_drafts > 100);
  CHECK(wrong_drafts < 200);
}

TEST_CASE("JSONL round trip") {
  const Dataset d = generate_dataset(small_spec());
  const std::string text = to_jsonl(d.eval);
  CHECK(from_jsonl(text) == d.eval);
  CHECK(to_jsonl(from_jsonl(text)) == text);
  CHECK_THROWS(from_jsonl("{\"id\": 1}\n"));
}

TEST_CASE("prompts that do not fit the context are rejected") {
  TaskSpec s = small_spec();
  s.context_len = s.prompt_length() - 1;
  CHECK_THROWS_AS(generate_dataset(s), InvalidConfig);
  s = small_spec();
  s.n_options = 9;
  CHECK_THROWS_AS(generate_dataset(s), InvalidConfig);
}
