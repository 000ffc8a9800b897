#include "aepo/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <stdexcept>

#include "aepo/policy.hpp"
#include "json.hpp"

namespace aepo {

namespace {

struct Fact {
  Token prefix;
  Token suffix;
  Token value;
};

// Facts grouped by prefix; every group holds at least group_size() facts.
std::vector<std::vector<Fact>> build_fact_table(const TaskSpec& spec, Rng& rng) {
  const int n_groups = spec.n_facts / spec.group_size();
  std::vector<int> prefixes(static_cast<std::size_t>(spec.n_symbols));
  for (int i = 0; i < spec.n_symbols; ++i) prefixes[static_cast<std::size_t>(i)] = i;
  rng.shuffle(prefixes);

  std::vector<std::vector<Fact>> groups(static_cast<std::size_t>(n_groups));
  for (int g = 0; g < n_groups; ++g) {
    int size = spec.n_facts / n_groups + (g < spec.n_facts % n_groups ? 1 : 0);
    std::vector<int> suffixes(prefixes.size()), values(prefixes.size());
    for (std::size_t i = 0; i < prefixes.size(); ++i) suffixes[i] = values[i] = static_cast<int>(i);
    rng.shuffle(suffixes);
    rng.shuffle(values);
    for (int k = 0; k < size; ++k) {
      groups[static_cast<std::size_t>(g)].push_back(
          Fact{vocab::symbol(prefixes[static_cast<std::size_t>(g)]),
               vocab::symbol(suffixes[static_cast<std::size_t>(k)]),
               vocab::symbol(values[static_cast<std::size_t>(k)])});
    }
  }
  return groups;
}

TaskInstance make_instance(const TaskSpec& spec, const std::vector<std::vector<Fact>>& table, Rng& rng) {
  const auto& group = table[rng.below(table.size())];
  std::vector<std::size_t> picks(group.size());
  for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
  rng.shuffle(picks);
  picks.resize(static_cast<std::size_t>(spec.n_options));
  const Fact target = group[picks[0]];

  std::vector<Fact> shown;
  for (std::size_t i : picks) shown.push_back(group[i]);
  std::vector<Fact> options = shown;
  rng.shuffle(shown);
  rng.shuffle(options);

  TaskInstance inst;
  for (const Fact& f : shown) {
    inst.question_tokens.insert(inst.question_tokens.end(), {f.prefix, f.suffix, f.value});
  }
  inst.question_tokens.insert(inst.question_tokens.end(), {vocab::kQuery, target.prefix, target.suffix});
  for (int o = 0; o < spec.n_options; ++o) {
    const Fact& f = options[static_cast<std::size_t>(o)];
    inst.question_tokens.push_back(vocab::letter(o));
    inst.question_tokens.push_back(f.value);
    inst.option_tokens.push_back(vocab::letter(o));
    if (f.value == target.value) inst.label = o;
  }
  return inst;
}

}  // namespace

void TaskSpec::validate() const {
  if (n_options < 2 || n_options > vocab::kMaxOptions) throw InvalidConfig("task.n_options must be in [2, 8]");
  if (n_train < 1) throw InvalidConfig("task.n_train must be >= 1");
  if (n_eval < 1) throw InvalidConfig("task.n_eval must be >= 1");
  if (n_symbols < group_size()) throw InvalidConfig("task.n_symbols must be >= n_options + 2");
  if (n_facts < group_size()) throw InvalidConfig("task.n_facts must be >= n_options + 2");
  if (n_facts / group_size() > n_symbols) {
    throw InvalidConfig("task.n_facts too large: at most n_symbols * (n_options + 2) facts");
  }
  const int n_groups = n_facts / group_size();
  if ((n_facts + n_groups - 1) / n_groups > n_symbols) {
    throw InvalidConfig("task.n_facts leaves a prefix group larger than n_symbols");
  }
  if (prompt_length() > context_len) {
    throw InvalidConfig("task prompt of " + std::to_string(prompt_length()) + " tokens exceeds context_len " +
                        std::to_string(context_len));
  }
}

Dataset generate_dataset(const TaskSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {stream::kTasks}));
  const auto table = build_fact_table(spec, rng);

  Dataset ds;
  std::set<TokenSeq> train_questions;
  std::int64_t next_id = 0;
  for (int i = 0; i < spec.n_train; ++i) {
    TaskInstance inst = make_instance(spec, table, rng);
    inst.id = next_id++;
    train_questions.insert(inst.question_tokens);
    ds.train.push_back(std::move(inst));
  }
  std::set<TokenSeq> eval_questions;
  const int max_attempts = 100 * spec.n_eval + 1000;
  int attempts = 0;
  while (static_cast<int>(ds.eval.size()) < spec.n_eval) {
    if (++attempts > max_attempts) {
      throw InvalidConfig("task space too small to draw disjoint eval questions");
    }
    TaskInstance inst = make_instance(spec, table, rng);
    if (train_questions.contains(inst.question_tokens) || eval_questions.contains(inst.question_tokens)) {
      continue;
    }
    inst.id = next_id++;
    eval_questions.insert(inst.question_tokens);
    ds.eval.push_back(std::move(inst));
  }
  return ds;
}

bool verify(int answer_option, const TaskInstance& instance) {
  return answer_option >= 0 && answer_option < instance.n_options() && answer_option == instance.label;
}

TokenSeq render_prompt(const TaskInstance& instance) {
  TokenSeq prompt = instance.question_tokens;
  prompt.push_back(vocab::kThink);
  return prompt;
}

TokenSeq gold_response(const TaskInstance& instance, Rng& rng, double draft_error_rate) {
  const auto& q = instance.question_tokens;
  const auto it = std::find(q.begin(), q.end(), vocab::kQuery);
  if (it == q.end() || std::distance(it, q.end()) < 3 + 2 * instance.n_options()) {
    throw std::invalid_argument("gold_response: question has no query section");
  }
  const auto at = static_cast<std::size_t>(std::distance(q.begin(), it));
  const Token prefix = q[at + 1];
  const Token suffix = q[at + 2];
  const Token value = q[at + 3 + 2 * static_cast<std::size_t>(instance.label) + 1];
  const Token answer = instance.option_tokens[static_cast<std::size_t>(instance.label)];

  Token draft = answer;
  if (draft_error_rate > 0.0 && rng.uniform() < draft_error_rate) {
    const auto wrong = static_cast<int>(rng.below(static_cast<std::uint64_t>(instance.n_options() - 1)));
    draft = instance.option_tokens[static_cast<std::size_t>(wrong >= instance.label ? wrong + 1 : wrong)];
  }
  return TokenSeq{prefix,         suffix, value,  vocab::kDraft,  draft, vocab::kReflect,
                  prefix,         suffix, value,  vocab::kAnswer, answer, vocab::kEnd};
}

std::string to_jsonl(const std::vector<TaskInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    nlohmann::json j{{"id", inst.id},
                     {"question_tokens", inst.question_tokens},
                     {"option_tokens", inst.option_tokens},
                     {"label", inst.label}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<TaskInstance> from_jsonl(std::string_view text) {
  std::vector<TaskInstance> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TaskInstance inst;
      inst.id = j.at("id").get<std::int64_t>();
      inst.question_tokens = j.at("question_tokens").get<TokenSeq>();
      inst.option_tokens = j.at("option_tokens").get<TokenSeq>();
      inst.label = j.at("label").get<int>();
      if (inst.label < 0 || inst.label >= inst.n_options()) {
        throw std::runtime_error("label out of range");
      }
      out.push_back(std::move(inst));
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<TaskInstance>& instances) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_jsonl(instances);
}

std::vector<TaskInstance> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_jsonl(text);
}

}  // namespace aepo
