#include "aepo/config.hpp"

#include <fstream>
#include <iterator>

namespace aepo {

using nlohmann::json;

ConfigError::ConfigError(const std::string& key_path, const std::string& problem)
    : InvalidConfig(key_path + ": " + problem), key_path_(key_path) {}

namespace {

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

std::string_view entropy_unit_name(EntropyUnit u) { return u == EntropyUnit::nats ? "nats" : "bits"; }

EntropyUnit entropy_unit_from(const std::string& name) {
  if (name == "nats") return EntropyUnit::nats;
  if (name == "bits") return EntropyUnit::bits;
  throw ConfigError("reward.entropy_unit", "expected nats or bits, got '" + name + "'");
}

bool is_integer(const json& v) { return v.is_number_integer() || v.is_number_unsigned(); }

// Checks `value` against the type of `schema` (a default value).
void check_type(const std::string& path, const json& schema, const json& value) {
  const auto fail = [&](const char* expected) { throw ConfigError(path, std::string("expected ") + expected); };
  if (schema.is_boolean()) {
    if (!value.is_boolean()) fail("a boolean");
  } else if (schema.is_string()) {
    if (!value.is_string()) fail("a string");
  } else if (schema.is_number_float()) {
    if (!value.is_number()) fail("a number");
  } else if (schema.is_number()) {
    if (!is_integer(value)) fail("an integer");
  } else if (schema.is_null()) {
    if (!value.is_null() && !value.is_number_unsigned() && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
      fail("a non-negative integer");
    }
  }
}

void merge_into(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = join(prefix, it.key());
    if (!base.contains(it.key())) throw ConfigError(path, "unknown key");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), path);
    } else {
      if (it.value().is_object()) throw ConfigError(path, "unexpected object");
      check_type(path, slot, it.value());
      slot = it.value();
    }
  }
}

const json& at_path(const json& doc, const std::string& path) {
  const json* cur = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->is_object() || !cur->contains(key)) throw ConfigError(path, "missing");
    cur = &(*cur)[key];
    if (dot == std::string::npos) return *cur;
    start = dot + 1;
  }
}

template <class T>
T get(const json& doc, const std::string& path) {
  const json& v = at_path(doc, path);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path, "has the wrong type");
  }
}

int get_int(const json& doc, const std::string& path) {
  const json& v = at_path(doc, path);
  if (!is_integer(v)) throw ConfigError(path, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(path, "out of range");
  return static_cast<int>(x);
}

// Re-raises validation failures with the key path named in their message.
template <class Fn>
void with_path(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidConfig& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace

json default_config_json() {
  RunConfig d;
  json j = config_to_json(d);
  j["seed"] = nullptr;
  j["train"]["total_steps"] = nullptr;
  return j;
}

json merge_config(const json& base, const json& user) {
  json out = base;
  merge_into(out, user, "");
  return out;
}

void apply_override(json& doc, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(std::string(assignment), "override must look like key.path=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  std::vector<std::string> keys;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    keys.push_back(path.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
    if (keys.back().empty()) throw ConfigError(path, "empty key segment");
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json user = value;
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) {
    json wrapped = json::object();
    wrapped[*it] = std::move(user);
    user = std::move(wrapped);
  }
  merge_into(doc, user, "");
}

RunConfig config_from_json(const json& doc, const std::vector<std::string>& require) {
  json full = merge_config(default_config_json(), doc);
  for (const auto& key : require) {
    if (at_path(full, key).is_null()) throw ConfigError(key, "is required");
  }

  RunConfig c;
  const json& seed = full["seed"];
  c.seed = seed.is_null() ? 0 : seed.get<std::uint64_t>();

  c.task.n_facts = get_int(full, "task.n_facts");
  c.task.n_options = get_int(full, "task.n_options");
  c.task.n_symbols = get_int(full, "task.n_symbols");
  c.task.n_train = get_int(full, "task.n_train");
  c.task.n_eval = get_int(full, "task.n_eval");

  with_path("model.arch", [&] { c.model.arch = arch_from_string(get<std::string>(full, "model.arch")); });
  c.model.context_len = get_int(full, "model.context_len");
  c.model.hidden_dim = get_int(full, "model.hidden_dim");
  c.model.n_layers = get_int(full, "model.n_layers");
  c.model.n_heads = get_int(full, "model.n_heads");

  c.sampling.group_size = get_int(full, "sampling.group_size");
  c.sampling.temperature = get<double>(full, "sampling.temperature");
  c.sampling.top_p = get<double>(full, "sampling.top_p");
  c.sampling.max_response_len = get_int(full, "sampling.max_response_len");

  c.reward.beta = get<double>(full, "reward.beta");
  c.reward.h_star = get<double>(full, "reward.h_star");
  c.reward.c_as_reward = get<bool>(full, "reward.c_as_reward");
  with_path("reward.ib_sign", [&] { c.reward.ib_sign = ib_sign_from_string(get<std::string>(full, "reward.ib_sign")); });
  c.reward.correct_reward = get<double>(full, "reward.correct_reward");
  c.reward.format_penalty = get<double>(full, "reward.format_penalty");
  c.reward.entropy_unit = entropy_unit_from(get<std::string>(full, "reward.entropy_unit"));

  c.clip.eps_low = get<double>(full, "clip.eps_low");
  c.clip.eps_high = get<double>(full, "clip.eps_high");

  TrainConfig& t = c.train;
  with_path("train.algorithm", [&] { t.algorithm = algorithm_from_string(get<std::string>(full, "train.algorithm")); });
  t.prompts_per_step = get_int(full, "train.prompts_per_step");
  t.lr = get<double>(full, "train.lr");
  t.warmup_steps = get_int(full, "train.warmup_steps");
  t.total_steps = full["train"]["total_steps"].is_null() ? 0 : get_int(full, "train.total_steps");
  t.eval_every = get_int(full, "train.eval_every");
  t.flags.rif_on = get<bool>(full, "train.rif_on");
  t.flags.ae_on = get<bool>(full, "train.ae_on");
  t.flags.gae_on = get<bool>(full, "train.gae_on");
  const auto norm = get<std::string>(full, "train.normalization");
  if (norm == "auto") {
    t.normalization.reset();
  } else {
    with_path("train.normalization", [&] { t.normalization = normalization_from_string(norm); });
  }
  t.normalize_regularizer = get<bool>(full, "train.normalize_regularizer");
  t.echo_instances = get_int(full, "train.echo_instances");
  t.adam.beta1 = get<double>(full, "train.adam_beta1");
  t.adam.beta2 = get<double>(full, "train.adam_beta2");
  t.adam.eps = get<double>(full, "train.adam_eps");
  t.adam.weight_decay = get<double>(full, "train.weight_decay");

  c.warmup.steps = get_int(full, "warmup.steps");
  c.warmup.batch_size = get_int(full, "warmup.batch_size");
  c.warmup.lr = get<double>(full, "warmup.lr");
  c.warmup.draft_error_rate = get<double>(full, "warmup.draft_error_rate");
  c.warmup.probes = get_int(full, "warmup.probes");
  c.warmup.min_parse_rate = get<double>(full, "warmup.min_parse_rate");

  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["task"] = {{"n_facts", c.task.n_facts},
               {"n_options", c.task.n_options},
               {"n_symbols", c.task.n_symbols},
               {"n_train", c.task.n_train},
               {"n_eval", c.task.n_eval}};
  j["model"] = {{"arch", std::string(to_string(c.model.arch))},
                {"context_len", c.model.context_len},
                {"hidden_dim", c.model.hidden_dim},
                {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads}};
  j["sampling"] = {{"group_size", c.sampling.group_size},
                   {"temperature", c.sampling.temperature},
                   {"top_p", c.sampling.top_p},
                   {"max_response_len", c.sampling.max_response_len}};
  j["reward"] = {{"beta", c.reward.beta},
                 {"h_star", c.reward.h_star},
                 {"c_as_reward", c.reward.c_as_reward},
                 {"ib_sign", std::string(to_string(c.reward.ib_sign))},
                 {"correct_reward", c.reward.correct_reward},
                 {"format_penalty", c.reward.format_penalty},
                 {"entropy_unit", std::string(entropy_unit_name(c.reward.entropy_unit))}};
  j["clip"] = {{"eps_low", c.clip.eps_low}, {"eps_high", c.clip.eps_high}};
  const TrainConfig& t = c.train;
  j["train"] = {{"algorithm", std::string(to_string(t.algorithm))},
                {"prompts_per_step", t.prompts_per_step},
                {"lr", t.lr},
                {"warmup_steps", t.warmup_steps},
                {"total_steps", t.total_steps},
                {"eval_every", t.eval_every},
                {"rif_on", t.flags.rif_on},
                {"ae_on", t.flags.ae_on},
                {"gae_on", t.flags.gae_on},
                {"normalization", t.normalization ? std::string(to_string(*t.normalization)) : "auto"},
                {"normalize_regularizer", t.normalize_regularizer},
                {"echo_instances", t.echo_instances},
                {"adam_beta1", t.adam.beta1},
                {"adam_beta2", t.adam.beta2},
                {"adam_eps", t.adam.eps},
                {"weight_decay", t.adam.weight_decay}};
  j["warmup"] = {{"steps", c.warmup.steps},
                 {"batch_size", c.warmup.batch_size},
                 {"lr", c.warmup.lr},
                 {"draft_error_rate", c.warmup.draft_error_rate},
                 {"probes", c.warmup.probes},
                 {"min_parse_rate", c.warmup.min_parse_rate}};
  return j;
}

std::string canonical_json(const RunConfig& config) { return config_to_json(config).dump(2) + "\n"; }

json load_config_document(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json doc = default_config_json();
  if (!file.empty()) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read config " + file.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    json user = json::parse(text, nullptr, false);
    if (user.is_discarded()) throw ConfigError(file.string(), "not valid JSON");
    doc = merge_config(doc, user);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return doc;
}

}  // namespace aepo
