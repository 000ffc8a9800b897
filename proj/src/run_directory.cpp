#include "aepo/run_directory.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "aepo/config.hpp"

namespace aepo {

namespace fs = std::filesystem;

std::string git_blob_sha1(std::string_view content) {
  std::string data = "blob " + std::to_string(content.size());
  data.push_back('\0');
  data.append(content);

  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[md[i] >> 4]);
    hex.push_back(kHex[md[i] & 0xF]);
  }
  return hex;
}

std::string dataset_hash(const Dataset& data) { return git_blob_sha1(to_jsonl(data.train) + to_jsonl(data.eval)); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

PolicyParams warmed_up_params(const RunConfig& config, const Dataset& data, int workers) {
  const PolicyParams init = init_params(config.model_config(), config.seed);
  return sft_warmup(init, data.train, data.eval, config.warmup, config.sampling.max_response_len, config.seed,
                    workers);
}

RunOutputs run_training(const RunConfig& config, const std::optional<PolicyParams>& init, const fs::path& dir,
                        int workers, std::ostream* progress) {
  config.validate();
  if (config.train.total_steps < 1) throw InvalidConfig("train.total_steps must be >= 1");
  fs::create_directories(dir / "checkpoints");
  write_file(dir / "config.json", canonical_json(config));

  const Dataset data = generate_dataset(config.task_spec());
  nlohmann::json manifest = {
      {"config", config_to_json(config)}, {"seed", config.seed}, {"dataset_sha1", dataset_hash(data)}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  PolicyParams start;
  if (init) {
    start = *init;
  } else {
    if (progress) *progress << "warm-up: " << config.warmup.steps << " steps\n";
    start = warmed_up_params(config, data, workers);
  }

  std::ofstream runlog(dir / "runlog.jsonl", std::ios::binary | std::ios::trunc);
  if (!runlog) throw std::runtime_error("cannot write " + (dir / "runlog.jsonl").string());
  TrainHooks hooks;
  hooks.on_record = [&](const RunLogRecord& rec) {
    runlog << to_json_line(rec) << '\n';
    runlog.flush();
    if (progress && rec.eval_acc) {
      *progress << "step " << rec.step << " reward " << rec.mean_reward << " eval_acc " << *rec.eval_acc;
      if (rec.h_r) *progress << " h_r " << *rec.h_r;
      *progress << "\n";
    }
  };
  hooks.on_checkpoint = [&](int step, const PolicyParams& params) {
    std::array<char, 32> name{};
    std::snprintf(name.data(), name.size(), "step_%06d.ckpt", step);
    save_checkpoint(dir / "checkpoints" / name.data(), params);
  };

  RunOutputs out;
  try {
    out.result = train(config, data, std::move(start), hooks, workers);
  } catch (const NonFiniteLoss& e) {
    nlohmann::json abort = {{"step", e.step()}, {"error", e.what()}};
    write_file(dir / "abort.json", abort.dump(2) + "\n");
    throw;
  }
  save_checkpoint(dir / "checkpoints" / "final.ckpt", out.result.params);

  const auto n_echo = std::min(data.eval.size(), static_cast<std::size_t>(config.train.echo_instances));
  out.echo = sample_echo(out.result.params, std::span(data.eval).first(n_echo), config.sampling.temperature,
                         config.sampling.top_p, config.sampling.max_response_len, config.seed);
  write_file(dir / "echo.jsonl", echo_to_jsonl(out.echo));

  LabeledRun run{std::string(to_string(config.train.algorithm)), out.result.log, out.echo};
  write_file(dir / "report.json", compare_report({run}, config.reward.h_star));
  return out;
}

RunLog read_runlog(const fs::path& path) {
  std::istringstream in(read_file(path));
  RunLog log;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      log.push_back(runlog_record_from_json(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

LabeledRun load_run(const fs::path& dir) {
  LabeledRun run;
  const auto cfg = nlohmann::json::parse(read_file(dir / "config.json"));
  run.label = cfg.at("train").at("algorithm").get<std::string>();
  run.log = read_runlog(dir / "runlog.jsonl");
  if (fs::exists(dir / "echo.jsonl")) run.echo = echo_from_jsonl(read_file(dir / "echo.jsonl"));
  return run;
}

}  // namespace aepo
