#include "aepo/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>

#include "CLI11.hpp"
#include "aepo/config.hpp"
#include "aepo/metrics.hpp"
#include "aepo/run_directory.hpp"
#include "aepo/trainer.hpp"

namespace aepo {

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool print_config = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "JSON configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "Override a key, e.g. --set train.lr=1e-3")->type_name("KEY=VALUE");
  cmd->add_option("--seed", o.seed, "Root seed for every random stream");
  cmd->add_option("--workers", o.workers, "Threads used inside a step; results do not depend on it")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--print-config", o.print_config, "Print the resolved configuration and exit");
}

RunConfig resolve(const CommonOptions& o, const std::vector<std::string>& extra_overrides,
                  const std::vector<std::string>& require) {
  std::vector<std::string> overrides = o.overrides;
  overrides.insert(overrides.end(), extra_overrides.begin(), extra_overrides.end());
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  const nlohmann::json doc = load_config_document(o.config_file, overrides);
  return config_from_json(doc, o.print_config ? std::vector<std::string>{} : require);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Toy-scale reflection-aware policy optimization lab", "aepo"};
  app.require_subcommand(1);

  CommonOptions gen_opts, warm_opts, train_opts, eval_opts;

  auto* gen = app.add_subcommand("gen-tasks", "Write train.jsonl and eval.jsonl");
  add_common(gen, gen_opts);
  std::string gen_out;
  gen->add_option("--out", gen_out, "Output directory");

  auto* warm = app.add_subcommand("warmup", "Behavior-clone oracle traces and save a checkpoint");
  add_common(warm, warm_opts);
  std::string warm_out;
  warm->add_option("--out", warm_out, "Checkpoint path");

  auto* trn = app.add_subcommand("train", "Run warm-up (unless --init) and RL training");
  add_common(trn, train_opts);
  std::string algorithm, train_out, init_ckpt;
  trn->add_option("--algorithm", algorithm, "aepo, grpo or dapo");
  trn->add_option("--out", train_out, "Run directory");
  trn->add_option("--init", init_ckpt, "Start from this checkpoint instead of warm-up")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "Greedy accuracy of a checkpoint on the eval set");
  add_common(ev, eval_opts);
  std::string eval_ckpt;
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);

  auto* cmp = app.add_subcommand("compare", "Compare run directories");
  std::vector<std::string> cmp_runs;
  std::string cmp_out;
  cmp->add_option("--runs", cmp_runs, "Run directories")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("--out", cmp_out, "Report path (stdout when omitted)");
  double cmp_h_star = RewardConfig{}.h_star;
  cmp->add_option("--h-star", cmp_h_star, "Target entropy for entropy_gap");

  auto* curves = app.add_subcommand("export-curves", "Write <out>.csv and <out>.svg");
  std::vector<std::string> curve_runs;
  std::string curve_out;
  curves->add_option("--runs", curve_runs, "Run directories")->required()->check(CLI::ExistingDirectory);
  curves->add_option("--out", curve_out, "Output path prefix")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
      err << sub->help();
    } else {
      err << app.help();
    }
    return kExitUsage;
  }

  auto need = [&err](const std::string& value, const char* flag) {
    if (value.empty()) {
      err << "error: " << flag << " is required\n";
      return false;
    }
    return true;
  };

  try {
    if (gen->parsed()) {
      const RunConfig cfg = resolve(gen_opts, {}, {"seed"});
      if (gen_opts.print_config) {
        out << canonical_json(cfg);
        return kExitOk;
      }
      if (!need(gen_out, "--out")) return kExitUsage;
      const Dataset data = generate_dataset(cfg.task_spec());
      fs::create_directories(gen_out);
      write_jsonl(fs::path(gen_out) / "train.jsonl", data.train);
      write_jsonl(fs::path(gen_out) / "eval.jsonl", data.eval);
      out << "wrote " << data.train.size() << " train and " << data.eval.size() << " eval tasks, sha1 "
          << dataset_hash(data) << "\n";
      return kExitOk;
    }

    if (warm->parsed()) {
      const RunConfig cfg = resolve(warm_opts, {}, {"seed"});
      if (warm_opts.print_config) {
        out << canonical_json(cfg);
        return kExitOk;
      }
      if (!need(warm_out, "--out")) return kExitUsage;
      const Dataset data = generate_dataset(cfg.task_spec());
      const PolicyParams params = warmed_up_params(cfg, data, warm_opts.workers);
      if (fs::path(warm_out).has_parent_path()) fs::create_directories(fs::path(warm_out).parent_path());
      save_checkpoint(warm_out, params);
      out << "warm-up done: eval accuracy " << evaluate(params, data.eval, cfg.sampling.max_response_len) << "\n";
      return kExitOk;
    }

    if (trn->parsed()) {
      std::vector<std::string> extra;
      if (!algorithm.empty()) extra.push_back("train.algorithm=" + algorithm);
      const RunConfig cfg = resolve(train_opts, extra, {"seed", "train.total_steps"});
      if (train_opts.print_config) {
        out << canonical_json(cfg);
        return kExitOk;
      }
      if (!need(train_out, "--out")) return kExitUsage;
      std::optional<PolicyParams> init;
      if (!init_ckpt.empty()) {
        init = load_checkpoint(init_ckpt);
        if (init->config != cfg.model_config()) {
          err << "error: checkpoint model config does not match the run's model section\n";
          return kExitUsage;
        }
      }
      run_training(cfg, init, train_out, train_opts.workers, &err);
      out << read_file(fs::path(train_out) / "report.json");
      return kExitOk;
    }

    if (ev->parsed()) {
      const RunConfig cfg = resolve(eval_opts, {}, {"seed"});
      if (eval_opts.print_config) {
        out << canonical_json(cfg);
        return kExitOk;
      }
      const PolicyParams params = load_checkpoint(eval_ckpt);
      if (params.config != cfg.model_config()) {
        err << "error: checkpoint model config does not match the run's model section\n";
        return kExitUsage;
      }
      const Dataset data = generate_dataset(cfg.task_spec());
      const int max_len = cfg.sampling.max_response_len;
      nlohmann::json res = {{"accuracy", evaluate(params, data.eval, max_len)},
                            {"parse_rate", greedy_parse_rate(params, data.eval, max_len)},
                            {"n_eval", data.eval.size()}};
      out << res.dump(2) << "\n";
      return kExitOk;
    }

    if (cmp->parsed()) {
      std::vector<LabeledRun> runs;
      for (const auto& d : cmp_runs) runs.push_back(load_run(d));
      // Runs sharing an algorithm are told apart by their directory name.
      std::vector<std::string> labels;
      for (const auto& r : runs) labels.push_back(r.label);
      for (std::size_t i = 0; i < runs.size(); ++i) {
        if (std::count(labels.begin(), labels.end(), labels[i]) < 2) continue;
        fs::path dir = fs::path(cmp_runs[i]).lexically_normal();
        if (dir.filename().empty()) dir = dir.parent_path();
        runs[i].label += ":" + dir.filename().string();
      }
      const std::string report = compare_report(runs, cmp_h_star);
      if (cmp_out.empty()) {
        out << report;
      } else {
        write_file(cmp_out, report);
      }
      return kExitOk;
    }

    if (curves->parsed()) {
      std::vector<LabeledRun> runs;
      for (const auto& d : curve_runs) runs.push_back(load_run(d));
      export_curves(runs, curve_out);
      out << "wrote " << curve_out << ".csv and " << curve_out << ".svg\n";
      return kExitOk;
    }
  } catch (const InvalidConfig& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace aepo
