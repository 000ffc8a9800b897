#pragma once

// Run directory layout:
//   config.json     resolved configuration
//   manifest.json   {config, seed, dataset_sha1}
//   runlog.jsonl    one record per step
//   checkpoints/    step_NNNNNN.ckpt at every evaluation, final.ckpt
//   echo.jsonl      reflection echo samples on the eval set
//   report.json     compare report of this run alone
//   abort.json      only when training stopped on a non-finite loss

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "aepo/metrics.hpp"
#include "aepo/tasks.hpp"
#include "aepo/trainer.hpp"

namespace aepo {

/// Hex SHA-1 of "blob <size>\0" + content, as git hashes file contents.
std::string git_blob_sha1(std::string_view content);

/// git_blob_sha1 of the train JSONL followed by the eval JSONL.
std::string dataset_hash(const Dataset& data);

/// Fresh parameters from the run seed followed by the warm-up stage.
PolicyParams warmed_up_params(const RunConfig& config, const Dataset& data, int workers = 1);

struct RunOutputs {
  TrainResult result;
  std::vector<EchoSample> echo;
};

/// Trains from `init` (or from warmed_up_params when absent) and writes the
/// run directory. Progress lines go to `progress` when non-null.
RunOutputs run_training(const RunConfig& config, const std::optional<PolicyParams>& init,
                        const std::filesystem::path& dir, int workers = 1, std::ostream* progress = nullptr);

RunLog read_runlog(const std::filesystem::path& path);

/// Reads runlog.jsonl, echo.jsonl and the algorithm from config.json. The
/// label is the algorithm name.
LabeledRun load_run(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

}  // namespace aepo
