#pragma once

// Command-line front end. Commands run in-process through run(), which maps
// every error class to its own exit code.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "superbloom/inference.hpp"
#include "superbloom/training.hpp"
#include "superbloom/transformer.hpp"

namespace superbloom::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kConfigError = 3,
  kIoError = 4,
  kDivergence = 5,
  kInfeasibleScheme = 6,
  kInvalidArgument = 7,
};

struct SchemeSection {
  std::uint32_t m = 2;
  std::uint32_t alpha = 20;
};

struct InferSection {
  std::uint32_t beam_width = 20;
  std::uint32_t iterations = 1;
  std::uint32_t k = 20;
  std::string score_fn = "log_sum";
};

struct EvalSection {
  double test_frac = 0.1;
  std::uint32_t segment_length = 32;
  std::uint32_t max_examples = 0;  // 0 keeps every test page
};

// Resolved configuration. The JSON form has a top-level "seed" and the
// sections "scheme", "model", "train", "infer" and "eval"; every key is
// optional and unknown keys are rejected. Model keys that follow from the
// scheme (m, hash_size, num_specials) are not part of the document, and the
// training seed is the global seed.
struct RunConfig {
  std::uint64_t seed = 1;
  SchemeSection scheme;
  ModelConfig model;
  TrainConfig train;
  InferSection infer;
  EvalSection eval;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);
// Pretty-printed resolved config written as config.json into `dir`.
void echo_config(const RunConfig& config, const std::filesystem::path& dir);
std::uint64_t fingerprint(const RunConfig& config, const std::string& salt);

// Run directory for a command: --out-dir when given, otherwise
// $SUPERBLOOM_RUN_ROOT (default "runs") / <command>-<fingerprint>.
std::filesystem::path run_directory(const std::optional<std::filesystem::path>& out_dir,
                                    const std::string& command, std::uint64_t fingerprint);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace superbloom::cli
