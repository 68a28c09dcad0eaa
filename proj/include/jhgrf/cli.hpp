#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "jhgrf/training.hpp"

namespace jhgrf {

struct DataConfig {
  std::string path;
  NormalizerKind normalizer = NormalizerKind::zscore;
  std::array<std::size_t, 3> split{7, 1, 2};  // train:val:test
  MissingPattern missing = MissingPattern::none;
  double missing_ratio = 0.0;
  double sensor_fail_prob = 0.0;
};

// Every setting a command can read, addressed by flat prefixed keys:
// model.*, train.*, data.*, synthetic.* and the run seed `seed`.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  SyntheticOptions synthetic;
  std::uint64_t seed = 0;

  KeyValues to_key_values() const;
  // ConfigError on unknown keys or bad values.
  void apply(std::string_view key, std::string_view value);
  void validate() const;
};

// `key = value` lines; '#' starts a comment. ConfigError with the line number
// on malformed lines or unknown keys.
void apply_config_text(RunConfig& config, std::string_view text, const std::string& source = "config");
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

enum class Command { train, forecast, evaluate, ablate, gen_synthetic, export_structure };

struct RunSpec {
  Command command = Command::train;
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir = "run";
  std::string checkpoint;  // default: <out>/checkpoint.ckpt
  std::optional<std::string> ablation, loss, missing, output_activation;
  std::optional<double> missing_ratio;
};

// Defaults, then the config file, then --set overrides, then dedicated flags.
RunConfig resolve(const RunSpec& spec);

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDiverged = 4;
inline constexpr int kExitCheckpoint = 5;

// Runs one command; errors are reported on `log` and mapped to exit codes.
int run_command(const RunSpec& spec, std::ostream& log);
// Parses argv (argv[0] is the program name) and runs the command.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& log);

}  // namespace jhgrf
