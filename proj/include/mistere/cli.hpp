#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mistere/dataset.hpp"
#include "mistere/trainer.hpp"

namespace mistere {

/// Invalid configuration file, override or manifest (exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataPaths {
  std::filesystem::path train;
  std::filesystem::path val;
  std::filesystem::path test;
};

struct RunConfig {
  SynthConfig synth;
  std::optional<DataPaths> paths;  // when set, datasets are read from disk
  ModelConfig model;
  TrainConfig train;  // train.loss holds the "loss" section
  std::filesystem::path output_dir = "runs";
};

/// Every accepted key with its default value.
nlohmann::ordered_json default_config_json();

/// Merges `user` over the defaults, then applies dotted overrides such as
/// "train.seed=7". Unknown keys, type mismatches and missing data paths
/// raise ConfigError. Returns the fully resolved document.
nlohmann::ordered_json resolve_config_json(const nlohmann::json& user,
                                           const std::vector<std::string>& overrides = {});

RunConfig config_from_json(const nlohmann::ordered_json& resolved);
nlohmann::ordered_json config_to_json(const RunConfig& cfg);

/// Reads a config file (or starts from defaults when `path` is empty).
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

/// 16 hex digits of FNV-1a over the resolved config, output_dir excluded.
std::string run_id(const RunConfig& cfg);

DatasetSplits load_datasets(const RunConfig& cfg);

struct RunResult {
  std::string run_id;
  std::filesystem::path run_dir;
  TrainReport report;
  Evaluation test;
};

/// What `train` does: fits the configured variant, then evaluates the best
/// parameters on the test split and writes every artifact under the run
/// directory.
RunResult run_training(const RunConfig& cfg);

/// One ablation grid point; unset fields keep the base config's value.
struct SweepCell {
  std::optional<Variant> variant;
  std::optional<double> gamma;
  std::optional<double> lambda;
  std::optional<double> alpha;
  std::optional<double> tau;
  std::optional<std::uint64_t> seed;
};

/// Accepts {"cells": [...]} and/or {"grid": {"variant": [...], "gamma": [...], ...}}.
std::vector<SweepCell> parse_sweep_manifest(const nlohmann::json& manifest);
RunConfig apply_cell(const RunConfig& base, const SweepCell& cell);

/// Entry point of the command-line tool. Exit codes: 0 success, 1 usage or
/// configuration error, 2 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace mistere
