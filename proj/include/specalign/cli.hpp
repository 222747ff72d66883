#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "specalign/model.hpp"
#include "specalign/splits.hpp"
#include "specalign/train.hpp"

namespace specalign {

// Relative paths are resolved against the config file's directory; unset
// artifact paths default to files inside out_dir.
struct RunPaths {
  std::filesystem::path out_dir = ".";
  std::filesystem::path spectra;
  std::filesystem::path molecules;
  std::filesystem::path meta;
  std::filesystem::path candidates;
  std::optional<std::filesystem::path> targets;
  std::filesystem::path split;
  std::filesystem::path checkpoint;
};

struct EvalParams {
  std::vector<std::size_t> ks = {1, 5, 20};
  bool filter_formula = false;
  std::optional<Part> part = Part::test;  // nullopt: every record
};

struct ShiftParams {
  std::size_t n_projections = 100;
  std::size_t n_seeds = 5;
  Part train_part = Part::train;
  Part test_part = Part::test;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  RunPaths paths;
  SyntheticConfig gen;
  SplitSpec split;
  ModelConfig model;
  TrainConfig train;
  std::optional<std::filesystem::path> init_checkpoint;
  std::optional<std::string> adduct_filter;
  EvalParams eval;
  ShiftParams shift;

  // Pushes the run seed into every section.
  void apply_seed(std::uint64_t value);
  void validate() const;
};

// Parses a JSON config document. Unknown keys are rejected.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Each command returns a process exit code and throws specalign::Error on
// failure.
int cmd_gen(const RunConfig& cfg);
int cmd_split(const RunConfig& cfg, bool allow_leakage);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_shift(const RunConfig& cfg);

// Full command-line entry point: 0 success, 1 config/validation error,
// 2 data error, 3 numeric error.
int run_cli(int argc, char** argv);

}  // namespace specalign
