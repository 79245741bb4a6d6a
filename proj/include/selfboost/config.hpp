#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "selfboost/trainer.hpp"

namespace selfboost {

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | cifar10 | cifar100
  std::size_t train_size = 4000;   // synthetic only
  std::size_t test_size = 2000;    // synthetic only
  std::size_t classes = 4;         // synthetic only
  std::size_t image_size = 32;     // synthetic only
  std::uint64_t seed = 0;
  std::vector<std::string> train_files;  // cifar only
  std::vector<std::string> test_files;   // cifar only
  bool standardize = true;
};

struct TeacherConfig {
  std::string checkpoint;        // empty: no teacher
  std::vector<std::size_t> widths;  // empty: same as the student
};

/// Everything a run needs. JSON with sections "model", "data", "train" and
/// "teacher" plus a few top-level keys; unknown keys are rejected.
struct RunConfig {
  std::string output_dir = "runs/default";
  std::size_t threads = 1;
  bool deterministic = true;

  std::string backbone = "desk-cnn-4";
  std::vector<std::size_t> widths;  // overrides the backbone when set
  std::string downsample = "strided_conv";
  std::size_t fuse_width = 0;

  DataConfig data;
  TrainConfig train;
  TeacherConfig teacher;

  std::size_t classes() const;
  ModelSpec model_spec() const;
  ModelSpec teacher_spec() const;
  GeneratorSpec generator_spec() const;
  /// Throws ConfigError naming the first offending key.
  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved JSON; parse_run_config(dump_run_config(c)) reproduces c.
std::string dump_run_config(const RunConfig& config);

/// Train and test sets described by `config`, standardized with statistics
/// of the training set when requested.
struct LoadedData {
  Dataset train;
  Dataset test;
};
LoadedData load_data(const DataConfig& config);

}  // namespace selfboost
