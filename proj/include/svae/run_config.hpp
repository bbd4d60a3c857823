#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svae/data.hpp"
#include "svae/model.hpp"
#include "svae/training.hpp"

namespace svae::cli {

/// Everything a CLI run needs. Text form: one `key = value` per line, `#`
/// starts a comment, blank lines ignored. Precedence: built-in defaults, then
/// the config file, then `--set key=value` flags, then dedicated flags.
struct RunConfig {
  model::ModelConfig model;

  std::size_t epochs = 100;
  std::size_t pretrain_epochs = 30;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 64;
  double learning_rate = 5e-4;
  std::uint64_t seed = 1;
  bool flip = true;
  double validation_fraction = 0.1;
  std::uint64_t max_steps = 0;

  std::string dataset = "folder";  // folder | synthetic
  std::string data_dir;
  std::size_t limit = 0;

  std::size_t synthetic_count = 2000;
  std::string synthetic_family = "smooth";
  double synthetic_noise_sigma = 6.0;
  double synthetic_noise_correlation = 0.45;
  double synthetic_chroma_sigma = 2.0;
  std::uint64_t synthetic_seed = 1;

  std::string out_dir = "run";
  std::size_t eval_samples = 500;
  std::string eval_split = "validation";  // validation | all
  std::size_t eval_limit = 0;
  bool verbose = true;
};

struct ConfigKey {
  std::string name;
  std::string help;
};
/// Every accepted key with a one-line description, in echo order.
const std::vector<ConfigKey>& config_keys();

/// Sets one key. ConfigError names the key for unknown keys or bad values.
void apply(RunConfig& config, const std::string& key, const std::string& value);
/// Applies `key=value` (as given to --set).
void apply_assignment(RunConfig& config, const std::string& assignment);
/// Parses config text on top of `config`. Errors carry the line number.
void apply_text(RunConfig& config, const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::string& path);
/// All keys with their current values; apply_text(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);
/// Cross-field checks (model config, dataset source, splits).
void validate(const RunConfig& config);

data::Dataset load_dataset(const RunConfig& config);
data::SyntheticSpec synthetic_spec(const RunConfig& config);
train::Schedule schedule_of(const RunConfig& config);
train::TrainOptions train_options(const RunConfig& config);
/// Dataset indices an eval/reconstruct command works on.
std::vector<std::size_t> eval_indices(const RunConfig& config, std::size_t dataset_size);

}  // namespace svae::cli
