#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "svae/ad/adam.hpp"
#include "svae/data.hpp"
#include "svae/model.hpp"

namespace svae::train {

/// Which parameters a phase updates.
enum class ParamSet {
  All,
  CovarianceOnly,       // only "cov." parameters
  AllButCovariance,     // everything except "cov."
  AllButYSigma,         // everything except the unused diagonal Y variance head
};
std::string to_string(ParamSet set);
bool in_param_set(ParamSet set, const std::string& name);

struct Phase {
  std::string name;
  std::size_t epochs = 0;
  model::Likelihood likelihood = model::Likelihood::Structured;
  ParamSet trainable = ParamSet::All;
};

using Schedule = std::vector<Phase>;

/// Structured target: pretrain (spherical, pretrain_epochs) -> warmup
/// (covariance branch only, warmup_epochs) -> joint (the rest of
/// total_epochs). Spherical/diagonal targets: one phase of total_epochs.
/// Throws ConfigError when the structured phases do not fit in total_epochs.
Schedule default_schedule(model::Likelihood target, std::size_t total_epochs,
                          std::size_t pretrain_epochs = 30, std::size_t warmup_epochs = 5);
/// Checks epochs > 0 and that structured phases have a covariance branch.
void validate_schedule(const Schedule& schedule, const model::ModelConfig& config);
std::size_t total_epochs(const Schedule& schedule);
/// Index of the phase that owns global epoch `epoch`.
std::size_t phase_of_epoch(const Schedule& schedule, std::size_t epoch);

struct TrainState {
  std::uint64_t epoch = 0;          // global epoch being run
  std::uint64_t step = 0;           // optimizer steps taken
  std::uint64_t step_in_epoch = 0;  // batches already consumed in `epoch`
  double best_validation_loss = std::numeric_limits<double>::infinity();
  ad::AdamState adam;
};

struct TrainOptions {
  std::size_t batch_size = 64;
  double learning_rate = 5e-4;
  std::uint64_t seed = 1;
  bool flip = true;
  /// Share of records held out (the last ones in dataset order).
  double validation_fraction = 0.1;
  /// Output directory for metrics.tsv and checkpoints; empty disables files.
  std::string out_dir;
  bool checkpoint_each_epoch = true;
  /// Stop once this many total steps have run (0 = run the full schedule).
  std::uint64_t max_steps = 0;
  bool verbose = false;
  /// Per-batch loss options, given dataset indices and flip flags.
  std::function<model::LossOptions(std::span<const std::size_t>, std::span<const char>)> batch_options;
  std::function<void(const TrainState&, const model::VaeModel&)> on_epoch_end;
};

struct StepMetrics {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::string phase;
  double loss = 0.0, nll = 0.0, kl = 0.0, alpha_term = 0.0, gamma_term = 0.0;
};

/// One tab-separated metrics line (no newline), full double precision.
std::string format_metrics(const StepMetrics& m);
inline constexpr const char* kMetricsHeader = "step\tepoch\tphase\tloss\tnll\tkl\talpha_term\tgamma_term";

class Trainer {
 public:
  /// The model and dataset must outlive the trainer.
  Trainer(model::VaeModel& model, const data::Dataset& dataset, Schedule schedule,
          TrainOptions options);

  /// Runs from the current state to the end of the schedule (or max_steps).
  /// A NumericFault aborts the run; previously written checkpoints stay.
  void run();

  /// Restores parameters, optimizer and counters. Throws FormatError on a
  /// bad checksum or version and ConfigError when the checkpoint belongs to
  /// a different model, schedule or option set.
  void resume(const std::string& checkpoint_path);
  void save_checkpoint(const std::string& path) const;

  const TrainState& state() const { return state_; }
  const Schedule& schedule() const { return schedule_; }
  const std::vector<std::size_t>& train_indices() const { return train_; }
  const std::vector<std::size_t>& validation_indices() const { return validation_; }
  const std::vector<StepMetrics>& metrics() const { return metrics_; }

  /// Data order and flip coins of `epoch` over the training indices.
  void epoch_plan(std::uint64_t epoch, std::vector<std::size_t>& order, std::vector<char>& flips) const;
  /// Mean loss over `indices` (no flips, fixed per-image seeds) in `mode`.
  double evaluate_loss(const std::vector<std::size_t>& indices, model::Likelihood mode) const;

  const color::YccImage& image(std::size_t index, bool flipped) const;

 private:
  void apply_mask(std::size_t phase) const;
  void append_metrics(const StepMetrics& m);
  std::string checkpoint_name(std::uint64_t epoch) const;

  model::VaeModel& model_;
  const data::Dataset& dataset_;
  Schedule schedule_;
  TrainOptions options_;
  TrainState state_;
  std::vector<std::size_t> train_, validation_;
  std::vector<color::YccImage> plain_, flipped_;
  std::vector<StepMetrics> metrics_;
};

/// Checkpoint payload readable without a trainer (evaluation, sampling).
struct CheckpointData {
  model::ModelConfig config;
  Schedule schedule;
  TrainState state;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;
  double validation_fraction = 0.0;
  bool flip = true;
  std::vector<std::pair<std::string, ad::Tensor>> params;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes);
CheckpointData read_checkpoint(const std::string& path);
/// Copies checkpoint parameters into `model` (names and shapes must match).
void load_parameters(model::VaeModel& model, const CheckpointData& data);

}  // namespace svae::train
