#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "selfboost/data.hpp"
#include "selfboost/generator.hpp"
#include "selfboost/losses.hpp"
#include "selfboost/optim.hpp"

namespace selfboost {

enum class MetaOrder { second, first };
MetaOrder parse_meta_order(std::string_view name);
std::string_view to_string(MetaOrder order);

/// Loss the generator is meta-trained to reduce after the inner step.
enum class MetaObjective { final_exit, all_exits };
MetaObjective parse_meta_objective(std::string_view name);
std::string_view to_string(MetaObjective objective);

struct TrainConfig {
  double alpha = 0.5;
  double tau = 1.0;
  double lr_s = 0.1;
  double lr_g = 0.1;
  /// Inner-step size; unset means "equal to the model learning rate of the epoch".
  std::optional<double> zeta;
  std::size_t meta_period = 5;
  std::size_t epochs = 200;
  std::vector<std::size_t> milestones{80, 140};
  double lr_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  LossMode mode = LossMode::metadistill;
  MetaOrder meta_order = MetaOrder::second;
  MetaObjective meta_objective = MetaObjective::final_exit;
  /// Meta steps per trigger epoch; unset means floor(N / (2 * batch_size)), at least 1.
  std::optional<std::size_t> meta_steps;
  bool augment = true;

  void validate() const;
  LossConfig loss() const { return {alpha, tau, mode}; }
  StepSchedule schedule_s() const { return {lr_s, milestones, lr_factor}; }
  StepSchedule schedule_g() const { return {lr_g, milestones, lr_factor}; }
  double zeta_at(std::size_t epoch) const { return zeta ? *zeta : schedule_s().at(epoch); }
  bool is_meta_epoch(std::size_t epoch) const {
    return mode == LossMode::metadistill && epoch % meta_period == 0;
  }
  /// Whether exit heads take part in training (false for baseline and classic_kd).
  bool multi_exit() const { return mode != LossMode::baseline && mode != LossMode::classic_kd; }
};

/// One CSV line: epoch, split, exit ("1".."K" or "ensemble"), accuracy,
/// loss, mean_target_entropy, lr, wall_ms.
struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  std::string output;
  double accuracy = 0.0;
  double loss = 0.0;
  std::optional<double> target_entropy;
  double lr = 0.0;
  double wall_ms = 0.0;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);

/// Parameter and optimizer-state checksums taken around one phase.
struct PhaseAudit {
  enum class Phase { model, generator } phase = Phase::model;
  std::size_t epoch = 0;
  std::uint64_t model_before = 0, model_after = 0;
  std::uint64_t momentum_before = 0, momentum_after = 0;
  std::uint64_t generator_before = 0, generator_after = 0;
  std::uint64_t adam_before = 0, adam_after = 0;
};

struct TrainStats {
  LossCounters counters;
  std::size_t model_steps = 0;
  std::size_t meta_steps = 0;
  std::size_t epochs_done = 0;
};

/// Per-output accuracy and mean CE over a dataset. `outputs` lists exits
/// 1..K (or the final exit alone), then the ensemble.
struct EvalResult {
  std::vector<std::string> outputs;
  std::vector<double> accuracy;
  std::vector<double> loss;
  std::vector<std::optional<double>> target_entropy;
  std::size_t samples = 0;

  std::size_t index(const std::string& output) const;
};

/// theta - zeta * grad, recorded on the tape of the inputs.
template <typename S>
std::vector<Var<S>> inner_update(std::span<const Var<S>> theta, std::span<const Var<S>> grads, double zeta);

/// Gradient of the post-inner-step test loss with respect to the generator
/// parameters. Neither parameter set is modified.
template <typename S>
std::vector<Tensor<S>> meta_gradient(const MultiExitModel<S>& model, const LabelGenerator<S>& generator,
                                     const Batch<S>& train_batch, const Batch<S>& test_batch,
                                     const LossConfig& loss, double zeta, MetaOrder order,
                                     MetaObjective objective = MetaObjective::final_exit);

/// Test loss at theta_S - zeta * grad L_train, as a plain number (the
/// function whose generator gradient meta_gradient returns).
template <typename S>
double meta_objective_value(const MultiExitModel<S>& model, const LabelGenerator<S>& generator,
                            const Batch<S>& train_batch, const Batch<S>& test_batch, const LossConfig& loss,
                            double zeta, MetaObjective objective = MetaObjective::final_exit);

/// Evaluates without augmentation or graph. `generator` adds target entropies.
template <typename S>
EvalResult evaluate(const MultiExitModel<S>& model, const LabelGenerator<S>* generator, const Dataset& data,
                    std::size_t batch_size, Exits exits, double tau = 1.0);

struct EpochReport {
  std::size_t epoch = 0;
  std::vector<MetricsRow> rows;
};

/// Raised when a numeric error stops training; parameters hold the last
/// finite state.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t epoch, const std::string& what)
      : NumericError("training aborted in epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Alternates model epochs and, on trigger epochs, a generator phase.
template <typename S>
class Trainer {
 public:
  Trainer(TrainConfig config, MultiExitModel<S>& model, LabelGenerator<S>& generator);

  /// Fixed teacher for classic_kd mode (final exit logits are used).
  void set_teacher(const MultiExitModel<S>* teacher) { teacher_ = teacher; }

  std::function<void(const EpochReport&)> on_epoch_end;

  /// Trains for config.epochs epochs. `val` may be null (no val rows).
  void run(const Dataset& train, const Dataset* val);

  /// One epoch: model phase, then the generator phase on trigger epochs.
  EpochReport run_epoch(std::size_t epoch, const Dataset& train, const Dataset* val);

  const TrainConfig& config() const { return config_; }
  const TrainStats& stats() const { return stats_; }
  const std::vector<PhaseAudit>& audits() const { return audits_; }
  const SgdMomentum<S>& model_optimizer() const { return sgd_; }
  const Adam<S>& generator_optimizer() const { return adam_; }

 private:
  void model_phase(std::size_t epoch, const Dataset& train, std::vector<MetricsRow>& rows);
  void generator_phase(std::size_t epoch, const Dataset& train);
  PhaseAudit snapshot(PhaseAudit::Phase phase, std::size_t epoch) const;
  void finish(PhaseAudit& audit) const;

  TrainConfig config_;
  MultiExitModel<S>& model_;
  LabelGenerator<S>& generator_;
  const MultiExitModel<S>* teacher_ = nullptr;
  SgdMomentum<S> sgd_;
  Adam<S> adam_;
  TrainStats stats_;
  std::vector<PhaseAudit> audits_;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace selfboost
