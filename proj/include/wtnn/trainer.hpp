#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wtnn/dataset.hpp"
#include "wtnn/losses.hpp"
#include "wtnn/network.hpp"

namespace wtnn {

struct TrainConfig {
  double lr0 = 0.01;
  double plateau_factor = 0.1;
  std::size_t plateau_patience = 10;
  double lr_floor = 1e-8;
  std::size_t max_epochs = 500;
  std::size_t batch_size = 256;
  std::size_t restarts = 5;
  std::uint64_t seed = 0;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Consecutive non-finite batches that abort a restart.
  std::size_t nan_patience = 3;
  double ipcw_w_max = 100.0;
  LossWeights loss_weights;
  InitConfig init;

  void validate() const;
  [[nodiscard]] std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are a UsageError.
  static TrainConfig from_json(const std::string& text);
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

/// One Adam update with bias correction, after optional global-norm clipping.
/// Returns false, leaving state and params untouched, when a gradient is not
/// finite.
bool adam_step(AdamState& state, std::span<double> params, std::span<const double> grads, double lr,
               const TrainConfig& cfg);

/// Reduce-on-plateau: after `patience` epochs without strict improvement the
/// rate is multiplied by `factor`; a cut starts a cooldown of `patience`
/// epochs during which no further cut happens. Never below `floor`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, double factor, std::size_t patience, double floor);
  /// Value the first epoch must beat, e.g. the objective at initialisation.
  void set_reference(double value) { best_ = value; }
  /// Records one epoch's objective; returns true if the rate was cut.
  bool step(double value);
  [[nodiscard]] double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double floor_;
  double best_;
  std::size_t bad_ = 0;
  std::size_t cooldown_ = 0;
};

struct LrEvent {
  std::size_t epoch = 0;
  double lr = 0.0;
};

struct RestartReport {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool aborted = false;
  std::string abort_reason;
  double initial_objective = 0.0;
  std::vector<double> objective_trace;  // full-train objective after each epoch
  std::vector<LrEvent> lr_events;
  double final_objective = 0.0;
  double final_nll = 0.0;  // full-train NLL sum
  std::size_t skipped_steps = 0;
  std::size_t nonfinite_batches = 0;
  std::size_t saturated_rows = 0;
};

struct TrainReport {
  std::vector<RestartReport> restarts;
  std::size_t chosen = 0;
  double final_objective = 0.0;
  double final_nll = 0.0;
  std::size_t ipcw_capped = 0;
  double wall_seconds = 0.0;

  [[nodiscard]] std::string to_json() const;
};

struct FitResult {
  ParamSet params;
  TrainReport report;
};

/// Full-train objective: total_loss with mean reduction, running statistics.
double objective(const ParamSet& params, const ArchSpec& spec, const Batch& batch, const LossWeights& lw);

/// Multi-start minibatch Adam on total_loss. IPCW weights are computed on
/// `train`. Throws TrainingError when every restart aborts.
FitResult fit(const Dataset& train, const ArchSpec& spec, const TrainConfig& cfg);

}  // namespace wtnn
