#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wtnn/matrix.hpp"
#include "wtnn/network.hpp"
#include "wtnn/weibull.hpp"

namespace wtnn {

/// Product-limit estimate. `event_times` are the sorted distinct times with at
/// least one event; `survival_values[j]` is S on [event_times[j], next).
struct KMEstimate {
  std::vector<double> event_times;
  std::vector<double> survival_values;
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> events;

  /// S(t), right-continuous.
  [[nodiscard]] double at(double t) const;
  /// S(t-), the value just before t.
  [[nodiscard]] double before(double t) const;
};

/// Pass 1 - delta as `events` for the censoring distribution.
KMEstimate kaplan_meier(std::span<const double> times, std::span<const int> events);

struct IpcwOptions {
  double w_max = 100.0;
  /// Evaluate G at Z- (default) or at Z.
  bool left_limit = true;
  /// Rescale event weights to mean 1 over events.
  bool renormalize = false;
  /// Weight each event by n times the jump of the event-time KM at Z_i,
  /// shared equally among tied events. Without ties this equals 1 / G(Z_i-).
  bool km_jump = false;
};

struct IpcwResult {
  std::vector<double> weights;
  std::size_t capped = 0;
};

/// w_i = delta_i / G(Z_i-) with G the censoring KM of the same sample.
IpcwResult ipcw_weights(std::span<const double> times, std::span<const int> events, const IpcwOptions& opt = {});

/// Censoring-distribution KM with capped inverse lookups.
struct CensoringWeights {
  KMEstimate km;
  double w_max = 100.0;
  mutable std::size_t capped = 0;

  CensoringWeights(std::span<const double> times, std::span<const int> events, double w_max_ = 100.0);
  [[nodiscard]] double inverse_before(double t) const;
  [[nodiscard]] double inverse_at(double t) const;
};

/// Harrell's C. Comparable pairs: z_i < z_k with delta_i = 1; concordant when
/// score_i > score_k, ties in score count one half. O(n log n).
double c_index(std::span<const double> scores, std::span<const double> times, std::span<const int> events);

/// Brier score at t with the two-branch censoring weights.
double brier(double t, std::span<const double> surv_at_t, std::span<const double> times, std::span<const int> events,
             double w_max = 100.0);
double brier(double t, std::span<const double> surv_at_t, std::span<const double> times, std::span<const int> events,
             const CensoringWeights& g);

/// Predicted survival of record i at time t.
using SurvivalFn = std::function<double(std::size_t i, double t)>;

/// Trapezoidal integral of brier over `grid_size` equispaced points of
/// [0, t_max], divided by t_max.
double ibs(const SurvivalFn& pred, std::span<const double> times, std::span<const int> events, double t_max,
           std::size_t grid_size = 100, double w_max = 100.0);

/// Cumulative/dynamic AUC at t. Cases: z < t with an event, weighted by
/// 1/G(z-); controls: z > t. Throws UndefinedMetricError without a case or a
/// control.
double td_auc(double t, std::span<const double> scores, std::span<const double> times, std::span<const int> events,
              double w_max = 100.0);

/// Sample quantile, linear interpolation between order statistics (type 7).
double quantile_type7(std::vector<double> values, double p);
double median(std::vector<double> values);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against U(0, 1), asymptotic p-value.
KsResult ks_uniform(std::vector<double> values);

/// Minus the predicted mean duration.
std::vector<double> risk_scores(const ParamSet& params, const ArchSpec& spec, const Matrix& X);

/// 1 - S(z | x) for each event record, in input order.
std::vector<double> xi_statistic(const ParamSet& params, const ArchSpec& spec, const Matrix& X,
                                 std::span<const double> z, std::span<const int> delta);

/// Per event record, the CDF at z averaged over M dropout-perturbed forwards.
std::vector<double> xi_mcd(const ParamSet& params, const ArchSpec& spec, const Matrix& X, std::span<const double> z,
                           std::span<const int> delta, std::size_t M, double dropout_rate, Rng& rng);

struct McdBand {
  std::vector<double> times;
  std::vector<double> mean;
  std::vector<double> variance;  // population variance over replicates
  std::vector<double> lower;     // 2.5% empirical quantile
  std::vector<double> upper;     // 97.5% empirical quantile
};

McdBand mcd_predictive(const ParamSet& params, const ArchSpec& spec, std::span<const double> x,
                       std::span<const double> time_grid, std::size_t M, double dropout_rate, Rng& rng);

struct AucPoint {
  double t = 0.0;
  double auc = 0.0;
};

struct EvalReport {
  double c_index = 0.0;
  double ibs = 0.0;
  std::vector<AucPoint> auc_grid;
  double auc_mean = 0.0;
  double xi_median = 0.0;
  double xi_q05 = 0.0;
  double xi_q95 = 0.0;
  double ks_p = 0.0;
  std::size_t n = 0;
  std::size_t n_events = 0;
  std::vector<std::string> warnings;

  [[nodiscard]] std::string to_json() const;
};

struct EvalOptions {
  std::size_t ibs_grid = 100;
  std::size_t auc_points = 20;
  /// Non-positive: the largest uncensored time.
  double t_max = 0.0;
  double w_max = 100.0;
};

/// Deterministic-forward evaluation of a model on labelled records. Censoring
/// weights come from the evaluated records themselves.
EvalReport evaluate(const ParamSet& params, const ArchSpec& spec, const Matrix& X, std::span<const double> z,
                    std::span<const int> delta, const EvalOptions& opt = {});

}  // namespace wtnn
