#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "wtnn/dataset.hpp"
#include "wtnn/network.hpp"
#include "wtnn/trainer.hpp"

namespace wtnn {

/// SIM-d_a-d_n-n_s-L_s-Delta. The d_a encoded columns are d_n numerical o_a
/// covariates followed by one nominal block of d_a - d_n indicator columns.
struct SimConfig {
  std::size_t d_a = 5;
  std::size_t d_n = 2;
  std::size_t n_s = 2000;
  std::size_t L_s = 3;
  double Delta = 0.05;
  double alpha_tilde = 0.9;
  std::size_t N_s = 0;  // 0: round(n_s / 19)
  std::uint64_t seed = 0;
  /// Probability that a synthetic numerical covariate is exactly zero before
  /// standardisation.
  double zero_inflation = 0.3;

  void validate() const;
  [[nodiscard]] std::size_t vehicles() const;
  [[nodiscard]] std::string name() const;
  [[nodiscard]] std::string to_json() const;
  static SimConfig from_json(const std::string& text);
};

/// Architecture used to generate data: sizing rule at n = n_s with depth L_s.
ArchSpec sim_spec(const SimConfig& cfg);

/// Effective weights ~ N(0.1, 0.1^2) truncated to (0, inf), biases ~ N(10, 5^2).
/// Constrained entries store inverse_softplus of the draw.
ParamSet simulate_params(const ArchSpec& spec, Rng& rng);

/// Mean of N(mu, sigma^2) truncated to (0, inf).
double truncated_normal_mean(double mu, double sigma);

/// Balanced multinomial draw of n missions over N vehicles.
std::vector<std::size_t> allocate_missions(std::size_t n, std::size_t N, Rng& rng);

/// n synthetic encoded rows: standardised zero-inflated lognormal numericals,
/// then a uniformly drawn one-hot block.
Matrix synthetic_covariates(const SimConfig& cfg, std::size_t n, Rng& rng);

enum class PoolMode { Sequential, Bootstrap };

struct CovariatePool {
  Matrix rows;
  PoolMode mode = PoolMode::Sequential;
};

struct SimDataset {
  Dataset data;
  std::vector<double> eta;
  std::vector<double> beta;
  std::vector<double> t_uncensored;  // draw before censoring
};

/// Per mission: (eta, beta) from the network, t ~ Weibull, then with
/// probability Delta the row is censored at the alpha_tilde quantile. Each
/// vehicle draws from its own stream derived from cfg.seed.
SimDataset simulate_dataset(const SimConfig& cfg, const ArchSpec& spec, const ParamSet& theta,
                            const CovariatePool& pool);

/// Convenience: synthetic pool, simulated parameters and dataset from cfg.seed.
struct SimulationRun {
  SimConfig cfg;
  ArchSpec spec;
  ParamSet theta;
  SimDataset sim;
};
SimulationRun simulate(const SimConfig& cfg);

/// Median over estimates of |a - b| / (|a| + |b|), 0 when both are zero.
double smdape(const std::vector<std::vector<double>>& estimates, const std::vector<double>& truth);
/// Median over estimates of the cosine similarity; 1 when both vectors are
/// zero, 0 when exactly one is.
double cos_alignment(const std::vector<std::vector<double>>& estimates, const std::vector<double>& truth);

struct RecoveryConfig {
  SimConfig sim;
  std::size_t replicates = 5;
  TrainConfig train;
};

struct RecoveryReport {
  std::vector<double> held_out_median_xi;  // per replicate
  double median_xi = 0.0;                   // over replicates
  double ks_p_truth = 0.0;                  // generating model on its own events
  double smdape = 0.0;
  double cos_alignment = 0.0;
  double max_violation_fraction = 0.0;      // monotonicity diagnostic, worst replicate
  std::vector<std::vector<double>> estimates;
  std::vector<double> truth;
  double seconds = 0.0;
};

/// Fixed ground-truth parameters, `replicates` independently simulated
/// datasets, each split by time and fitted.
RecoveryReport run_recovery(const RecoveryConfig& cfg);

}  // namespace wtnn
