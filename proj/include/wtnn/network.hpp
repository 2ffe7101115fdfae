#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wtnn/autodiff.hpp"
#include "wtnn/matrix.hpp"
#include "wtnn/weibull.hpp"

namespace wtnn {

/// Split of the d input positions into survival-monotone ordinals (o_a),
/// other ordinals (o_b) and one-hot nominal columns.
struct CovariatePartition {
  std::vector<std::size_t> oa;
  std::vector<std::size_t> ob;
  std::vector<std::size_t> nom;
  std::size_t d = 0;

  /// Every position in o_a.
  static CovariatePartition all_oa(std::size_t d);
  /// Throws UsageError unless the three sets are disjoint and cover 0..d-1.
  void validate() const;
  [[nodiscard]] bool is_oa(std::size_t k) const;
};

enum class HeadStyle { Linear, MiniMlp };

struct ArchSpec {
  std::vector<std::size_t> widths;  // m_1 .. m_L
  std::size_t d = 0;
  CovariatePartition partition;
  double eta_min = 1.0;
  double beta_min = 1.0;
  double beta_max = 6.0;
  HeadStyle head_style = HeadStyle::Linear;
  std::size_t head_r = 4;  // units per mini-MLP head
  double dropout_rate = 0.0;
  bool use_batch_norm = false;
  /// When false every weight is unconstrained and monotonicity is left to the
  /// penalty alone.
  bool monotone_weights = true;
  /// Mask threshold on beta.
  double beta_threshold = beta0().beta0;

  [[nodiscard]] std::size_t depth() const { return widths.size(); }
  /// Throws UsageError on inconsistent fields.
  void validate() const;
};

enum class TensorKind { Weight, Bias, Scale };

/// One trainable tensor. Entries with positive[i] != 0 enter the network as
/// softplus(value[i]); the others are used as stored.
struct Tensor {
  std::string name;
  TensorKind kind = TensorKind::Weight;
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::vector<double> value;
  std::vector<unsigned char> positive;

  [[nodiscard]] std::size_t size() const { return value.size(); }
  [[nodiscard]] double effective(std::size_t i) const;
};

/// Running batch-norm statistics for one hidden layer (not trainable).
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
};

/// All trainable quantities in canonical order: per hidden layer W, b
/// (then bn_gamma, bn_beta when enabled); the beta head; the eta head.
///
/// Linear heads: beta_w, beta_b, eta_v, eta_b.
/// Mini-MLP heads: beta_V, beta_c, beta_u, beta_d, eta_V, eta_c, eta_u, eta_d.
struct ParamSet {
  std::vector<Tensor> tensors;
  std::vector<BatchNormStats> bn_running;

  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  /// Post-reparameterisation values in canonical order.
  [[nodiscard]] std::vector<double> effective_flat() const;
  [[nodiscard]] const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  [[nodiscard]] bool has(const std::string& name) const;
};

/// Builds an all-zero ParamSet with the shapes and positivity pattern of `spec`.
ParamSet make_param_layout(const ArchSpec& spec);

double softplus(double x);
/// Inverse of softplus on (0, inf).
double inverse_softplus(double y);
double sigmoid(double x);

struct InitConfig {
  double weight_scale = 0.001;
  double bias_scale = 0.1;
  /// Draw constrained weights as |N(0, ws^2)| on the effective scale and map
  /// them back through inverse_softplus. When false, free values are drawn
  /// directly from N(0, ws^2), so their effective values sit near ln 2.
  bool effective_space = true;
};

/// Minimum effective weight produced by effective-space initialisation.
inline constexpr double kInitWeightFloor = 1e-12;

ParamSet init_params(const ArchSpec& spec, Rng& rng, const InitConfig& cfg = {});

/// Inputs to the sizing rule. Width uses the natural log, depth log base 2.
struct SizingInput {
  double n = 0.0;
  std::size_t d = 0;
  double K = 128.0;
  double rho = 0.5;
  double tau = 0.5;
  double n_min = 500.0;
  std::optional<std::size_t> depth_override;
  double width_log_base = 0.0;  // 0 means natural log
  double depth_log_base = 2.0;
};

struct ArchReport {
  ArchSpec spec;
  double m1_raw = 0.0;
  double K0 = 0.0;
  std::size_t depth_formula = 0;
  std::size_t p_n = 0;
  std::size_t trainable = 0;
  std::vector<std::string> warnings;
};

ArchReport build_arch(const SizingInput& in);
double k0(std::size_t d, double n_min);
/// Sieve count m1(d+1) + sum_{l=2}^{L-1} m_l(m_{l-1}+1) + 2 m_L.
std::size_t param_count(const ArchSpec& spec);
/// Number of scalars in make_param_layout(spec).
std::size_t trainable_count(const ArchSpec& spec);

/// Per hidden layer dropout multipliers (0 or 1/(1-p)).
using DropoutMasks = std::vector<std::vector<double>>;
DropoutMasks sample_dropout_masks(const ArchSpec& spec, double rate, Rng& rng);

struct NetOutput {
  double eta = 0.0;
  double beta = 0.0;
  int mask = 0;
  std::vector<double> hidden_last;
};

/// ParamSet tensors bound to a tape: raw leaves and their effective values.
struct BoundParams {
  std::vector<ad::Var> free;
  std::vector<ad::Var> eff;
  const ParamSet* params = nullptr;

  [[nodiscard]] ad::Var eff_of(const std::string& name) const;
};

BoundParams bind_params(ad::Tape& tape, const ParamSet& params, const ArchSpec& spec);

struct RowGraph {
  ad::Var eta;
  ad::Var beta;
  ad::Var mask;  // detached indicator
  ad::Var hidden_last;
};

/// Numeric batch statistics of each hidden layer's pre-activations, filled in
/// by forward_graph_batch when batch normalisation runs in training mode.
struct BatchStatsOut {
  std::vector<BatchNormStats> layers;
};

/// Taped forward pass for several rows. With batch norm enabled and
/// `training`, each layer normalises with statistics of these rows; otherwise
/// the running statistics are used and rows are independent.
std::vector<RowGraph> forward_graph_batch(ad::Tape& tape, const BoundParams& bound, const ArchSpec& spec,
                                          std::span<const ad::Var> xs, const std::vector<DropoutMasks>* masks,
                                          bool training, BatchStatsOut* stats = nullptr);

RowGraph forward_graph(ad::Tape& tape, const BoundParams& bound, const ArchSpec& spec, ad::Var x,
                       const DropoutMasks* masks = nullptr);

/// Deterministic forward for one input row. Throws DataError for non-finite x
/// and UsageError for a size mismatch.
NetOutput forward(const ParamSet& params, const ArchSpec& spec, std::span<const double> x,
                  const DropoutMasks* masks = nullptr);

std::vector<NetOutput> forward_batch(const ParamSet& params, const ArchSpec& spec, const Matrix& X);

}  // namespace wtnn
