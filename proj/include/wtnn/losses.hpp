#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wtnn/autodiff.hpp"
#include "wtnn/matrix.hpp"
#include "wtnn/network.hpp"
#include "wtnn/weibull.hpp"

namespace wtnn {

struct LossWeights {
  double mono = 1.0;
  double orth = 0.1;
  double cov = 0.01;
  double mse = 1.0;

  void validate() const;
};

/// Rows of (x, z, delta, w). z > 0, delta in {0, 1}, w >= 0.
struct Batch {
  Matrix X;
  std::vector<double> z;
  std::vector<int> delta;
  std::vector<double> w;

  [[nodiscard]] std::size_t size() const { return z.size(); }
  /// Throws DataError on a violated row invariant, UsageError on size mismatch.
  void validate(std::size_t d) const;
  /// Sub-batch made of the listed rows, in that order.
  [[nodiscard]] Batch subset(std::span<const std::size_t> rows) const;
};

enum class NllReduction { Sum, Mean };

/// One batch taped through the network. Covariate rows are leaves so that
/// input derivatives can be seeded.
struct LossContext {
  ad::Tape* tape = nullptr;
  const ArchSpec* spec = nullptr;
  BoundParams bound;
  std::vector<ad::Var> xs;
  std::vector<RowGraph> rows;
  BatchStatsOut bn_stats;
  std::vector<std::string> warnings;
};

LossContext build_context(ad::Tape& tape, const ParamSet& params, const ArchSpec& spec, const Batch& batch,
                          const std::vector<DropoutMasks>* masks = nullptr, bool training = false);

/// Censored Weibull negative log-likelihood; each row is clamped at `cap`
/// (no gradient through a clamped row). `saturated` receives the number of
/// clamped rows.
ad::Var nll(LossContext& ctx, const Batch& batch, NllReduction reduction = NllReduction::Sum,
            std::size_t* saturated = nullptr, double cap = kDefaultNllCap);

/// Mean over rows of the hinge on wrong-signed o_a input derivatives of beta
/// and, where the mask is on, of eta.
ad::Var mono_penalty(LossContext& ctx, const Batch& batch);

/// Squared cosine between the beta-head and eta-head weight vectors (u vectors
/// for mini-MLP heads). 1 when either vector is zero.
ad::Var orth_penalty(LossContext& ctx);

/// Half the squared off-diagonal mass of the sample covariance of `hidden`.
/// Requires at least two rows.
ad::Var decov_penalty(ad::Tape& tape, std::span<const ad::Var> hidden);

/// Mean of w (z - eta Gamma(1 + 1/beta))^2.
ad::Var mse_ipcw(LossContext& ctx, const Batch& batch);

struct LossOptions {
  NllReduction reduction = NllReduction::Mean;
  double nll_cap = kDefaultNllCap;
  /// Under monotone weights the monotonicity penalty and its gradient are
  /// identically zero; it is left off the tape unless this is set.
  bool tape_mono_when_constrained = false;
};

struct LossTerms {
  ad::Var total;
  ad::Var nll;
  ad::Var mono;
  ad::Var orth;
  ad::Var cov;
  ad::Var mse;
  std::size_t saturated = 0;
};

LossTerms total_loss(LossContext& ctx, const Batch& batch, const LossWeights& lw, const LossOptions& opt = {});

struct LossValues {
  double total = 0.0;
  double nll = 0.0;
  double mono = 0.0;
  double orth = 0.0;
  double cov = 0.0;
  double mse = 0.0;
  std::size_t saturated = 0;
};

/// Numeric evaluation of total_loss with running batch-norm statistics.
LossValues evaluate_loss(const ParamSet& params, const ArchSpec& spec, const Batch& batch, const LossWeights& lw,
                         const LossOptions& opt = {});

/// Exact NLL sum through censored_nll; `saturated` counts capped rows.
double nll_sum(const ParamSet& params, const ArchSpec& spec, const Batch& batch, std::size_t* saturated = nullptr,
               double cap = kDefaultNllCap);

struct MonotonicityReport {
  std::size_t pairs = 0;       // (record, o_a coordinate) pairs examined
  std::size_t violations = 0;  // pairs with a wrong-signed derivative
  [[nodiscard]] double fraction() const { return pairs == 0 ? 0.0 : double(violations) / double(pairs); }
};

/// Counts pairs where d beta / d x_k < -tol, or the mask is on and
/// d eta / d x_k > tol.
MonotonicityReport monotonicity_violations(const ParamSet& params, const ArchSpec& spec, const Matrix& X,
                                           double tol = 0.0);

}  // namespace wtnn
