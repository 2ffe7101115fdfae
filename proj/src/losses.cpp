#include "wtnn/losses.hpp"

#include <cmath>
#include <string>

#include "wtnn/errors.hpp"

namespace wtnn {

void LossWeights::validate() const {
  for (double v : {mono, orth, cov, mse}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError("loss weights must be finite and non-negative");
  }
}

void Batch::validate(std::size_t d) const {
  const std::size_t m = z.size();
  if (X.rows != m || delta.size() != m || w.size() != m) throw UsageError("Batch: column lengths differ");
  if (m > 0 && X.cols != d) throw UsageError("Batch: covariate width differs from the architecture");
  for (std::size_t i = 0; i < m; ++i) {
    if (!(z[i] > 0.0) || !std::isfinite(z[i])) throw DataError("Batch row " + std::to_string(i) + ": duration must be positive");
    if (delta[i] != 0 && delta[i] != 1) throw DataError("Batch row " + std::to_string(i) + ": event flag must be 0 or 1");
    if (!(w[i] >= 0.0)) throw DataError("Batch row " + std::to_string(i) + ": weight must be non-negative");
  }
}

Batch Batch::subset(std::span<const std::size_t> rows) const {
  Batch b;
  b.X = Matrix(rows.size(), X.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = X.row(rows[i]);
    std::copy(src.begin(), src.end(), b.X.row(i).begin());
    b.z.push_back(z[rows[i]]);
    b.delta.push_back(delta[rows[i]]);
    b.w.push_back(w[rows[i]]);
  }
  return b;
}

LossContext build_context(ad::Tape& tape, const ParamSet& params, const ArchSpec& spec, const Batch& batch,
                          const std::vector<DropoutMasks>* masks, bool training) {
  batch.validate(spec.d);
  if (batch.size() == 0) throw UsageError("loss: empty batch");
  LossContext ctx;
  ctx.tape = &tape;
  ctx.spec = &spec;
  ctx.bound = bind_params(tape, params, spec);
  const std::size_t m = batch.size();
  if (spec.use_batch_norm && training && m >= 2) {
    for (std::size_t i = 0; i < m; ++i) ctx.xs.push_back(tape.variable(batch.X.row(i)));
    ctx.rows = forward_graph_batch(tape, ctx.bound, spec, ctx.xs, masks, true, &ctx.bn_stats);
    return ctx;
  }
  // Row-by-row keeps each row's nodes contiguous, which bounds the jvp scans.
  for (std::size_t i = 0; i < m; ++i) {
    ad::Var x = tape.variable(batch.X.row(i));
    ctx.xs.push_back(x);
    const DropoutMasks* row_mask = masks != nullptr ? &(*masks).at(i) : nullptr;
    ctx.rows.push_back(forward_graph(tape, ctx.bound, spec, x, row_mask));
  }
  return ctx;
}

ad::Var nll(LossContext& ctx, const Batch& batch, NllReduction reduction, std::size_t* saturated, double cap) {
  ad::Tape& tape = *ctx.tape;
  const std::size_t m = ctx.rows.size();
  std::size_t n_sat = 0;
  ad::Var acc;
  for (std::size_t i = 0; i < m; ++i) {
    const RowGraph& r = ctx.rows[i];
    ad::Var log_eta = ad::log(r.eta);
    ad::Var log_ratio = tape.constant(std::log(batch.z[i])) - log_eta;
    ad::Var term = ad::exp(r.beta * log_ratio);
    if (batch.delta[i] == 1) term = term - (ad::log(r.beta) - log_eta + (r.beta - 1.0) * log_ratio);
    if (!(term.scalar() <= cap)) ++n_sat;
    term = ad::min(term, cap);
    acc = acc.valid() ? acc + term : term;
  }
  if (saturated != nullptr) *saturated = n_sat;
  return reduction == NllReduction::Mean ? acc / static_cast<double>(m) : acc;
}

ad::Var mono_penalty(LossContext& ctx, const Batch& batch) {
  (void)batch;
  ad::Tape& tape = *ctx.tape;
  const ArchSpec& spec = *ctx.spec;
  if (spec.partition.oa.empty()) {
    ctx.warnings.emplace_back("monotonicity penalty: no o_a covariates, penalty is 0");
    return tape.constant(0.0);
  }
  std::vector<ad::Var> basis;
  for (std::size_t k : spec.partition.oa) {
    std::vector<double> e(spec.d, 0.0);
    e[k] = 1.0;
    basis.push_back(tape.constant(e));
  }
  ad::Var acc;
  for (std::size_t i = 0; i < ctx.rows.size(); ++i) {
    const RowGraph& r = ctx.rows[i];
    for (const ad::Var& dir : basis) {
      const ad::Seed seed{ctx.xs[i], dir};
      ad::Var dbeta = tape.jvp(r.beta, std::span<const ad::Seed>(&seed, 1));
      ad::Var deta = tape.jvp(r.eta, std::span<const ad::Seed>(&seed, 1));
      ad::Var term = ad::max0(-dbeta) + r.mask * ad::max0(deta);
      acc = acc.valid() ? acc + term : term;
    }
  }
  return acc / static_cast<double>(ctx.rows.size());
}

ad::Var orth_penalty(LossContext& ctx) {
  ad::Tape& tape = *ctx.tape;
  const bool linear = ctx.spec->head_style == HeadStyle::Linear;
  ad::Var a = ctx.bound.eff_of(linear ? "beta_w" : "beta_u");
  ad::Var b = ctx.bound.eff_of(linear ? "eta_v" : "eta_u");
  ad::Var aa = ad::dot(a, a);
  ad::Var bb = ad::dot(b, b);
  if (aa.scalar() == 0.0 || bb.scalar() == 0.0) {
    ctx.warnings.emplace_back("orthogonality penalty: zero-norm head weights, penalty set to 1");
    return tape.constant(1.0);
  }
  ad::Var ab = ad::dot(a, b);
  return ab * ab / (aa * bb);
}

ad::Var decov_penalty(ad::Tape& tape, std::span<const ad::Var> hidden) {
  const std::size_t m = hidden.size();
  if (m < 2) throw UsageError("decov_penalty: at least two rows required");
  const std::size_t q = hidden[0].size();
  ad::Var mean = hidden[0];
  for (std::size_t i = 1; i < m; ++i) mean = mean + hidden[i];
  mean = mean / static_cast<double>(m);
  ad::Var cov;
  for (std::size_t i = 0; i < m; ++i) {
    ad::Var c = hidden[i] - mean;
    ad::Var o = ad::outer(c, c);
    cov = cov.valid() ? cov + o : o;
  }
  cov = cov / static_cast<double>(m - 1);
  std::vector<double> offdiag(q * q, 1.0);
  for (std::size_t j = 0; j < q; ++j) offdiag[j * q + j] = 0.0;
  return 0.5 * ad::sum(cov * cov * tape.constant(offdiag, q, q));
}

ad::Var mse_ipcw(LossContext& ctx, const Batch& batch) {
  ad::Tape& tape = *ctx.tape;
  const std::size_t m = ctx.rows.size();
  ad::Var acc = tape.constant(0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (batch.w[i] == 0.0) continue;
    const RowGraph& r = ctx.rows[i];
    ad::Var mu = r.eta * ad::exp(ad::lgamma(1.0 + 1.0 / r.beta));
    ad::Var res = batch.z[i] - mu;
    acc = acc + batch.w[i] * (res * res);
  }
  return acc / static_cast<double>(m);
}

LossTerms total_loss(LossContext& ctx, const Batch& batch, const LossWeights& lw, const LossOptions& opt) {
  lw.validate();
  ad::Tape& tape = *ctx.tape;
  LossTerms t;
  t.nll = nll(ctx, batch, opt.reduction, &t.saturated, opt.nll_cap);
  t.total = t.nll;

  const bool tape_mono = lw.mono > 0.0 && (!ctx.spec->monotone_weights || opt.tape_mono_when_constrained);
  t.mono = tape_mono ? mono_penalty(ctx, batch) : tape.constant(0.0);
  t.orth = orth_penalty(ctx);
  if (ctx.rows.size() >= 2) {
    std::vector<ad::Var> hidden;
    hidden.reserve(ctx.rows.size());
    for (const auto& r : ctx.rows) hidden.push_back(r.hidden_last);
    t.cov = decov_penalty(tape, hidden);
  } else {
    t.cov = tape.constant(0.0);
  }
  t.mse = mse_ipcw(ctx, batch);

  if (tape_mono) t.total = t.total + lw.mono * t.mono;
  if (lw.orth > 0.0) t.total = t.total + lw.orth * t.orth;
  if (lw.cov > 0.0) t.total = t.total + lw.cov * t.cov;
  if (lw.mse > 0.0) t.total = t.total + lw.mse * t.mse;
  return t;
}

LossValues evaluate_loss(const ParamSet& params, const ArchSpec& spec, const Batch& batch, const LossWeights& lw,
                         const LossOptions& opt) {
  ad::Tape tape;
  LossContext ctx = build_context(tape, params, spec, batch);
  const LossTerms t = total_loss(ctx, batch, lw, opt);
  LossValues v;
  v.total = t.total.scalar();
  v.nll = t.nll.scalar();
  v.mono = t.mono.scalar();
  v.orth = t.orth.scalar();
  v.cov = t.cov.scalar();
  v.mse = t.mse.scalar();
  v.saturated = t.saturated;
  return v;
}

double nll_sum(const ParamSet& params, const ArchSpec& spec, const Batch& batch, std::size_t* saturated, double cap) {
  batch.validate(spec.d);
  const auto out = forward_batch(params, spec, batch.X);
  double total = 0.0;
  std::size_t n_sat = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const NllTerm term = censored_nll(batch.z[i], batch.delta[i], WeibullParams(out[i].eta, out[i].beta), cap);
    total += term.value;
    if (term.saturated) ++n_sat;
  }
  if (saturated != nullptr) *saturated = n_sat;
  return total;
}

MonotonicityReport monotonicity_violations(const ParamSet& params, const ArchSpec& spec, const Matrix& X, double tol) {
  MonotonicityReport rep;
  if (spec.partition.oa.empty()) return rep;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < X.rows; start += kChunk) {
    ad::Tape tape;
    const BoundParams bound = bind_params(tape, params, spec);
    std::vector<ad::Var> basis;
    for (std::size_t k : spec.partition.oa) {
      std::vector<double> e(spec.d, 0.0);
      e[k] = 1.0;
      basis.push_back(tape.constant(e));
    }
    const std::size_t stop = std::min(X.rows, start + kChunk);
    for (std::size_t r = start; r < stop; ++r) {
      ad::Var x = tape.variable(X.row(r));
      const RowGraph g = forward_graph(tape, bound, spec, x);
      const bool mask_on = g.mask.scalar() > 0.5;
      for (const ad::Var& dir : basis) {
        const ad::Seed seed{x, dir};
        const double dbeta = tape.jvp(g.beta, std::span<const ad::Seed>(&seed, 1)).scalar();
        const double deta = tape.jvp(g.eta, std::span<const ad::Seed>(&seed, 1)).scalar();
        ++rep.pairs;
        if (dbeta < -tol || (mask_on && deta > tol)) ++rep.violations;
      }
    }
  }
  return rep;
}

}  // namespace wtnn
