#include "wtnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "wtnn/errors.hpp"

namespace wtnn {

namespace {

constexpr double kBatchNormEps = 1e-5;

std::string layer_name(const char* prefix, std::size_t layer) { return prefix + std::to_string(layer + 1); }

Tensor make_tensor(std::string name, TensorKind kind, std::size_t rows, std::size_t cols, bool positive) {
  Tensor t;
  t.name = std::move(name);
  t.kind = kind;
  t.rows = rows;
  t.cols = cols;
  t.value.assign(rows * cols, 0.0);
  t.positive.assign(rows * cols, positive ? 1 : 0);
  return t;
}

double draw_normal(Rng& rng, double mean, double sd) {
  if (sd == 0.0) return mean;
  std::normal_distribution<double> dist(mean, sd);
  return dist(rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture and partition types

CovariatePartition CovariatePartition::all_oa(std::size_t d) {
  CovariatePartition p;
  p.d = d;
  for (std::size_t k = 0; k < d; ++k) p.oa.push_back(k);
  return p;
}

void CovariatePartition::validate() const {
  std::vector<int> seen(d, 0);
  for (const auto* set : {&oa, &ob, &nom}) {
    for (std::size_t k : *set) {
      if (k >= d) throw UsageError("covariate partition: index " + std::to_string(k) + " out of range");
      if (seen[k]++ != 0) throw UsageError("covariate partition: index " + std::to_string(k) + " listed twice");
    }
  }
  for (std::size_t k = 0; k < d; ++k) {
    if (seen[k] == 0) throw UsageError("covariate partition: index " + std::to_string(k) + " not assigned");
  }
}

bool CovariatePartition::is_oa(std::size_t k) const { return std::find(oa.begin(), oa.end(), k) != oa.end(); }

void ArchSpec::validate() const {
  if (widths.empty()) throw UsageError("ArchSpec: at least one hidden layer required");
  for (std::size_t w : widths) {
    if (w == 0) throw UsageError("ArchSpec: hidden widths must be positive");
  }
  if (d == 0) throw UsageError("ArchSpec: input dimension must be positive");
  if (partition.d != d) throw UsageError("ArchSpec: partition dimension differs from d");
  partition.validate();
  if (!(eta_min > 0.0)) throw UsageError("ArchSpec: eta_min must be positive");
  if (!(beta_min > 0.0) || !(beta_min < beta_max)) throw UsageError("ArchSpec: need 0 < beta_min < beta_max");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("ArchSpec: dropout rate must lie in [0, 1)");
  if (head_style == HeadStyle::MiniMlp && head_r == 0) throw UsageError("ArchSpec: mini-MLP heads need r >= 1");
}

// ---------------------------------------------------------------------------
// Parameter storage

double Tensor::effective(std::size_t i) const { return positive[i] ? softplus(value[i]) : value[i]; }

std::size_t ParamSet::size() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for (const auto& t : tensors) out.insert(out.end(), t.value.begin(), t.value.end());
  return out;
}

void ParamSet::assign(std::span<const double> flat) {
  if (flat.size() != size()) throw UsageError("ParamSet::assign: expected " + std::to_string(size()) + " values");
  std::size_t pos = 0;
  for (auto& t : tensors) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), t.size(), t.value.begin());
    pos += t.size();
  }
}

std::vector<double> ParamSet::effective_flat() const {
  std::vector<double> out;
  out.reserve(size());
  for (const auto& t : tensors)
    for (std::size_t i = 0; i < t.size(); ++i) out.push_back(t.effective(i));
  return out;
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw UsageError("ParamSet: no tensor named " + name);
}

Tensor& ParamSet::at(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParamSet&>(*this).at(name));
}

bool ParamSet::has(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const Tensor& t) { return t.name == name; });
}

ParamSet make_param_layout(const ArchSpec& spec) {
  spec.validate();
  const bool mono = spec.monotone_weights;
  ParamSet p;
  std::size_t prev = spec.d;
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    const std::size_t m = spec.widths[l];
    Tensor w = make_tensor(layer_name("W", l), TensorKind::Weight, m, prev, mono && l > 0);
    if (mono && l == 0) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t k : spec.partition.oa) w.positive[r * prev + k] = 1;
    }
    p.tensors.push_back(std::move(w));
    p.tensors.push_back(make_tensor(layer_name("b", l), TensorKind::Bias, m, 1, false));
    if (spec.use_batch_norm) {
      p.tensors.push_back(make_tensor(layer_name("bn_gamma", l), TensorKind::Scale, m, 1, mono));
      p.tensors.push_back(make_tensor(layer_name("bn_beta", l), TensorKind::Bias, m, 1, false));
      p.bn_running.push_back({std::vector<double>(m, 0.0), std::vector<double>(m, 1.0)});
    }
    prev = m;
  }
  const std::size_t mL = prev;
  if (spec.head_style == HeadStyle::Linear) {
    p.tensors.push_back(make_tensor("beta_w", TensorKind::Weight, mL, 1, mono));
    p.tensors.push_back(make_tensor("beta_b", TensorKind::Bias, 1, 1, false));
    p.tensors.push_back(make_tensor("eta_v", TensorKind::Weight, mL, 1, false));
    p.tensors.push_back(make_tensor("eta_b", TensorKind::Bias, 1, 1, false));
  } else {
    const std::size_t r = spec.head_r;
    p.tensors.push_back(make_tensor("beta_V", TensorKind::Weight, r, mL, mono));
    p.tensors.push_back(make_tensor("beta_c", TensorKind::Bias, r, 1, false));
    p.tensors.push_back(make_tensor("beta_u", TensorKind::Weight, r, 1, mono));
    p.tensors.push_back(make_tensor("beta_d", TensorKind::Bias, 1, 1, false));
    p.tensors.push_back(make_tensor("eta_V", TensorKind::Weight, r, mL, mono));
    p.tensors.push_back(make_tensor("eta_c", TensorKind::Bias, r, 1, false));
    p.tensors.push_back(make_tensor("eta_u", TensorKind::Weight, r, 1, false));
    p.tensors.push_back(make_tensor("eta_d", TensorKind::Bias, 1, 1, false));
  }
  return p;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw DomainError("inverse_softplus: argument must be positive");
  // log(e^y - 1) = y + log(1 - e^-y)
  return y > 30.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ParamSet init_params(const ArchSpec& spec, Rng& rng, const InitConfig& cfg) {
  if (!(cfg.weight_scale >= 0.0) || !(cfg.bias_scale >= 0.0)) throw UsageError("init_params: scales must be >= 0");
  ParamSet p = make_param_layout(spec);
  for (auto& t : p.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      switch (t.kind) {
        case TensorKind::Weight:
          if (t.positive[i] && cfg.effective_space) {
            const double w = std::max(std::abs(draw_normal(rng, 0.0, cfg.weight_scale)), kInitWeightFloor);
            t.value[i] = inverse_softplus(w);
          } else {
            t.value[i] = draw_normal(rng, 0.0, cfg.weight_scale);
          }
          break;
        case TensorKind::Bias:
          t.value[i] = draw_normal(rng, cfg.bias_scale, 0.1 * cfg.bias_scale);
          break;
        case TensorKind::Scale:
          t.value[i] = t.positive[i] ? inverse_softplus(1.0) : 1.0;
          break;
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Sizing

double k0(std::size_t d, double n_min) {
  if (!(n_min > 1.0)) throw UsageError("k0: n_min must exceed 1");
  const double dd = static_cast<double>(d);
  return 2.0 * dd * dd * std::log(n_min) * std::pow(n_min, -1.0 / 3.0);
}

std::size_t param_count(const ArchSpec& spec) {
  const auto& m = spec.widths;
  if (m.empty()) throw UsageError("param_count: empty architecture");
  std::size_t p = m[0] * (spec.d + 1);
  for (std::size_t l = 1; l + 1 < m.size(); ++l) p += m[l] * (m[l - 1] + 1);
  p += 2 * m.back();
  return p;
}

std::size_t trainable_count(const ArchSpec& spec) { return make_param_layout(spec).size(); }

ArchReport build_arch(const SizingInput& in) {
  if (!(in.n > in.n_min)) {
    std::ostringstream msg;
    msg << "build_arch: n = " << in.n << " must exceed n_min = " << in.n_min;
    throw SizingError(msg.str());
  }
  if (in.d == 0) throw SizingError("build_arch: d must be positive");
  if (!(in.K > 0.0)) throw SizingError("build_arch: K must be positive");
  if (!(in.rho > 0.0 && in.rho < 1.0)) throw SizingError("build_arch: rho must lie in (0, 1)");
  if (!(in.tau > 0.0 && in.tau < 1.0)) throw SizingError("build_arch: tau must lie in (0, 1)");

  ArchReport rep;
  const double log_w = in.width_log_base > 0.0 ? std::log(in.n) / std::log(in.width_log_base) : std::log(in.n);
  const double log_d = std::log(in.n) / std::log(in.depth_log_base);
  rep.m1_raw = std::sqrt(in.K / 2.0) * std::pow(in.n, 1.0 / 6.0) / std::sqrt(log_w);
  const auto m1 = static_cast<std::size_t>(std::ceil(rep.m1_raw));
  if (m1 < in.d) {
    std::ostringstream msg;
    msg << "build_arch: first-layer width m1 = " << m1 << " (raw " << rep.m1_raw << ") is below d = " << in.d
        << "; increase K or n";
    throw SizingError(msg.str());
  }
  if (m1 < 2) throw SizingError("build_arch: first-layer width below 2");

  const std::size_t depth_cap = 1 + (m1 - 2);
  rep.depth_formula = std::min(static_cast<std::size_t>(std::ceil(std::pow(log_d, in.tau))), depth_cap);
  rep.depth_formula = std::max<std::size_t>(rep.depth_formula, 1);
  std::size_t L = rep.depth_formula;
  if (in.depth_override) {
    L = *in.depth_override;
    if (L == 0 || L > depth_cap) {
      throw SizingError("build_arch: depth override " + std::to_string(L) + " outside [1, " +
                        std::to_string(depth_cap) + "]");
    }
  }

  rep.K0 = k0(in.d, in.n_min);
  if (in.K < rep.K0) {
    std::ostringstream msg;
    msg << "K = " << in.K << " is below K0 = " << rep.K0;
    rep.warnings.push_back(msg.str());
  }

  ArchSpec& spec = rep.spec;
  spec.d = in.d;
  spec.partition = CovariatePartition::all_oa(in.d);
  spec.widths.push_back(m1);
  for (std::size_t l = 1; l < L; ++l) {
    const auto geometric = static_cast<std::size_t>(std::ceil(static_cast<double>(m1) * std::pow(in.rho, double(l))));
    spec.widths.push_back(std::max<std::size_t>(2, std::min(geometric, spec.widths.back() - 1)));
  }
  rep.p_n = param_count(spec);
  rep.trainable = trainable_count(spec);
  return rep;
}

DropoutMasks sample_dropout_masks(const ArchSpec& spec, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
  DropoutMasks masks;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution drop(rate);
  for (std::size_t w : spec.widths) {
    std::vector<double> m(w, keep_scale);
    if (rate > 0.0) {
      for (auto& v : m) v = drop(rng) ? 0.0 : keep_scale;
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

// ---------------------------------------------------------------------------
// Taped forward pass

ad::Var BoundParams::eff_of(const std::string& name) const {
  for (std::size_t i = 0; i < params->tensors.size(); ++i)
    if (params->tensors[i].name == name) return eff[i];
  throw UsageError("BoundParams: no tensor named " + name);
}

BoundParams bind_params(ad::Tape& tape, const ParamSet& params, const ArchSpec& spec) {
  (void)spec;
  BoundParams b;
  b.params = &params;
  for (const auto& t : params.tensors) {
    ad::Var free = tape.variable(t.value, t.rows, t.cols);
    const auto n_pos = static_cast<std::size_t>(std::count(t.positive.begin(), t.positive.end(), 1));
    ad::Var eff;
    if (n_pos == 0) {
      eff = free;
    } else if (n_pos == t.size()) {
      eff = ad::softplus(free);
    } else {
      std::vector<double> on(t.size());
      std::vector<double> off(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) {
        on[i] = t.positive[i] ? 1.0 : 0.0;
        off[i] = 1.0 - on[i];
      }
      eff = tape.constant(on, t.rows, t.cols) * ad::softplus(free) + tape.constant(off, t.rows, t.cols) * free;
    }
    b.free.push_back(free);
    b.eff.push_back(eff);
  }
  return b;
}

namespace {

struct HeadOut {
  ad::Var beta;
  ad::Var mask;
  ad::Var eta;
};

// Applies sign(mask): mask = 1 forces non-positive weights, mask = 0 keeps them.
ad::Var masked_weights(ad::Var mask, ad::Var v) { return mask * (-ad::abs(v)) + (1.0 - mask) * v; }

HeadOut heads(const BoundParams& bound, const ArchSpec& spec, ad::Var h) {
  HeadOut out;
  const double span = spec.beta_max - spec.beta_min;
  if (spec.head_style == HeadStyle::Linear) {
    ad::Var s = ad::dot(bound.eff_of("beta_w"), h) + bound.eff_of("beta_b");
    out.beta = spec.beta_min + span * ad::sigmoid(s);
    out.mask = ad::step(out.beta, spec.beta_threshold);
    ad::Var w_eta = masked_weights(out.mask, bound.eff_of("eta_v"));
    out.eta = spec.eta_min + ad::softplus(ad::dot(w_eta, h) + bound.eff_of("eta_b"));
  } else {
    ad::Var zb = ad::softplus(ad::matvec(bound.eff_of("beta_V"), h) + bound.eff_of("beta_c"));
    ad::Var nu_b = ad::mean(bound.eff_of("beta_u") * zb) + bound.eff_of("beta_d");
    out.beta = spec.beta_min + span * ad::sigmoid(nu_b);
    out.mask = ad::step(out.beta, spec.beta_threshold);
    ad::Var ze = ad::softplus(ad::matvec(bound.eff_of("eta_V"), h) + bound.eff_of("eta_c"));
    ad::Var u_eta = masked_weights(out.mask, bound.eff_of("eta_u"));
    out.eta = spec.eta_min + ad::softplus(ad::mean(u_eta * ze) + bound.eff_of("eta_d"));
  }
  return out;
}

}  // namespace

std::vector<RowGraph> forward_graph_batch(ad::Tape& tape, const BoundParams& bound, const ArchSpec& spec,
                                          std::span<const ad::Var> xs, const std::vector<DropoutMasks>* masks,
                                          bool training, BatchStatsOut* stats) {
  const ParamSet& P = *bound.params;
  const std::size_t m = xs.size();
  if (masks != nullptr && masks->size() != m) throw UsageError("forward: one dropout mask set per row required");
  for (const auto& x : xs) {
    if (x.size() != spec.d) {
      throw UsageError("forward: input has " + std::to_string(x.size()) + " entries, expected " +
                       std::to_string(spec.d));
    }
  }
  const bool batch_bn = spec.use_batch_norm && training && m >= 2;
  if (stats != nullptr) stats->layers.clear();

  std::vector<ad::Var> h(xs.begin(), xs.end());
  std::vector<ad::Var> a(m);
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    ad::Var W = bound.eff_of(layer_name("W", l));
    ad::Var b = bound.eff_of(layer_name("b", l));
    for (std::size_t i = 0; i < m; ++i) a[i] = ad::matvec(W, h[i]) + b;

    if (spec.use_batch_norm) {
      ad::Var gamma = bound.eff_of(layer_name("bn_gamma", l));
      ad::Var shift = bound.eff_of(layer_name("bn_beta", l));
      if (batch_bn) {
        ad::Var mu = a[0];
        for (std::size_t i = 1; i < m; ++i) mu = mu + a[i];
        mu = mu / static_cast<double>(m);
        ad::Var var = (a[0] - mu) * (a[0] - mu);
        for (std::size_t i = 1; i < m; ++i) var = var + (a[i] - mu) * (a[i] - mu);
        var = var / static_cast<double>(m);
        ad::Var inv_std = ad::pow(var + kBatchNormEps, -0.5);
        for (std::size_t i = 0; i < m; ++i) a[i] = (a[i] - mu) * inv_std * gamma + shift;
        if (stats != nullptr) {
          BatchNormStats s;
          s.mean.assign(mu.value().begin(), mu.value().end());
          s.var.assign(var.value().begin(), var.value().end());
          // Unbiased estimate for the running average.
          for (auto& v : s.var) v *= static_cast<double>(m) / static_cast<double>(m - 1);
          stats->layers.push_back(std::move(s));
        }
      } else {
        const auto& rs = P.bn_running.at(l);
        std::vector<double> inv(rs.var.size());
        for (std::size_t j = 0; j < inv.size(); ++j) inv[j] = 1.0 / std::sqrt(rs.var[j] + kBatchNormEps);
        ad::Var mu = tape.constant(rs.mean);
        ad::Var inv_std = tape.constant(inv);
        for (std::size_t i = 0; i < m; ++i) a[i] = (a[i] - mu) * inv_std * gamma + shift;
      }
    }

    for (std::size_t i = 0; i < m; ++i) {
      h[i] = ad::softplus(a[i]);
      if (masks != nullptr) {
        const auto& mask = (*masks)[i].at(l);
        if (mask.size() != spec.widths[l]) throw UsageError("forward: dropout mask width mismatch");
        h[i] = h[i] * tape.constant(mask);
      }
    }
  }

  std::vector<RowGraph> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const HeadOut ho = heads(bound, spec, h[i]);
    out[i] = {ho.eta, ho.beta, ho.mask, h[i]};
  }
  return out;
}

RowGraph forward_graph(ad::Tape& tape, const BoundParams& bound, const ArchSpec& spec, ad::Var x,
                       const DropoutMasks* masks) {
  std::vector<DropoutMasks> wrapped;
  if (masks != nullptr) wrapped.push_back(*masks);
  const ad::Var xs[1] = {x};
  return forward_graph_batch(tape, bound, spec, xs, masks != nullptr ? &wrapped : nullptr, false).front();
}

namespace {

void check_input(const ArchSpec& spec, std::span<const double> x) {
  if (x.size() != spec.d) {
    throw UsageError("forward: input has " + std::to_string(x.size()) + " entries, expected " +
                     std::to_string(spec.d));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw DataError("forward: non-finite covariate value");
  }
}

NetOutput to_output(const RowGraph& g) {
  NetOutput o;
  o.eta = g.eta.scalar();
  o.beta = g.beta.scalar();
  o.mask = g.mask.scalar() > 0.5 ? 1 : 0;
  o.hidden_last.assign(g.hidden_last.value().begin(), g.hidden_last.value().end());
  return o;
}

}  // namespace

NetOutput forward(const ParamSet& params, const ArchSpec& spec, std::span<const double> x,
                  const DropoutMasks* masks) {
  check_input(spec, x);
  ad::Tape tape;
  const BoundParams bound = bind_params(tape, params, spec);
  return to_output(forward_graph(tape, bound, spec, tape.constant(x), masks));
}

std::vector<NetOutput> forward_batch(const ParamSet& params, const ArchSpec& spec, const Matrix& X) {
  std::vector<NetOutput> out;
  out.reserve(X.rows);
  ad::Tape tape;
  const BoundParams bound = bind_params(tape, params, spec);
  for (std::size_t r = 0; r < X.rows; ++r) {
    check_input(spec, X.row(r));
    out.push_back(to_output(forward_graph(tape, bound, spec, tape.constant(X.row(r)))));
  }
  return out;
}

}  // namespace wtnn
