#pragma once

// Shared fixtures for unit and acceptance tests.

#include <random>
#include <utility>
#include <vector>

#include "wtnn/losses.hpp"
#include "wtnn/network.hpp"

namespace wtnn::test {

/// d inputs: the first half o_a, then one o_b column, the rest nominal.
inline ArchSpec mixed_spec(std::size_t d, std::vector<std::size_t> widths, HeadStyle style) {
  ArchSpec s;
  s.d = d;
  s.widths = std::move(widths);
  s.head_style = style;
  s.head_r = 3;
  s.partition.d = d;
  const std::size_t n_oa = (d + 1) / 2;
  for (std::size_t k = 0; k < d; ++k) {
    if (k < n_oa) {
      s.partition.oa.push_back(k);
    } else if (k == n_oa) {
      s.partition.ob.push_back(k);
    } else {
      s.partition.nom.push_back(k);
    }
  }
  return s;
}

struct Instance {
  ArchSpec spec;
  ParamSet params;
};

/// Random architecture and parameters with beta spread around the mask threshold.
inline Instance random_instance(std::mt19937_64& rng, HeadStyle style) {
  std::uniform_int_distribution<std::size_t> dd(2, 6);
  std::uniform_int_distribution<std::size_t> depth(1, 3);
  const std::size_t d = dd(rng);
  std::vector<std::size_t> widths;
  std::size_t w = std::uniform_int_distribution<std::size_t>(3, 7)(rng);
  const std::size_t L = depth(rng);
  for (std::size_t l = 0; l < L && w >= 1; ++l) {
    widths.push_back(w);
    const std::size_t step = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
    w = w > step ? w - step : 1;
  }
  Instance inst{mixed_spec(d, widths, style), {}};
  InitConfig ic;
  ic.weight_scale = std::uniform_real_distribution<double>(0.2, 1.5)(rng);
  ic.bias_scale = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  Rng prng(rng());
  if (ic.bias_scale < 0.0) {
    ic.bias_scale = -ic.bias_scale;
    inst.params = init_params(inst.spec, prng, ic);
    for (auto& t : inst.params.tensors)
      if (t.kind == TensorKind::Bias)
        for (double& v : t.value) v = -v;
  } else {
    inst.params = init_params(inst.spec, prng, ic);
  }
  // beta = 1 + 5 sigmoid(.) sits above the threshold (about 2.17) unless the
  // head bias is pushed down; an offset in (-4, 1) puts both mask states in play.
  const double offset = std::uniform_real_distribution<double>(-4.0, 1.0)(rng);
  for (auto& t : inst.params.tensors)
    if (t.name == "beta_b" || t.name == "beta_d")
      for (double& v : t.value) v += offset;
  return inst;
}

/// Inputs x1, x2 that differ only on o_a positions with x1 <= x2 there.
inline std::pair<std::vector<double>, std::vector<double>> oa_ordered_pair(std::mt19937_64& rng,
                                                                           const ArchSpec& spec) {
  std::normal_distribution<double> nd;
  std::exponential_distribution<double> inc(1.0);
  std::vector<double> x1(spec.d);
  for (double& v : x1) v = 1.5 * nd(rng);
  std::vector<double> x2 = x1;
  for (std::size_t k : spec.partition.oa) x2[k] += inc(rng);
  return {x1, x2};
}

/// Random batch with standard-normal covariates, durations in (0.2, 5),
/// roughly a third censored and IPCW-like weights (0 on censored rows).
inline Batch random_batch(std::mt19937_64& rng, std::size_t d, std::size_t m) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> uz(0.2, 5.0);
  std::uniform_real_distribution<double> uw(0.5, 2.0);
  std::bernoulli_distribution event(0.67);
  Batch b;
  b.X = Matrix(m, d);
  for (double& v : b.X.data) v = nd(rng);
  for (std::size_t i = 0; i < m; ++i) {
    b.z.push_back(uz(rng));
    b.delta.push_back(event(rng) ? 1 : 0);
    b.w.push_back(b.delta.back() == 1 ? uw(rng) : 0.0);
  }
  return b;
}

/// Like random_batch, but durations are drawn from the network's own Weibull
/// so every row's likelihood term is of order one. Finite differences are
/// meaningless once a row's term dwarfs its parameter sensitivity.
inline Batch model_batch(std::mt19937_64& rng, const Instance& inst, std::size_t m) {
  Batch b = random_batch(rng, inst.spec.d, m);
  const auto out = forward_batch(inst.params, inst.spec, b.X);
  Rng srng(rng());
  for (std::size_t i = 0; i < m; ++i) b.z[i] = sample(srng, WeibullParams(out[i].eta, out[i].beta));
  return b;
}

}  // namespace wtnn::test
