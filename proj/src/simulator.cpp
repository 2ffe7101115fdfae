#include "wtnn/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include <json.hpp>

#include "wtnn/errors.hpp"
#include "wtnn/losses.hpp"
#include "wtnn/metrics.hpp"

namespace wtnn {

using nlohmann::ordered_json;

namespace {

// Independent stream for (seed, purpose[, index]).
Rng stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

enum Purpose : std::uint64_t { kTheta = 1, kCovariates = 2, kAllocation = 3, kVehicle = 4 };

constexpr double kWeightMean = 0.1;
constexpr double kWeightSd = 0.1;
constexpr double kBiasMean = 10.0;
constexpr double kBiasSd = 5.0;

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void SimConfig::validate() const {
  if (d_n > d_a) throw UsageError("simulation: d_n exceeds d_a");
  if (d_a == 0) throw UsageError("simulation: d_a must be positive");
  if (d_a - d_n == 1) throw UsageError("simulation: a nominal block needs at least two indicator columns");
  if (L_s < 1) throw UsageError("simulation: L_s must be at least 1");
  if (!(Delta >= 0.0 && Delta < 1.0)) throw UsageError("simulation: Delta must lie in [0, 1)");
  if (!(alpha_tilde > 0.0 && alpha_tilde < 1.0)) throw UsageError("simulation: alpha_tilde must lie in (0, 1)");
  if (!(zero_inflation >= 0.0 && zero_inflation < 1.0)) throw UsageError("simulation: zero_inflation must lie in [0, 1)");
  if (n_s < 1 || vehicles() < 1 || vehicles() > n_s) throw UsageError("simulation: need n_s >= N_s >= 1");
}

std::size_t SimConfig::vehicles() const {
  if (N_s > 0) return N_s;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n_s) / 19.0)));
}

std::string SimConfig::name() const {
  char delta[32];
  std::snprintf(delta, sizeof delta, "%g", Delta);
  return "SIM-" + std::to_string(d_a) + "-" + std::to_string(d_n) + "-" + std::to_string(n_s) + "-" +
         std::to_string(L_s) + "-" + delta;
}

std::string SimConfig::to_json() const {
  ordered_json j;
  j["d_a"] = d_a;
  j["d_n"] = d_n;
  j["n_s"] = n_s;
  j["L_s"] = L_s;
  j["Delta"] = Delta;
  j["alpha_tilde"] = alpha_tilde;
  j["N_s"] = vehicles();
  j["seed"] = seed;
  j["zero_inflation"] = zero_inflation;
  return j.dump(2);
}

SimConfig SimConfig::from_json(const std::string& text) {
  SimConfig c;
  try {
    const auto j = ordered_json::parse(text);
    if (!j.is_object()) throw UsageError("simulation config: expected a JSON object");
    for (const auto& item : j.items()) {
      const std::string& k = item.key();
      if (k == "d_a") c.d_a = item.value().get<std::size_t>();
      else if (k == "d_n") c.d_n = item.value().get<std::size_t>();
      else if (k == "n_s") c.n_s = item.value().get<std::size_t>();
      else if (k == "L_s") c.L_s = item.value().get<std::size_t>();
      else if (k == "Delta") c.Delta = item.value().get<double>();
      else if (k == "alpha_tilde") c.alpha_tilde = item.value().get<double>();
      else if (k == "N_s") c.N_s = item.value().get<std::size_t>();
      else if (k == "seed") c.seed = item.value().get<std::uint64_t>();
      else if (k == "zero_inflation") c.zero_inflation = item.value().get<double>();
      else throw UsageError("simulation config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

ArchSpec sim_spec(const SimConfig& cfg) {
  cfg.validate();
  SizingInput in;
  in.n = static_cast<double>(cfg.n_s);
  in.d = cfg.d_a;
  in.depth_override = cfg.L_s;
  ArchSpec spec = build_arch(in).spec;
  spec.partition = CovariatePartition{};
  spec.partition.d = cfg.d_a;
  for (std::size_t k = 0; k < cfg.d_a; ++k) (k < cfg.d_n ? spec.partition.oa : spec.partition.nom).push_back(k);
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Ground-truth parameters and covariates

double truncated_normal_mean(double mu, double sigma) {
  const double alpha = -mu / sigma;
  const double phi = std::exp(-0.5 * alpha * alpha) / std::sqrt(2.0 * std::numbers::pi);
  const double tail = 0.5 * std::erfc(alpha / std::numbers::sqrt2);
  return mu + sigma * phi / tail;
}

ParamSet simulate_params(const ArchSpec& spec, Rng& rng) {
  ParamSet p = make_param_layout(spec);
  std::normal_distribution<double> w(kWeightMean, kWeightSd);
  std::normal_distribution<double> b(kBiasMean, kBiasSd);
  for (auto& t : p.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t.kind == TensorKind::Bias) {
        t.value[i] = b(rng);
        continue;
      }
      if (t.kind == TensorKind::Scale) {
        t.value[i] = t.positive[i] ? inverse_softplus(1.0) : 1.0;
        continue;
      }
      double v = w(rng);
      while (!(v > 0.0)) v = w(rng);
      t.value[i] = t.positive[i] ? inverse_softplus(v) : v;
    }
  }
  return p;
}

std::vector<std::size_t> allocate_missions(std::size_t n, std::size_t N, Rng& rng) {
  if (N < 1) throw UsageError("allocate_missions: need at least one vehicle");
  std::vector<std::size_t> counts(N, 0);
  std::size_t remaining = n;
  for (std::size_t k = 0; k + 1 < N; ++k) {
    std::binomial_distribution<std::size_t> bin(remaining, 1.0 / static_cast<double>(N - k));
    counts[k] = bin(rng);
    remaining -= counts[k];
  }
  counts[N - 1] = remaining;
  return counts;
}

Matrix synthetic_covariates(const SimConfig& cfg, std::size_t n, Rng& rng) {
  Matrix X(n, cfg.d_a);
  std::bernoulli_distribution zero(cfg.zero_inflation);
  std::lognormal_distribution<double> ln(0.0, 1.0);
  const std::size_t levels = cfg.d_a - cfg.d_n;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < cfg.d_n; ++k) X(i, k) = zero(rng) ? 0.0 : ln(rng);
    if (levels > 0) {
      std::uniform_int_distribution<std::size_t> cat(0, levels - 1);
      X(i, cfg.d_n + cat(rng)) = 1.0;
    }
  }
  for (std::size_t k = 0; k < cfg.d_n && n > 0; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += X(i, k);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (X(i, k) - mean) * (X(i, k) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) X(i, k) = sd > 0.0 ? (X(i, k) - mean) / sd : X(i, k) - mean;
  }
  return X;
}

// ---------------------------------------------------------------------------
// Dataset simulation

SimDataset simulate_dataset(const SimConfig& cfg, const ArchSpec& spec, const ParamSet& theta,
                            const CovariatePool& pool) {
  cfg.validate();
  if (pool.rows.cols != spec.d) throw UsageError("simulate_dataset: covariate pool width differs from the architecture");
  if (pool.rows.rows == 0) throw DataError("simulate_dataset: empty covariate pool");
  if (pool.mode == PoolMode::Sequential && pool.rows.rows < cfg.n_s)
    throw DataError("simulate_dataset: covariate pool exhausted (" + std::to_string(pool.rows.rows) + " rows for " +
                    std::to_string(cfg.n_s) + " missions)");

  Rng alloc_rng = stream(cfg.seed, kAllocation);
  const auto counts = allocate_missions(cfg.n_s, cfg.vehicles(), alloc_rng);
  const auto out = forward_batch(theta, spec, pool.rows);
  const int width = static_cast<int>(std::to_string(counts.size()).size());

  SimDataset s;
  s.data.X = Matrix(cfg.n_s, spec.d);
  std::size_t row = 0;
  for (std::size_t v = 0; v < counts.size(); ++v) {
    Rng rng = stream(cfg.seed, kVehicle, v);
    std::uniform_int_distribution<std::size_t> pick(0, pool.rows.rows - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    char id[32];
    std::snprintf(id, sizeof id, "veh%0*zu", width, v + 1);
    for (std::size_t j = 0; j < counts[v]; ++j, ++row) {
      const std::size_t src = pool.mode == PoolMode::Sequential ? row : pick(rng);
      std::copy(pool.rows.row(src).begin(), pool.rows.row(src).end(), s.data.X.row(row).begin());
      const WeibullParams wp(out[src].eta, out[src].beta);
      // Inverse-CDF draw; 1 - U keeps the argument in (0, 1].
      const double t = wp.eta * std::pow(-std::log1p(-unif(rng)), 1.0 / wp.beta);
      const bool censor = unif(rng) < cfg.Delta;
      s.data.z.push_back(censor ? quantile(cfg.alpha_tilde, wp) : t);
      s.data.delta.push_back(censor ? 0 : 1);
      s.data.vehicle.emplace_back(id);
      s.eta.push_back(wp.eta);
      s.beta.push_back(wp.beta);
      s.t_uncensored.push_back(t);
    }
  }
  for (std::size_t k = 0; k < spec.d; ++k)
    s.data.columns.push_back(k < cfg.d_n ? "num" + std::to_string(k + 1) : "cat_" + std::to_string(k - cfg.d_n + 1));
  return s;
}

SimulationRun simulate(const SimConfig& cfg) {
  SimulationRun run;
  run.cfg = cfg;
  run.spec = sim_spec(cfg);
  Rng theta_rng = stream(cfg.seed, kTheta);
  run.theta = simulate_params(run.spec, theta_rng);
  Rng cov_rng = stream(cfg.seed, kCovariates);
  const CovariatePool pool{synthetic_covariates(cfg, cfg.n_s, cov_rng), PoolMode::Sequential};
  run.sim = simulate_dataset(cfg, run.spec, run.theta, pool);
  return run;
}

// ---------------------------------------------------------------------------
// Estimation quality

namespace {

double norm2(const std::vector<double>& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

void check_estimates(const std::vector<std::vector<double>>& estimates, const std::vector<double>& truth) {
  if (estimates.empty()) throw UsageError("need at least one estimate");
  for (const auto& e : estimates)
    if (e.size() != truth.size()) throw UsageError("estimate and truth lengths differ");
}

}  // namespace

double smdape(const std::vector<std::vector<double>>& estimates, const std::vector<double>& truth) {
  check_estimates(estimates, truth);
  std::vector<double> v;
  const double nt = norm2(truth);
  for (const auto& e : estimates) {
    std::vector<double> diff(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) diff[i] = e[i] - truth[i];
    const double den = norm2(e) + nt;
    v.push_back(den > 0.0 ? norm2(diff) / den : 0.0);
  }
  return median(v);
}

double cos_alignment(const std::vector<std::vector<double>>& estimates, const std::vector<double>& truth) {
  check_estimates(estimates, truth);
  std::vector<double> v;
  const double nt = norm2(truth);
  for (const auto& e : estimates) {
    const double ne = norm2(e);
    if (ne == 0.0 || nt == 0.0) {
      v.push_back(ne == nt ? 1.0 : 0.0);
      continue;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) dot += e[i] * truth[i];
    v.push_back(dot / (ne * nt));
  }
  return median(v);
}

RecoveryReport run_recovery(const RecoveryConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.replicates < 1) throw UsageError("recovery: need at least one replicate");
  const ArchSpec spec = sim_spec(cfg.sim);
  Rng theta_rng = stream(cfg.sim.seed, kTheta);
  const ParamSet theta = simulate_params(spec, theta_rng);

  RecoveryReport rep;
  rep.truth = theta.effective_flat();
  std::vector<double> truth_xi;
  for (std::size_t k = 0; k < cfg.replicates; ++k) {
    SimConfig sc = cfg.sim;
    sc.seed = cfg.sim.seed + 1 + k;
    Rng cov_rng = stream(sc.seed, kCovariates);
    const CovariatePool pool{synthetic_covariates(sc, sc.n_s, cov_rng), PoolMode::Sequential};
    const SimDataset sim = simulate_dataset(sc, spec, theta, pool);
    if (k == 0) truth_xi = xi_statistic(theta, spec, sim.data.X, sim.data.z, sim.data.delta);

    const Split split = time_split(sim.data);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + 100 * k;
    const FitResult fr = fit(split.train, spec, tc);
    const auto xi = xi_statistic(fr.params, spec, split.test.X, split.test.z, split.test.delta);
    if (xi.empty()) throw DataError("recovery: no uncensored held-out mission in replicate " + std::to_string(k));
    rep.held_out_median_xi.push_back(median(xi));
    rep.estimates.push_back(fr.params.effective_flat());
    rep.max_violation_fraction =
        std::max(rep.max_violation_fraction, monotonicity_violations(fr.params, spec, sim.data.X).fraction());
  }
  rep.median_xi = median(rep.held_out_median_xi);
  rep.ks_p_truth = ks_uniform(truth_xi).p_value;
  rep.smdape = smdape(rep.estimates, rep.truth);
  rep.cos_alignment = cos_alignment(rep.estimates, rep.truth);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace wtnn
