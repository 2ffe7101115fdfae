#include "wtnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "wtnn/errors.hpp"

namespace wtnn {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw UsageError(std::string(what) + ": input lengths differ");
}

std::vector<std::size_t> order_by(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Number of inserted ranks < i.
  [[nodiscard]] std::uint64_t prefix(std::size_t i) const {
    std::uint64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::uint64_t> tree_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Kaplan-Meier and censoring weights

double KMEstimate::at(double t) const {
  const auto it = std::upper_bound(event_times.begin(), event_times.end(), t);
  if (it == event_times.begin()) return 1.0;
  return survival_values[static_cast<std::size_t>(it - event_times.begin()) - 1];
}

double KMEstimate::before(double t) const {
  const auto it = std::lower_bound(event_times.begin(), event_times.end(), t);
  if (it == event_times.begin()) return 1.0;
  return survival_values[static_cast<std::size_t>(it - event_times.begin()) - 1];
}

KMEstimate kaplan_meier(std::span<const double> times, std::span<const int> events) {
  check_lengths(times.size(), events.size(), "kaplan_meier");
  if (times.empty()) throw UsageError("kaplan_meier: empty input");
  for (double t : times)
    if (!(t > 0.0) || !std::isfinite(t)) throw DataError("kaplan_meier: times must be positive and finite");
  const auto idx = order_by(times);
  KMEstimate km;
  double s = 1.0;
  const std::size_t n = times.size();
  std::size_t i = 0;
  while (i < n) {
    const double t = times[idx[i]];
    std::size_t j = i;
    std::size_t d = 0;
    while (j < n && times[idx[j]] == t) {
      if (events[idx[j]] == 1) ++d;
      ++j;
    }
    if (d > 0) {
      const std::size_t at_risk = n - i;
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
      km.event_times.push_back(t);
      km.survival_values.push_back(s);
      km.at_risk.push_back(at_risk);
      km.events.push_back(d);
    }
    i = j;
  }
  return km;
}

namespace {

std::vector<int> flip(std::span<const int> events) {
  std::vector<int> c(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) c[i] = events[i] == 1 ? 0 : 1;
  return c;
}

}  // namespace

CensoringWeights::CensoringWeights(std::span<const double> times, std::span<const int> events, double w_max_)
    : km(kaplan_meier(times, flip(events))), w_max(w_max_) {
  if (!(w_max >= 1.0)) throw UsageError("w_max must be at least 1");
}

namespace {

double capped_inverse(double g, double w_max, std::size_t& capped) {
  if (!(g > 0.0) || 1.0 / g > w_max) {
    ++capped;
    return w_max;
  }
  return 1.0 / g;
}

}  // namespace

double CensoringWeights::inverse_before(double t) const { return capped_inverse(km.before(t), w_max, capped); }
double CensoringWeights::inverse_at(double t) const { return capped_inverse(km.at(t), w_max, capped); }

IpcwResult ipcw_weights(std::span<const double> times, std::span<const int> events, const IpcwOptions& opt) {
  const CensoringWeights g(times, events, opt.w_max);
  IpcwResult r;
  r.weights.assign(times.size(), 0.0);
  double total = 0.0;
  std::size_t n_events = 0;
  if (opt.km_jump) {
    const KMEstimate km = kaplan_meier(times, events);
    const double n = static_cast<double>(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (events[i] != 1) continue;
      const auto it = std::lower_bound(km.event_times.begin(), km.event_times.end(), times[i]);
      const auto k = static_cast<std::size_t>(it - km.event_times.begin());
      const double jump = (km.before(times[i]) - km.at(times[i])) / km.events[k];
      double w = n * jump;
      if (!(w <= opt.w_max)) {
        w = opt.w_max;
        ++r.capped;
      }
      r.weights[i] = w;
      total += w;
      ++n_events;
    }
  } else {
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (events[i] != 1) continue;
      r.weights[i] = opt.left_limit ? g.inverse_before(times[i]) : g.inverse_at(times[i]);
      total += r.weights[i];
      ++n_events;
    }
    r.capped = g.capped;
  }
  if (opt.renormalize && n_events > 0) {
    const double scale = static_cast<double>(n_events) / total;
    for (double& w : r.weights) w *= scale;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Discrimination and calibration scores

double c_index(std::span<const double> scores, std::span<const double> times, std::span<const int> events) {
  check_lengths(scores.size(), times.size(), "c_index");
  check_lengths(events.size(), times.size(), "c_index");
  const std::size_t n = scores.size();
  for (double s : scores)
    if (!std::isfinite(s)) throw DataError("c_index: non-finite score");

  // Dense ranks of the scores.
  const auto by_score = order_by(scores);
  std::vector<std::size_t> rank(n);
  std::size_t r = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0 && scores[by_score[k]] != scores[by_score[k - 1]]) ++r;
    rank[by_score[k]] = r;
  }

  // Sweep from the longest duration down; the tree holds strictly longer ones.
  auto by_time = order_by(times);
  std::reverse(by_time.begin(), by_time.end());
  Fenwick tree(r + 1);
  std::uint64_t inserted = 0;
  std::uint64_t pairs = 0;
  std::uint64_t twice_concordant = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && times[by_time[j]] == times[by_time[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) {
      const std::size_t a = by_time[k];
      if (events[a] != 1) continue;
      const std::uint64_t below = tree.prefix(rank[a]);
      const std::uint64_t tied = tree.prefix(rank[a] + 1) - below;
      pairs += inserted;
      twice_concordant += 2 * below + tied;
    }
    for (std::size_t k = i; k < j; ++k) {
      tree.add(rank[by_time[k]]);
      ++inserted;
    }
    i = j;
  }
  if (pairs == 0) throw UndefinedMetricError("c_index: no comparable pairs");
  return static_cast<double>(twice_concordant) / (2.0 * static_cast<double>(pairs));
}

double brier(double t, std::span<const double> surv_at_t, std::span<const double> times, std::span<const int> events,
             const CensoringWeights& g) {
  check_lengths(surv_at_t.size(), times.size(), "brier");
  check_lengths(events.size(), times.size(), "brier");
  if (times.empty()) throw UsageError("brier: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double s = surv_at_t[i];
    if (!(s >= 0.0 && s <= 1.0)) throw DataError("brier: predicted survival outside [0, 1]");
    if (times[i] <= t) {
      if (events[i] == 1) acc += g.inverse_before(times[i]) * s * s;
    } else {
      acc += g.inverse_at(t) * (1.0 - s) * (1.0 - s);
    }
  }
  return acc / static_cast<double>(times.size());
}

double brier(double t, std::span<const double> surv_at_t, std::span<const double> times, std::span<const int> events,
             double w_max) {
  const CensoringWeights g(times, events, w_max);
  return brier(t, surv_at_t, times, events, g);
}

double ibs(const SurvivalFn& pred, std::span<const double> times, std::span<const int> events, double t_max,
           std::size_t grid_size, double w_max) {
  if (!(t_max > 0.0) || !std::isfinite(t_max)) throw UsageError("ibs: t_max must be positive");
  if (grid_size < 2) throw UsageError("ibs: grid needs at least two points");
  const CensoringWeights g(times, events, w_max);
  std::vector<double> s(times.size());
  std::vector<double> values(grid_size);
  for (std::size_t k = 0; k < grid_size; ++k) {
    const double t = t_max * static_cast<double>(k) / static_cast<double>(grid_size - 1);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = pred(i, t);
    values[k] = brier(t, s, times, events, g);
  }
  const double h = t_max / static_cast<double>(grid_size - 1);
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < grid_size; ++k) integral += 0.5 * h * (values[k] + values[k + 1]);
  return integral / t_max;
}

double td_auc(double t, std::span<const double> scores, std::span<const double> times, std::span<const int> events,
              double w_max) {
  check_lengths(scores.size(), times.size(), "td_auc");
  check_lengths(events.size(), times.size(), "td_auc");
  const CensoringWeights g(times, events, w_max);
  std::vector<double> controls;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (times[i] > t) controls.push_back(scores[i]);
  std::sort(controls.begin(), controls.end());
  double num = 0.0;
  double den = 0.0;
  std::size_t n_cases = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] < t && events[i] == 1)) continue;
    ++n_cases;
    const double w = g.inverse_before(times[i]);
    const auto lo = std::lower_bound(controls.begin(), controls.end(), scores[i]);
    const auto hi = std::upper_bound(lo, controls.end(), scores[i]);
    num += w * (static_cast<double>(lo - controls.begin()) + 0.5 * static_cast<double>(hi - lo));
    den += w * static_cast<double>(controls.size());
  }
  if (n_cases == 0 || controls.empty()) throw UndefinedMetricError("td_auc: no case or no control at this time");
  return num / den;
}

// ---------------------------------------------------------------------------
// Summaries and uniformity

double quantile_type7(std::vector<double> values, double p) {
  if (values.empty()) throw UsageError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw UsageError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile_type7(std::move(values), 0.5); }

namespace {

// Asymptotic Kolmogorov tail Q(lambda) = 2 sum (-1)^(j-1) exp(-2 j^2 lambda^2).
double kolmogorov_tail(double lambda) {
  if (lambda < 0.2) return 1.0;
  const double a2 = -2.0 * lambda * lambda;
  double sum = 0.0;
  double sign = 2.0;
  double previous = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = sign * std::exp(a2 * j * j);
    sum += term;
    if (std::abs(term) <= 1e-10 * previous || std::abs(term) <= 1e-16 * std::abs(sum)) return std::clamp(sum, 0.0, 1.0);
    sign = -sign;
    previous = std::abs(term);
  }
  return 1.0;
}

}  // namespace

KsResult ks_uniform(std::vector<double> values) {
  if (values.empty()) throw UsageError("ks_uniform: empty sample");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double u = std::clamp(values[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - u, u - static_cast<double>(i) / n});
  }
  const double sn = std::sqrt(n);
  return {d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d)};
}

// ---------------------------------------------------------------------------
// Model-based statistics

std::vector<double> risk_scores(const ParamSet& params, const ArchSpec& spec, const Matrix& X) {
  const auto out = forward_batch(params, spec, X);
  std::vector<double> s(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) s[i] = -mean(WeibullParams(out[i].eta, out[i].beta));
  return s;
}

std::vector<double> xi_statistic(const ParamSet& params, const ArchSpec& spec, const Matrix& X,
                                 std::span<const double> z, std::span<const int> delta) {
  check_lengths(X.rows, z.size(), "xi_statistic");
  check_lengths(delta.size(), z.size(), "xi_statistic");
  const auto out = forward_batch(params, spec, X);
  std::vector<double> xi;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (delta[i] == 1) xi.push_back(cdf(z[i], WeibullParams(out[i].eta, out[i].beta)));
  return xi;
}

namespace {

// M dropout-perturbed outputs for one input row, on a fresh tape.
std::vector<WeibullParams> mcd_replicates(const ParamSet& params, const ArchSpec& spec, std::span<const double> x,
                                          std::size_t M, double rate, Rng& rng) {
  if (M < 1) throw UsageError("Monte Carlo dropout needs at least one replicate");
  if (x.size() != spec.d) throw UsageError("input width differs from the architecture");
  ad::Tape tape;
  const BoundParams bound = bind_params(tape, params, spec);
  const ad::Var xv = tape.constant(x);
  std::vector<WeibullParams> reps;
  reps.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    const DropoutMasks masks = sample_dropout_masks(spec, rate, rng);
    const RowGraph g = forward_graph(tape, bound, spec, xv, &masks);
    reps.emplace_back(g.eta.scalar(), g.beta.scalar());
  }
  return reps;
}

}  // namespace

std::vector<double> xi_mcd(const ParamSet& params, const ArchSpec& spec, const Matrix& X, std::span<const double> z,
                           std::span<const int> delta, std::size_t M, double dropout_rate, Rng& rng) {
  check_lengths(X.rows, z.size(), "xi_mcd");
  check_lengths(delta.size(), z.size(), "xi_mcd");
  std::vector<double> xi;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (delta[i] != 1) continue;
    const auto reps = mcd_replicates(params, spec, X.row(i), M, dropout_rate, rng);
    // Incremental mean: identical replicates reproduce the single value exactly.
    double avg = 0.0;
    for (std::size_t m = 0; m < reps.size(); ++m) avg += (cdf(z[i], reps[m]) - avg) / static_cast<double>(m + 1);
    xi.push_back(avg);
  }
  return xi;
}

McdBand mcd_predictive(const ParamSet& params, const ArchSpec& spec, std::span<const double> x,
                       std::span<const double> time_grid, std::size_t M, double dropout_rate, Rng& rng) {
  const auto reps = mcd_replicates(params, spec, x, M, dropout_rate, rng);
  McdBand band;
  band.times.assign(time_grid.begin(), time_grid.end());
  std::vector<double> curve(M);
  for (double t : time_grid) {
    double mu = 0.0;
    double m2 = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      curve[m] = survival(t, reps[m]);
      const double delta = curve[m] - mu;
      mu += delta / static_cast<double>(m + 1);
      m2 += delta * (curve[m] - mu);
    }
    band.mean.push_back(mu);
    band.variance.push_back(m2 / static_cast<double>(M));
    band.lower.push_back(quantile_type7(curve, 0.025));
    band.upper.push_back(quantile_type7(curve, 0.975));
  }
  return band;
}

// ---------------------------------------------------------------------------
// Report

std::string EvalReport::to_json() const {
  using nlohmann::ordered_json;
  auto num = [](double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); };
  ordered_json j;
  j["c_index"] = num(c_index);
  j["ibs"] = num(ibs);
  j["auc_grid"] = ordered_json::array();
  for (const auto& p : auc_grid) j["auc_grid"].push_back({{"t", num(p.t)}, {"auc", num(p.auc)}});
  j["auc_mean"] = num(auc_mean);
  j["xi_summary"] = {{"median", num(xi_median)}, {"q05", num(xi_q05)}, {"q95", num(xi_q95)}, {"ks_p", num(ks_p)}};
  j["n"] = n;
  j["n_events"] = n_events;
  return j.dump(2);
}

EvalReport evaluate(const ParamSet& params, const ArchSpec& spec, const Matrix& X, std::span<const double> z,
                    std::span<const int> delta, const EvalOptions& opt) {
  check_lengths(X.rows, z.size(), "evaluate");
  check_lengths(delta.size(), z.size(), "evaluate");
  if (z.empty()) throw UsageError("evaluate: no records");
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  EvalReport rep;
  rep.n = z.size();
  const auto out = forward_batch(params, spec, X);
  std::vector<WeibullParams> wp;
  std::vector<double> scores;
  for (const auto& o : out) {
    wp.emplace_back(o.eta, o.beta);
    scores.push_back(-mean(wp.back()));
  }
  double t_last_event = 0.0;
  std::vector<double> xi;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (delta[i] != 1) continue;
    ++rep.n_events;
    t_last_event = std::max(t_last_event, z[i]);
    xi.push_back(cdf(z[i], wp[i]));
  }

  try {
    rep.c_index = c_index(scores, z, delta);
  } catch (const UndefinedMetricError& e) {
    rep.c_index = kNaN;
    rep.warnings.emplace_back(e.what());
  }

  const double t_max = opt.t_max > 0.0 ? opt.t_max : t_last_event;
  if (t_max > 0.0) {
    rep.ibs = ibs([&](std::size_t i, double t) { return survival(t, wp[i]); }, z, delta, t_max, opt.ibs_grid,
                  opt.w_max);
  } else {
    rep.ibs = kNaN;
    rep.warnings.emplace_back("ibs: no uncensored record");
  }

  std::vector<double> zs(z.begin(), z.end());
  double auc_sum = 0.0;
  for (std::size_t k = 0; k < opt.auc_points; ++k) {
    const double t = quantile_type7(zs, static_cast<double>(k + 1) / static_cast<double>(opt.auc_points + 1));
    try {
      const double a = td_auc(t, scores, z, delta, opt.w_max);
      rep.auc_grid.push_back({t, a});
      auc_sum += a;
    } catch (const UndefinedMetricError&) {
      rep.warnings.emplace_back("td_auc undefined at t = " + std::to_string(t));
    }
  }
  rep.auc_mean = rep.auc_grid.empty() ? kNaN : auc_sum / static_cast<double>(rep.auc_grid.size());

  if (xi.empty()) {
    rep.xi_median = rep.xi_q05 = rep.xi_q95 = rep.ks_p = kNaN;
  } else {
    rep.xi_median = quantile_type7(xi, 0.5);
    rep.xi_q05 = quantile_type7(xi, 0.05);
    rep.xi_q95 = quantile_type7(xi, 0.95);
    rep.ks_p = ks_uniform(xi).p_value;
  }
  return rep;
}

}  // namespace wtnn
