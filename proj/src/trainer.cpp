#include "wtnn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "wtnn/errors.hpp"
#include "wtnn/metrics.hpp"

namespace wtnn {

using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw UsageError("lr0 must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw UsageError("plateau_factor must lie in (0, 1)");
  if (!(lr_floor >= 0.0)) throw UsageError("lr_floor must be non-negative");
  if (restarts < 1) throw UsageError("restarts must be at least 1");
  if (batch_size < 1) throw UsageError("batch_size must be at least 1");
  if (nan_patience < 1) throw UsageError("nan_patience must be at least 1");
  if (!(grad_clip >= 0.0)) throw UsageError("grad_clip must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw UsageError("Adam decay rates must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw UsageError("adam_eps must be positive");
  if (!(ipcw_w_max >= 1.0)) throw UsageError("ipcw_w_max must be at least 1");
  loss_weights.validate();
}

std::string TrainConfig::to_json() const {
  ordered_json j;
  j["lr0"] = lr0;
  j["plateau_factor"] = plateau_factor;
  j["plateau_patience"] = plateau_patience;
  j["lr_floor"] = lr_floor;
  j["max_epochs"] = max_epochs;
  j["batch_size"] = batch_size;
  j["restarts"] = restarts;
  j["seed"] = seed;
  j["grad_clip"] = grad_clip;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  j["nan_patience"] = nan_patience;
  j["ipcw_w_max"] = ipcw_w_max;
  j["loss_weights"] = {{"mono", loss_weights.mono},
                       {"orth", loss_weights.orth},
                       {"cov", loss_weights.cov},
                       {"mse", loss_weights.mse}};
  j["init"] = {{"weight_scale", init.weight_scale},
               {"bias_scale", init.bias_scale},
               {"effective_space", init.effective_space}};
  return j.dump(2);
}

namespace {

template <class T>
void read(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const ordered_json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& item : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; }))
      throw UsageError(where + ": unknown key '" + item.key() + "'");
  }
}

}  // namespace

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const auto j = ordered_json::parse(text);
    if (!j.is_object()) throw UsageError("train config: expected a JSON object");
    reject_unknown(j,
                   {"lr0", "plateau_factor", "plateau_patience", "lr_floor", "max_epochs", "batch_size", "restarts",
                    "seed", "grad_clip", "adam_beta1", "adam_beta2", "adam_eps", "nan_patience", "ipcw_w_max",
                    "loss_weights", "init"},
                   "train config");
    read(j, "lr0", c.lr0);
    read(j, "plateau_factor", c.plateau_factor);
    read(j, "plateau_patience", c.plateau_patience);
    read(j, "lr_floor", c.lr_floor);
    read(j, "max_epochs", c.max_epochs);
    read(j, "batch_size", c.batch_size);
    read(j, "restarts", c.restarts);
    read(j, "seed", c.seed);
    read(j, "grad_clip", c.grad_clip);
    read(j, "adam_beta1", c.adam_beta1);
    read(j, "adam_beta2", c.adam_beta2);
    read(j, "adam_eps", c.adam_eps);
    read(j, "nan_patience", c.nan_patience);
    read(j, "ipcw_w_max", c.ipcw_w_max);
    if (j.contains("loss_weights")) {
      const auto& lw = j.at("loss_weights");
      reject_unknown(lw, {"mono", "orth", "cov", "mse"}, "loss_weights");
      read(lw, "mono", c.loss_weights.mono);
      read(lw, "orth", c.loss_weights.orth);
      read(lw, "cov", c.loss_weights.cov);
      read(lw, "mse", c.loss_weights.mse);
    }
    if (j.contains("init")) {
      const auto& in = j.at("init");
      reject_unknown(in, {"weight_scale", "bias_scale", "effective_space"}, "init");
      read(in, "weight_scale", c.init.weight_scale);
      read(in, "bias_scale", c.init.bias_scale);
      read(in, "effective_space", c.init.effective_space);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Optimiser and scheduler

bool adam_step(AdamState& state, std::span<double> params, std::span<const double> grads, double lr,
               const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw UsageError("adam_step: parameter and gradient sizes differ");
  double norm2 = 0.0;
  for (double g : grads) {
    if (!std::isfinite(g)) return false;
    norm2 += g * g;
  }
  if (!std::isfinite(norm2)) return false;
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  const double scale = cfg.grad_clip > 0.0 && std::sqrt(norm2) > cfg.grad_clip ? cfg.grad_clip / std::sqrt(norm2) : 1.0;
  ++state.t;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * scale;
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.adam_eps);
  }
  return true;
}

PlateauScheduler::PlateauScheduler(double lr0, double factor, std::size_t patience, double floor)
    : lr_(lr0), factor_(factor), patience_(patience), floor_(floor), best_(std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::step(double value) {
  if (value < best_) {
    best_ = value;
    bad_ = 0;
  } else {
    ++bad_;
  }
  if (cooldown_ > 0) {
    --cooldown_;
    return false;
  }
  if (bad_ >= patience_ && lr_ > floor_) {
    lr_ = std::max(lr_ * factor_, floor_);
    bad_ = 0;
    cooldown_ = patience_;
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Training loop

double objective(const ParamSet& params, const ArchSpec& spec, const Batch& batch, const LossWeights& lw) {
  return evaluate_loss(params, spec, batch, lw).total;
}

namespace {

std::vector<double> gather_grads(const ad::Tape& tape, const BoundParams& bound) {
  std::vector<double> g;
  for (const ad::Var& v : bound.free) {
    const auto s = tape.grad(v);
    g.insert(g.end(), s.begin(), s.end());
  }
  return g;
}

constexpr double kBnMomentum = 0.1;

void update_running(ParamSet& p, const BatchStatsOut& stats) {
  for (std::size_t l = 0; l < stats.layers.size() && l < p.bn_running.size(); ++l) {
    auto& r = p.bn_running[l];
    for (std::size_t k = 0; k < r.mean.size(); ++k) {
      r.mean[k] = (1.0 - kBnMomentum) * r.mean[k] + kBnMomentum * stats.layers[l].mean[k];
      r.var[k] = (1.0 - kBnMomentum) * r.var[k] + kBnMomentum * stats.layers[l].var[k];
    }
  }
}

struct RestartOutcome {
  RestartReport report;
  ParamSet params;
};

RestartOutcome run_restart(std::size_t index, const Batch& full, const ArchSpec& spec, const TrainConfig& cfg) {
  RestartOutcome out;
  RestartReport& rep = out.report;
  rep.index = index;
  rep.seed = cfg.seed + index;
  Rng rng(rep.seed);
  out.params = init_params(spec, rng, cfg.init);
  ParamSet& p = out.params;

  rep.initial_objective = objective(p, spec, full, cfg.loss_weights);
  rep.final_objective = rep.initial_objective;
  if (!std::isfinite(rep.initial_objective)) {
    rep.aborted = true;
    rep.abort_reason = "non-finite objective at initialisation";
    return out;
  }

  PlateauScheduler sched(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience, cfg.lr_floor);
  sched.set_reference(rep.initial_objective);
  AdamState adam;
  std::vector<double> flat = p.flatten();
  std::vector<std::size_t> order(full.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool dropout = spec.dropout_rate > 0.0;
  std::size_t consecutive_bad = 0;
  ad::Tape tape;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, stop - start);
      const Batch mb = full.subset(rows);
      std::vector<DropoutMasks> masks;
      if (dropout)
        for (std::size_t i = 0; i < mb.size(); ++i) masks.push_back(sample_dropout_masks(spec, spec.dropout_rate, rng));

      tape.clear();
      LossContext ctx = build_context(tape, p, spec, mb, dropout ? &masks : nullptr, true);
      const LossTerms terms = total_loss(ctx, mb, cfg.loss_weights);
      rep.saturated_rows += terms.saturated;
      if (!std::isfinite(terms.total.scalar())) {
        ++rep.nonfinite_batches;
        if (++consecutive_bad >= cfg.nan_patience) {
          rep.aborted = true;
          rep.abort_reason = "non-finite loss on " + std::to_string(consecutive_bad) + " consecutive batches";
          return out;
        }
        continue;
      }
      consecutive_bad = 0;
      tape.backward(terms.total);
      const std::vector<double> grads = gather_grads(tape, ctx.bound);
      if (!adam_step(adam, flat, grads, sched.lr(), cfg)) {
        ++rep.skipped_steps;
        continue;
      }
      p.assign(flat);
      if (spec.use_batch_norm) update_running(p, ctx.bn_stats);
    }
    const double obj = objective(p, spec, full, cfg.loss_weights);
    if (!std::isfinite(obj)) {
      rep.aborted = true;
      rep.abort_reason = "non-finite full-train objective at epoch " + std::to_string(epoch);
      return out;
    }
    rep.objective_trace.push_back(obj);
    rep.final_objective = obj;
    if (sched.step(obj)) rep.lr_events.push_back({epoch, sched.lr()});
  }
  rep.final_nll = nll_sum(p, spec, full);
  if (!std::isfinite(rep.final_nll)) {
    rep.aborted = true;
    rep.abort_reason = "non-finite final likelihood";
  }
  return out;
}

ordered_json finite_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

}  // namespace

FitResult fit(const Dataset& train, const ArchSpec& spec, const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  spec.validate();
  train.validate();
  if (train.size() == 0) throw UsageError("fit: empty training set");
  if (train.X.cols != spec.d) throw UsageError("fit: covariate width differs from the architecture");

  IpcwOptions iopt;
  iopt.w_max = cfg.ipcw_w_max;
  const IpcwResult ipcw = ipcw_weights(train.z, train.delta, iopt);
  const Batch full = train.to_batch(ipcw.weights);

  FitResult result;
  result.report.ipcw_capped = ipcw.capped;
  bool have = false;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    RestartOutcome o = run_restart(r, full, spec, cfg);
    const bool better = !o.report.aborted && (!have || o.report.final_nll < result.report.final_nll);
    if (better) {
      have = true;
      result.params = o.params;
      result.report.chosen = r;
      result.report.final_nll = o.report.final_nll;
      result.report.final_objective = o.report.final_objective;
    }
    result.report.restarts.push_back(std::move(o.report));
  }
  result.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!have) {
    std::string why;
    for (const auto& r : result.report.restarts) why += "\n  restart " + std::to_string(r.index) + ": " + r.abort_reason;
    throw TrainingError("all restarts aborted:" + why);
  }
  return result;
}

std::string TrainReport::to_json() const {
  ordered_json j;
  j["chosen_restart"] = chosen;
  j["final_objective"] = finite_or_null(final_objective);
  j["final_nll"] = finite_or_null(final_nll);
  j["ipcw_capped"] = ipcw_capped;
  j["wall_seconds"] = wall_seconds;
  j["restarts"] = ordered_json::array();
  for (const auto& r : restarts) {
    ordered_json rj;
    rj["index"] = r.index;
    rj["seed"] = r.seed;
    rj["aborted"] = r.aborted;
    if (r.aborted) rj["abort_reason"] = r.abort_reason;
    rj["initial_objective"] = finite_or_null(r.initial_objective);
    rj["final_objective"] = finite_or_null(r.final_objective);
    rj["final_nll"] = finite_or_null(r.final_nll);
    rj["skipped_steps"] = r.skipped_steps;
    rj["nonfinite_batches"] = r.nonfinite_batches;
    rj["saturated_rows"] = r.saturated_rows;
    rj["lr_events"] = ordered_json::array();
    for (const auto& e : r.lr_events) rj["lr_events"].push_back({{"epoch", e.epoch}, {"lr", e.lr}});
    rj["objective_trace"] = ordered_json::array();
    for (double v : r.objective_trace) rj["objective_trace"].push_back(finite_or_null(v));
    j["restarts"].push_back(std::move(rj));
  }
  return j.dump(2);
}

}  // namespace wtnn
