#include "wtnn/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "wtnn/dataio.hpp"
#include "wtnn/errors.hpp"
#include "wtnn/metrics.hpp"
#include "wtnn/simulator.hpp"
#include "wtnn/trainer.hpp"

namespace wtnn {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("WTNN_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  std::uint64_t v = 0;
  const char* end = s + std::char_traits<char>::length(s);
  const auto r = std::from_chars(s, end, v);
  if (r.ec != std::errc() || r.ptr != end) throw UsageError("WTNN_SEED must be a non-negative integer");
  return v;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double x = 0.0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), x);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size() || !std::isfinite(x))
      throw UsageError("cannot parse '" + item + "' as a number");
    v.push_back(x);
  }
  if (v.empty()) throw UsageError("empty list");
  return v;
}

Dataset select(const Dataset& d, const std::string& subset) {
  if (subset == "all") return d;
  const Split s = time_split(d);
  const Dataset& out = subset == "train" ? s.train : s.test;
  if (out.size() == 0) throw DataError("the " + subset + " split is empty");
  return out;
}

void emit(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << content;
  } else {
    write_file_atomic(path, content);
  }
}

// ---------------------------------------------------------------------------

struct ArchArgs {
  double n = 0.0;
  std::size_t d = 0;
  double K = 128.0;
  double rho = 0.5;
  double tau = 0.5;
  double n_min = 500.0;
  std::size_t depth = 0;
};

int cmd_arch(const ArchArgs& a, std::ostream& out, std::ostream& err) {
  SizingInput in;
  in.n = a.n;
  in.d = a.d;
  in.K = a.K;
  in.rho = a.rho;
  in.tau = a.tau;
  in.n_min = a.n_min;
  if (a.depth > 0) in.depth_override = a.depth;
  const ArchReport r = build_arch(in);
  for (const auto& w : r.warnings) err << "warning: " << w << "\n";
  out << "L=" << r.spec.depth() << " widths=";
  for (std::size_t l = 0; l < r.spec.widths.size(); ++l) out << (l ? "," : "") << r.spec.widths[l];
  out << " p_n=" << r.p_n << "\n";
  return kExitOk;
}

struct SimArgs {
  std::string config;
  std::string out_dir;
  std::optional<std::size_t> d_a, d_n, n_s, L_s, vehicles;
  std::optional<double> delta, alpha;
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimArgs& a, std::ostream& out) {
  SimConfig c = a.config.empty() ? SimConfig{} : SimConfig::from_json(read_file(a.config));
  if (a.d_a) c.d_a = *a.d_a;
  if (a.d_n) c.d_n = *a.d_n;
  if (a.n_s) c.n_s = *a.n_s;
  if (a.L_s) c.L_s = *a.L_s;
  if (a.vehicles) c.N_s = *a.vehicles;
  if (a.delta) c.Delta = *a.delta;
  if (a.alpha) c.alpha_tilde = *a.alpha;
  if (a.seed) c.seed = *a.seed;
  if (const auto s = env_seed()) c.seed = *s;
  c.validate();

  const SimulationRun run = simulate(c);
  const Dataset& d = run.sim.data;
  std::ostringstream csv;
  csv << "vehicle_id,duration,event";
  for (std::size_t k = 0; k < c.d_n; ++k) csv << ",num" << (k + 1);
  if (c.d_a > c.d_n) csv << ",cat";
  csv << "\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    csv << d.vehicle[i] << "," << fmt("%.17g", d.z[i]) << "," << d.delta[i];
    for (std::size_t k = 0; k < c.d_n; ++k) csv << "," << fmt("%.17g", d.X(i, k));
    if (c.d_a > c.d_n) {
      std::size_t level = 0;
      for (std::size_t k = c.d_n; k < c.d_a; ++k)
        if (d.X(i, k) == 1.0) level = k - c.d_n;
      csv << ",c" << (level + 1);
    }
    csv << "\n";
  }

  DatasetSchema schema;
  schema.id_column = "vehicle_id";
  schema.duration_column = "duration";
  schema.event_column = "event";
  for (std::size_t k = 0; k < c.d_n; ++k)
    schema.covariates.push_back({"num" + std::to_string(k + 1), CovariateKind::OrdinalMonotone, Direction::SurvivalDecreasing});
  if (c.d_a > c.d_n) schema.covariates.push_back({"cat", CovariateKind::Nominal, Direction::SurvivalDecreasing});

  nlohmann::ordered_json truth;
  truth["name"] = c.name();
  truth["config"] = nlohmann::ordered_json::parse(c.to_json());
  truth["arch"] = nlohmann::ordered_json::parse(spec_to_json(run.spec));
  truth["theta"] = nlohmann::ordered_json::parse(params_to_json(run.theta));
  truth["theta_effective"] = run.theta.effective_flat();

  const fs::path dir = a.out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string());
  write_file_atomic(dir / "data.csv", csv.str());
  write_file_atomic(dir / "schema.json", schema.to_json() + "\n");
  write_file_atomic(dir / "truth.json", truth.dump(2) + "\n");
  out << c.name() << ": " << d.size() << " missions over " << c.vehicles() << " vehicles written to " << dir.string()
      << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data, schema, config, model, report;
  std::string subset = "train";
  std::string widths;
  std::size_t depth = 0;
  std::string head = "linear";
  double dropout = 0.0;
  bool batch_norm = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const DatasetSchema schema = DatasetSchema::from_json(read_file(a.schema));
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_file(a.config));
  if (const auto s = env_seed()) cfg.seed = *s;
  const LoadedData loaded = load_dataset(a.data, schema);
  const Dataset train = select(loaded.data, a.subset);

  ArchSpec spec;
  if (!a.widths.empty()) {
    for (double w : parse_list(a.widths)) {
      if (!(w >= 1.0) || w != std::floor(w)) throw UsageError("--widths must list positive integers");
      spec.widths.push_back(static_cast<std::size_t>(w));
    }
    spec.d = loaded.partition.d;
  } else {
    SizingInput in;
    in.n = static_cast<double>(train.size());
    in.d = loaded.partition.d;
    if (a.depth > 0) in.depth_override = a.depth;
    const ArchReport r = build_arch(in);
    for (const auto& w : r.warnings) err << "warning: " << w << "\n";
    spec = r.spec;
  }
  spec.partition = loaded.partition;
  if (a.head != "linear" && a.head != "mini_mlp") throw UsageError("--head must be linear or mini_mlp");
  spec.head_style = a.head == "linear" ? HeadStyle::Linear : HeadStyle::MiniMlp;
  spec.dropout_rate = a.dropout;
  spec.use_batch_norm = a.batch_norm;
  spec.validate();

  const FitResult fr = fit(train, spec, cfg);
  FittedModel m{spec, fr.params, schema, loaded.stats, {cfg.seed, fnv1a_hex(cfg.to_json()), fr.report.chosen}};
  save_model(m, a.model);
  if (!a.report.empty()) write_file_atomic(a.report, fr.report.to_json() + "\n");
  out << "trained on " << train.size() << " missions, chosen restart " << fr.report.chosen << ", final NLL "
      << fmt("%.6g", fr.report.final_nll) << "; model written to " << a.model << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string model, data, out;
  std::string subset = "test";
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const FittedModel m = load_model(a.model);
  const LoadedData loaded = load_dataset(a.data, m.schema, m.stats);
  const Dataset d = select(loaded.data, a.subset);
  const EvalReport rep = evaluate(m.params, m.spec, d.X, d.z, d.delta);
  for (const auto& w : rep.warnings) err << "warning: " << w << "\n";
  emit(a.out, rep.to_json() + "\n", out);
  return kExitOk;
}

struct PredictArgs {
  std::string model, data, times, out;
  std::size_t mcd = 0;
  std::optional<double> dropout;
  std::uint64_t seed = 0;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const FittedModel m = load_model(a.model);
  const LoadedData loaded = load_dataset(a.data, m.schema, m.stats);
  const std::vector<double> raw = parse_list(a.times);
  std::vector<double> grid;
  for (double t : raw) {
    if (!(t >= 0.0)) throw UsageError("--times must be non-negative");
    grid.push_back(t * m.stats.duration_factor);
  }
  const double rate = a.dropout.value_or(m.spec.dropout_rate);
  std::uint64_t seed = a.seed;
  if (const auto s = env_seed()) seed = *s;
  Rng rng(seed);
  const Dataset& d = loaded.data;

  std::ostringstream csv;
  csv << "record_id,t,survival_mean,survival_lo,survival_hi\n";
  const auto outputs = forward_batch(m.params, m.spec, d.X);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t id = loaded.source_rows[i] + 1;
    if (a.mcd > 0) {
      const McdBand band = mcd_predictive(m.params, m.spec, d.X.row(i), grid, a.mcd, rate, rng);
      for (std::size_t k = 0; k < grid.size(); ++k)
        csv << id << "," << fmt("%.10g", raw[k]) << "," << fmt("%.12g", band.mean[k]) << ","
            << fmt("%.12g", band.lower[k]) << "," << fmt("%.12g", band.upper[k]) << "\n";
    } else {
      const WeibullParams wp(outputs[i].eta, outputs[i].beta);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const std::string s = fmt("%.12g", survival(grid[k], wp));
        csv << id << "," << fmt("%.10g", raw[k]) << "," << s << "," << s << "," << s << "\n";
      }
    }
  }
  emit(a.out, csv.str(), out);
  return kExitOk;
}

struct RankArgs {
  std::string model, data, out;
  double horizon = 0.0;
};

int cmd_rank(const RankArgs& a, std::ostream& out) {
  if (!(a.horizon > 0.0)) throw UsageError("--horizon must be positive");
  const FittedModel m = load_model(a.model);
  const LoadedData loaded = load_dataset(a.data, m.schema, m.stats);
  const Dataset& d = loaded.data;
  const double t0 = a.horizon * m.stats.duration_factor;

  // Last mission of each vehicle, in order of first appearance.
  std::vector<std::string> ids = d.vehicles();
  std::map<std::string, std::size_t> last;
  for (std::size_t i = 0; i < d.size(); ++i) last[d.vehicle[i]] = i;
  struct Entry {
    std::string id;
    double s;
  };
  std::vector<Entry> entries;
  for (const auto& v : ids) {
    const auto o = forward(m.params, m.spec, d.X.row(last[v]));
    entries.push_back({v, survival(t0, WeibullParams(o.eta, o.beta))});
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) {
    return x.s != y.s ? x.s > y.s : x.id < y.id;
  });
  std::ostringstream csv;
  csv << "vehicle_id,survival_at_horizon,rank\n";
  for (std::size_t r = 0; r < entries.size(); ++r)
    csv << entries[r].id << "," << fmt("%.12g", entries[r].s) << "," << (r + 1) << "\n";
  emit(a.out, csv.str(), out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weibull-tailored neural network survival toolkit"};
  app.require_subcommand(1);

  ArchArgs arch;
  auto* c_arch = app.add_subcommand("arch", "Print the sized architecture for n records and d inputs");
  c_arch->add_option("--n", arch.n, "Number of records")->required();
  c_arch->add_option("--d", arch.d, "Input dimension")->required();
  c_arch->add_option("--K", arch.K, "Width constant");
  c_arch->add_option("--rho", arch.rho, "Width exponent");
  c_arch->add_option("--tau", arch.tau, "Depth exponent");
  c_arch->add_option("--n-min", arch.n_min, "Smallest admissible n");
  c_arch->add_option("--depth", arch.depth, "Depth override");

  SimArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate a dataset from a random ground-truth network");
  c_sim->add_option("--config", sim.config, "Simulation config JSON");
  c_sim->add_option("--out-dir", sim.out_dir, "Output directory")->required();
  c_sim->add_option("--d-a", sim.d_a, "Encoded covariate dimension");
  c_sim->add_option("--d-n", sim.d_n, "Numerical covariates");
  c_sim->add_option("--n-s", sim.n_s, "Missions");
  c_sim->add_option("--L-s", sim.L_s, "Hidden layers");
  c_sim->add_option("--vehicles", sim.vehicles, "Vehicle count");
  c_sim->add_option("--delta", sim.delta, "Censoring rate");
  c_sim->add_option("--alpha", sim.alpha, "Censoring quantile");
  c_sim->add_option("--seed", sim.seed, "Seed");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Fit a model to a dataset");
  c_train->add_option("--data", tr.data, "Dataset CSV")->required();
  c_train->add_option("--schema", tr.schema, "Schema JSON")->required();
  c_train->add_option("--config", tr.config, "Training config JSON");
  c_train->add_option("--model", tr.model, "Output model JSON")->required();
  c_train->add_option("--report", tr.report, "Output training report JSON");
  c_train->add_option("--subset", tr.subset, "Rows to fit: train (all but each vehicle's last mission) or all")
      ->check(CLI::IsMember({"train", "all"}));
  c_train->add_option("--widths", tr.widths, "Hidden widths, comma separated (skips the sizing rule)");
  c_train->add_option("--depth", tr.depth, "Depth override for the sizing rule");
  c_train->add_option("--head", tr.head, "Output heads: linear or mini_mlp");
  c_train->add_option("--dropout", tr.dropout, "Training dropout rate");
  c_train->add_flag("--batch-norm", tr.batch_norm, "Batch normalisation in hidden layers");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Discrimination and calibration report");
  c_eval->add_option("--model", ev.model, "Model JSON")->required();
  c_eval->add_option("--data", ev.data, "Dataset CSV")->required();
  c_eval->add_option("--subset", ev.subset, "Rows to score: test (each vehicle's last mission), train or all")
      ->check(CLI::IsMember({"test", "train", "all"}));
  c_eval->add_option("--out", ev.out, "Output file (default stdout)");

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "Survival curves per record");
  c_pred->add_option("--model", pr.model, "Model JSON")->required();
  c_pred->add_option("--data", pr.data, "Dataset CSV")->required();
  c_pred->add_option("--times", pr.times, "Time grid in data units, comma separated")->required();
  c_pred->add_option("--mcd", pr.mcd, "Monte Carlo dropout replicates (0 disables)");
  c_pred->add_option("--dropout", pr.dropout, "Dropout rate for Monte Carlo dropout");
  c_pred->add_option("--seed", pr.seed, "Seed for Monte Carlo dropout");
  c_pred->add_option("--out", pr.out, "Output file (default stdout)");

  RankArgs rk;
  auto* c_rank = app.add_subcommand("rank", "Order vehicles by predicted survival at a horizon");
  c_rank->add_option("--model", rk.model, "Model JSON")->required();
  c_rank->add_option("--data", rk.data, "Dataset CSV")->required();
  c_rank->add_option("--horizon", rk.horizon, "Horizon in data units")->required();
  c_rank->add_option("--out", rk.out, "Output file (default stdout)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("wtnn");

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (*c_arch) return cmd_arch(arch, out, err);
    if (*c_sim) return cmd_simulate(sim, out);
    if (*c_train) return cmd_train(tr, out, err);
    if (*c_eval) return cmd_evaluate(ev, out, err);
    if (*c_pred) return cmd_predict(pr, out);
    if (*c_rank) return cmd_rank(rk, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const SizingError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const UndefinedMetricError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace wtnn
