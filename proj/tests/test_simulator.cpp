#include <doctest.h>

#include <cmath>
#include <numeric>

#include "wtnn/errors.hpp"
#include "wtnn/metrics.hpp"
#include "wtnn/simulator.hpp"

using namespace wtnn;

TEST_CASE("configuration naming and vehicle count") {
  SimConfig c;
  CHECK(c.name() == "SIM-5-2-2000-3-0.05");
  CHECK(c.vehicles() == 105);
  c.N_s = 7;
  CHECK(c.vehicles() == 7);
  CHECK(SimConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(SimConfig::from_json(R"({"Delta": 1.0})"), UsageError);
  CHECK_THROWS_AS(SimConfig::from_json(R"({"d_n": 9})"), UsageError);
  CHECK_THROWS_AS(SimConfig::from_json(R"({"bogus": 1})"), UsageError);
  const ArchSpec spec = sim_spec(SimConfig{});
  CHECK(spec.widths == std::vector<std::size_t>{11, 6, 3});
  CHECK(spec.partition.oa == std::vector<std::size_t>{0, 1});
  CHECK(spec.partition.nom == std::vector<std::size_t>{2, 3, 4});
}

TEST_CASE("truncated normal parameter draws") {
  // Independent check of the moment formula by quadrature of x phi(x) on (0, inf).
  double num = 0.0;
  double den = 0.0;
  const double h = 1e-5;
  for (double x = h / 2; x < 2.0; x += h) {
    const double dens = std::exp(-0.5 * std::pow((x - 0.1) / 0.1, 2));
    num += x * dens;
    den += dens;
  }
  const double mu = truncated_normal_mean(0.1, 0.1);
  CHECK(mu == doctest::Approx(num / den).epsilon(1e-9));
  CHECK(mu == doctest::Approx(0.12876).epsilon(1e-4));

  ArchSpec spec = sim_spec(SimConfig{});
  std::vector<double> w;
  std::vector<double> b;
  Rng rng(3);
  while (w.size() < 10000) {
    const ParamSet p = simulate_params(spec, rng);
    for (const auto& t : p.tensors)
      for (std::size_t i = 0; i < t.size(); ++i) (t.kind == TensorKind::Bias ? b : w).push_back(t.effective(i));
  }
  auto mean_sd = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, std::sqrt(s / static_cast<double>(v.size() - 1))};
  };
  for (double x : w) CHECK(x > 0.0);
  const auto [wm, ws] = mean_sd(w);
  CHECK(std::abs(wm - mu) < 3.0 * ws / std::sqrt(static_cast<double>(w.size())));
  const auto [bm, bs] = mean_sd(b);
  CHECK(std::abs(bm - 10.0) < 3.0 * bs / std::sqrt(static_cast<double>(b.size())));
  CHECK(bs == doctest::Approx(5.0).epsilon(0.05));

  Rng r1(9);
  Rng r2(9);
  CHECK(simulate_params(spec, r1).flatten() == simulate_params(spec, r2).flatten());
}

TEST_CASE("mission allocation") {
  Rng rng(1);
  CHECK(allocate_missions(50, 1, rng) == std::vector<std::size_t>{50});
  const auto c = allocate_missions(10000, 10, rng);
  CHECK(std::accumulate(c.begin(), c.end(), std::size_t{0}) == 10000);
  const double bound = 3.0 * std::sqrt(10000 * 0.1 * 0.9);
  for (auto k : c) CHECK(std::abs(static_cast<double>(k) - 1000.0) < bound);
  for (int r = 0; r < 20; ++r) {
    const auto x = allocate_missions(137, 9, rng);
    CHECK(std::accumulate(x.begin(), x.end(), std::size_t{0}) == 137);
  }
  CHECK_THROWS_AS(allocate_missions(10, 0, rng), UsageError);
}

TEST_CASE("synthetic covariates") {
  SimConfig c;
  Rng rng(2);
  const Matrix X = synthetic_covariates(c, 3000, rng);
  for (std::size_t k = 0; k < 2; ++k) {
    double m = 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < X.rows; ++i) m += X(i, k);
    m /= 3000.0;
    for (std::size_t i = 0; i < X.rows; ++i) s += (X(i, k) - m) * (X(i, k) - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(s / 3000.0 == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < X.rows; ++i) CHECK(X(i, 2) + X(i, 3) + X(i, 4) == 1.0);
}

TEST_CASE("simulated durations follow the generating model") {
  SimConfig c;
  c.n_s = 10000;
  c.seed = 11;
  const SimulationRun run = simulate(c);
  const auto& d = run.sim.data;
  REQUIRE(d.size() == 10000);
  std::size_t censored = 0;
  std::vector<double> u;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const WeibullParams wp(run.sim.eta[i], run.sim.beta[i]);
    if (d.delta[i] == 0) {
      ++censored;
      CHECK(d.z[i] == quantile(c.alpha_tilde, wp));
    } else {
      u.push_back(1.0 - std::exp(-std::pow(d.z[i] / wp.eta, wp.beta)));
    }
  }
  const double frac = static_cast<double>(censored) / 10000.0;
  CHECK(std::abs(frac - 0.05) < 3.0 * std::sqrt(0.05 * 0.95 / 10000.0));
  // (t / eta)^beta ~ Exp(1), i.e. 1 - exp(-.) ~ U(0, 1).
  CHECK(ks_uniform(u).p_value > 0.01);
  std::vector<double> all;
  for (std::size_t i = 0; i < d.size(); ++i)
    all.push_back(1.0 - std::exp(-std::pow(run.sim.t_uncensored[i] / run.sim.eta[i], run.sim.beta[i])));
  CHECK(ks_uniform(all).p_value > 0.01);

  // Determinism and vehicle bookkeeping.
  const SimulationRun again = simulate(c);
  CHECK(again.sim.data.z == d.z);
  CHECK(again.sim.data.X.data == d.X.data);
  CHECK(d.vehicles().size() == c.vehicles());
}

TEST_CASE("censoring edge cases") {
  SimConfig c;
  c.n_s = 600;
  c.Delta = 0.0;
  const SimulationRun run = simulate(c);
  for (int v : run.sim.data.delta) CHECK(v == 1);

  // Unit Weibull: censoring value -ln(0.1).
  CHECK(quantile(0.9, WeibullParams(1.0, 1.0)) == doctest::Approx(2.302585092994046).epsilon(1e-14));

  const ArchSpec spec = sim_spec(c);
  CovariatePool small{Matrix(10, spec.d), PoolMode::Sequential};
  CHECK_THROWS_AS(simulate_dataset(c, spec, run.theta, small), DataError);
  small.mode = PoolMode::Bootstrap;
  CHECK(simulate_dataset(c, spec, run.theta, small).data.size() == 600);
}

TEST_CASE("recovery statistics") {
  const std::vector<double> th{1.0, -2.0, 0.5};
  const std::vector<double> twice{2.0, -4.0, 1.0};
  const std::vector<double> neg{-1.0, 2.0, -0.5};
  const std::vector<double> zero{0.0, 0.0, 0.0};
  CHECK(smdape({th}, th) == 0.0);
  CHECK(smdape({twice}, th) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(smdape({zero}, zero) == 0.0);
  CHECK(smdape({th}, twice) == smdape({twice}, th));
  CHECK(cos_alignment({th}, th) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(cos_alignment({neg}, th) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(cos_alignment({{2.0, 1.0, 0.0}}, {1.0, -2.0, 7.0}) == 0.0);
  CHECK(cos_alignment({zero}, zero) == 1.0);
  CHECK(cos_alignment({zero}, th) == 0.0);
  CHECK(cos_alignment({twice}, th) == cos_alignment({th}, th));
  // Median over replicates.
  CHECK(smdape({th, twice, th}, th) == 0.0);
  CHECK_THROWS_AS(smdape({}, th), UsageError);
  CHECK_THROWS_AS(smdape({{1.0}}, th), UsageError);
}
