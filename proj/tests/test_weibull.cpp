#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "wtnn/errors.hpp"
#include "wtnn/weibull.hpp"

using namespace wtnn;

namespace {

// Golden-section minimisation of gamma_fn on (1, 2): independent of the root
// finder used by beta0().
double golden_section_gamma_min() {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 1.0;
  double b = 2.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  while (b - a > 1e-12) {
    if (gamma_fn(c) < gamma_fn(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - invphi * (b - a);
    d = a + invphi * (b - a);
  }
  return 0.5 * (a + b);
}

double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2 == 1) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("gamma function values") {
  CHECK(gamma_fn(5.0) == doctest::Approx(24.0).epsilon(1e-13));
  CHECK(gamma_fn(1.0) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(gamma_fn(0.5) == doctest::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-13));
  CHECK_THROWS_AS(gamma_fn(0.0), DomainError);
  CHECK_THROWS_AS(gamma_fn(-1.0), DomainError);
  CHECK_THROWS_AS(gamma_fn(std::nan("")), DomainError);
}

TEST_CASE("gamma recurrence on random arguments") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.1, 20.0);
  for (int i = 0; i < 500; ++i) {
    const double x = u(rng);
    CHECK(std::abs(gamma_fn(x + 1.0) - x * gamma_fn(x)) / (x * gamma_fn(x)) < 1e-10);
  }
}

TEST_CASE("beta0 matches golden-section minimiser") {
  const auto& c = beta0();
  const double xi = golden_section_gamma_min();
  // A flat minimum limits golden section to roughly sqrt(machine epsilon).
  CHECK(std::abs(c.xi - xi) < 1e-7);
  CHECK(std::abs(c.xi - 1.4616321449683623) < 1e-12);
  CHECK(std::abs(c.xi - 1.46163211) < 5e-8);
  CHECK(c.beta0 == doctest::Approx(1.0 / (xi - 1.0)).epsilon(1e-6));
  CHECK(c.beta0 == doctest::Approx(2.16623).epsilon(1e-5));
  CHECK(c.xi > 1.0);
  CHECK(c.xi < 2.0);
  CHECK(c.beta0 > 2.0);
  CHECK(beta0_approximate().beta0 == 2.0);
  CHECK(beta0_approximate().xi == 1.5);
}

TEST_CASE("survival and cdf") {
  const WeibullParams p(3.0, 1.7);
  CHECK(survival(0.0, p) == 1.0);
  CHECK(std::abs(survival(3.0, p) - std::exp(-1.0)) < 1e-12);
  CHECK(std::abs(cdf(3.0, p) - (1.0 - std::exp(-1.0))) < 1e-12);
  CHECK(cdf(3.0, p) == doctest::Approx(0.63212).epsilon(1e-5));
  CHECK(survival(2.0, WeibullParams(2.0, 2.0)) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK_THROWS_AS(survival(-1.0, p), DomainError);
  double prev = 1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double s = survival(0.05 * i, p);
    CHECK(s <= prev);
    prev = s;
  }
  CHECK(survival(1e4, p) < 1e-300);
}

TEST_CASE("params validate") {
  CHECK_THROWS_AS(WeibullParams(0.0, 1.0), DomainError);
  CHECK_THROWS_AS(WeibullParams(1.0, -1.0), DomainError);
  CHECK_THROWS_AS(WeibullParams(INFINITY, 1.0), DomainError);
}

TEST_CASE("quantile") {
  CHECK(quantile(0.0, WeibullParams(2.0, 3.0)) == 0.0);
  CHECK(quantile(0.9, WeibullParams(1.0, 1.0)) == doctest::Approx(-std::log(0.1)).epsilon(1e-14));
  CHECK(quantile(1.0 - std::exp(-1.0), WeibullParams(4.5, 2.5)) == doctest::Approx(4.5).epsilon(1e-13));
  CHECK_THROWS_AS(quantile(1.0, WeibullParams(1.0, 1.0)), DomainError);
  CHECK_THROWS_AS(quantile(-0.1, WeibullParams(1.0, 1.0)), DomainError);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> up(0.001, 0.999);
  std::uniform_real_distribution<double> ue(0.1, 50.0);
  std::uniform_real_distribution<double> ub(0.3, 8.0);
  for (int i = 0; i < 1000; ++i) {
    const WeibullParams p(ue(rng), ub(rng));
    const double prob = up(rng);
    CHECK(std::abs(cdf(quantile(prob, p), p) - prob) < 1e-10);
    CHECK(std::abs(survival(quantile(prob, p), p) - (1.0 - prob)) < 1e-12);
    const double t = quantile(prob, p);
    CHECK(std::abs(quantile(cdf(t, p), p) - t) / t < 1e-10);
  }
}

TEST_CASE("mean") {
  CHECK(mean(WeibullParams(3.0, 1.0)) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(std::abs(mean(WeibullParams(1.0, 2.0)) - std::sqrt(std::numbers::pi) / 2.0) < 1e-10);
  CHECK(std::abs(mean(WeibullParams(7.0, 2.0)) - 7.0 * std::sqrt(std::numbers::pi) / 2.0) < 1e-10);
}

TEST_CASE("sampling") {
  const WeibullParams p(1.0, 2.0);
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) CHECK(sample(a, p) == sample(b, p));

  Rng rng(3);
  const int n = 100000;
  double s = 0.0;
  double s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = sample(rng, p);
    CHECK(t > 0.0);
    s += t;
    s2 += t * t;
  }
  const double m = s / n;
  const double var = s2 / n - m * m;
  CHECK(std::abs(m - 0.886227) < 3.0 * std::sqrt(var / n));
}

TEST_CASE("censored nll") {
  CHECK(censored_nll(1.0, 1, WeibullParams(1.0, 1.0)).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(censored_nll(0.5, 0, WeibullParams(1.0, 2.0)).value == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(censored_nll(2.0, 1, WeibullParams(2.0, 2.0)).value == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(censored_nll(0.0, 1, WeibullParams(1.0, 1.0)), DomainError);
  CHECK_THROWS_AS(censored_nll(1.0, 2, WeibullParams(1.0, 1.0)), DomainError);

  const auto sat = censored_nll(1e6, 0, WeibullParams(1.0, 6.0), 1e12);
  CHECK(sat.saturated);
  CHECK(sat.value == 1e12);
  CHECK_FALSE(censored_nll(2.0, 0, WeibullParams(1.0, 6.0)).saturated);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int i = 0; i < 200; ++i) {
    const WeibullParams p(u(rng), u(rng));
    const double z = u(rng);
    const double s = survival(z, p);
    if (s > 1e-300) CHECK(censored_nll(z, 0, p).value == doctest::Approx(-std::log(s)).epsilon(1e-12));
    CHECK(std::abs(censored_nll(z, 1, p).value + log_density(z, p)) < 1e-12);
  }
}

TEST_CASE("density integrates to one") {
  for (const auto& p : {WeibullParams(1.0, 1.0), WeibullParams(2.0, 2.0), WeibullParams(0.7, 3.5),
                        WeibullParams(5.0, 6.0), WeibullParams(1.3, 1.5)}) {
    const double upper = p.eta * std::pow(60.0, 1.0 / p.beta);
    const double total = simpson([&](double z) { return z <= 0.0 ? (p.beta == 1.0 ? 1.0 / p.eta : 0.0)
                                                                    : std::exp(-censored_nll(z, 1, p).value); },
                                 0.0, upper, 400000);
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}
