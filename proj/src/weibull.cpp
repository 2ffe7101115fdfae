#include "wtnn/weibull.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <limits>
#include <string>

#include "wtnn/errors.hpp"

namespace wtnn {

namespace {

void require_positive_finite(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(what) + " must be positive and finite, got " + std::to_string(x));
  }
}

}  // namespace

WeibullParams::WeibullParams(double eta_, double beta_) : eta(eta_), beta(beta_) {
  require_positive_finite(eta, "Weibull scale eta");
  require_positive_finite(beta, "Weibull shape beta");
}

double gamma_fn(double x) {
  require_positive_finite(x, "gamma_fn argument");
  return std::tgamma(x);
}

double log_gamma_fn(double x) {
  require_positive_finite(x, "log_gamma_fn argument");
  return std::lgamma(x);
}

double digamma_fn(double x) {
  require_positive_finite(x, "digamma argument");
  return boost::math::digamma(x);
}

double trigamma_fn(double x) {
  require_positive_finite(x, "trigamma argument");
  return boost::math::trigamma(x);
}

const Beta0Constants& beta0() {
  // Gamma is strictly convex in log space on (0, inf); its minimiser is the
  // unique positive root of digamma, bracketed by (1, 2).
  static const Beta0Constants constants = [] {
    boost::math::tools::eps_tolerance<double> tol(std::numeric_limits<double>::digits - 2);
    std::uintmax_t max_iter = 200;
    auto [lo, hi] = boost::math::tools::toms748_solve(
        [](double x) { return boost::math::digamma(x); }, 1.0, 2.0, tol, max_iter);
    Beta0Constants c;
    c.xi = 0.5 * (lo + hi);
    c.beta0 = 1.0 / (c.xi - 1.0);
    return c;
  }();
  return constants;
}

Beta0Constants beta0_approximate() { return {1.5, 2.0}; }

double cumulative_hazard(double z, const WeibullParams& p) {
  if (z == 0.0) return 0.0;
  return std::exp(p.beta * (std::log(z) - std::log(p.eta)));
}

double survival(double t, const WeibullParams& p) {
  if (!(t >= 0.0)) throw DomainError("survival: t must be non-negative");
  return std::exp(-cumulative_hazard(t, p));
}

double cdf(double t, const WeibullParams& p) {
  if (!(t >= 0.0)) throw DomainError("cdf: t must be non-negative");
  return -std::expm1(-cumulative_hazard(t, p));
}

double log_density(double t, const WeibullParams& p) {
  if (!(t > 0.0)) throw DomainError("log_density: t must be positive");
  const double log_ratio = std::log(t) - std::log(p.eta);
  return std::log(p.beta) - std::log(p.eta) + (p.beta - 1.0) * log_ratio -
         std::exp(p.beta * log_ratio);
}

double quantile(double prob, const WeibullParams& p) {
  if (!(prob >= 0.0) || !(prob < 1.0)) throw DomainError("quantile: probability must lie in [0, 1)");
  if (prob == 0.0) return 0.0;
  return p.eta * std::pow(-std::log1p(-prob), 1.0 / p.beta);
}

double mean(const WeibullParams& p) { return p.eta * std::tgamma(1.0 + 1.0 / p.beta); }

double sample(Rng& rng, const WeibullParams& p) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  while (u <= 0.0) u = unif(rng);
  return quantile(u, p);
}

NllTerm censored_nll(double z, int delta, const WeibullParams& p, double cap) {
  if (!(z > 0.0)) throw DomainError("censored_nll: duration must be positive");
  if (delta != 0 && delta != 1) throw DomainError("censored_nll: delta must be 0 or 1");
  const double log_ratio = std::log(z) - std::log(p.eta);
  double value = std::exp(p.beta * log_ratio);
  if (delta == 1) {
    value -= std::log(p.beta) - std::log(p.eta) + (p.beta - 1.0) * log_ratio;
  }
  if (!(value <= cap)) return {cap, true};
  return {value, false};
}

}  // namespace wtnn
