#pragma once

#include <cstdint>
#include <random>

namespace wtnn {

/// Two-parameter Weibull law: S(t) = exp(-(t/eta)^beta).
struct WeibullParams {
  double eta = 1.0;   // scale, duration units
  double beta = 1.0;  // shape

  WeibullParams() = default;
  WeibullParams(double eta_, double beta_);
};

/// Location of the minimum of the gamma function and the shape threshold
/// derived from it. Above `beta0`, the Weibull mean decreases with eta only if
/// eta itself is decreasing, which is what drives the mask mechanism.
struct Beta0Constants {
  double xi = 0.0;
  double beta0 = 0.0;
};

using Rng = std::mt19937_64;

double gamma_fn(double x);
double log_gamma_fn(double x);
double digamma_fn(double x);
double trigamma_fn(double x);

/// True minimiser of the gamma function (xi ~ 1.4616) and beta0 = 1/(xi - 1).
const Beta0Constants& beta0();

/// The rounded value xi = 3/2, which gives beta0 = 2.
Beta0Constants beta0_approximate();

double survival(double t, const WeibullParams& p);
double cdf(double t, const WeibullParams& p);
double log_density(double t, const WeibullParams& p);
double quantile(double prob, const WeibullParams& p);
double mean(const WeibullParams& p);

/// Inverse-CDF draw. U is taken from the open interval (0, 1).
double sample(Rng& rng, const WeibullParams& p);

/// (z/eta)^beta evaluated in log space so large shapes cannot overflow early.
double cumulative_hazard(double z, const WeibullParams& p);

inline constexpr double kDefaultNllCap = 1e12;

struct NllTerm {
  double value = 0.0;
  bool saturated = false;
};

/// Negative log of the censored Weibull likelihood contribution of one
/// observation (density when delta = 1, survival when delta = 0), clamped
/// at `cap`.
NllTerm censored_nll(double z, int delta, const WeibullParams& p, double cap = kDefaultNllCap);

}  // namespace wtnn
