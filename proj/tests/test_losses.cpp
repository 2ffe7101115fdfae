#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "test_support.hpp"
#include "wtnn/errors.hpp"
#include "wtnn/losses.hpp"

using namespace wtnn;

namespace {

ArchSpec tiny_spec(bool monotone) {
  ArchSpec s;
  s.d = 1;
  s.partition = CovariatePartition::all_oa(1);
  s.widths = {1};
  s.monotone_weights = monotone;
  return s;
}

Batch one_row(double x, double z, int delta, double w) {
  Batch b;
  b.X = Matrix(1, 1);
  b.X(0, 0) = x;
  b.z = {z};
  b.delta = {delta};
  b.w = {w};
  return b;
}

// eta = 1 and beta = 1 regardless of input.
ParamSet unit_weibull_net(const ArchSpec& spec) {
  ParamSet p = make_param_layout(spec);
  p.at("beta_b").value = {-1000.0};
  p.at("eta_b").value = {-1000.0};
  return p;
}

double loss_value(const ParamSet& p, const ArchSpec& spec, const Batch& b, ad::Var (*fn)(LossContext&, const Batch&)) {
  ad::Tape tape;
  LossContext ctx = build_context(tape, p, spec, b);
  return fn(ctx, b).scalar();
}

ad::Var nll_sum_fn(LossContext& ctx, const Batch& b) { return nll(ctx, b); }

}  // namespace

TEST_CASE("nll of a unit Weibull net") {
  const ArchSpec spec = tiny_spec(false);
  const ParamSet p = unit_weibull_net(spec);
  const Batch b = one_row(0.3, 1.0, 1, 1.0);
  CHECK(loss_value(p, spec, b, nll_sum_fn) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(nll_sum(p, spec, b) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("nll is additive over rows") {
  std::mt19937_64 rng(4);
  const auto inst = test::random_instance(rng, HeadStyle::Linear);
  Batch one = test::random_batch(rng, inst.spec.d, 1);
  const std::vector<std::size_t> twice{0, 0};
  const Batch two = one.subset(twice);
  const double a = loss_value(inst.params, inst.spec, one, nll_sum_fn);
  const double b = loss_value(inst.params, inst.spec, two, nll_sum_fn);
  CHECK(b == 2.0 * a);

  ad::Tape tape;
  LossContext ctx = build_context(tape, inst.params, inst.spec, two);
  CHECK(nll(ctx, two, NllReduction::Mean).scalar() == doctest::Approx(a).epsilon(1e-15));
}

TEST_CASE("taped nll agrees with the scalar kernel") {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 20; ++k) {
    const auto inst = test::random_instance(rng, k % 2 ? HeadStyle::MiniMlp : HeadStyle::Linear);
    const Batch b = test::random_batch(rng, inst.spec.d, 7);
    CHECK(loss_value(inst.params, inst.spec, b, nll_sum_fn) ==
          doctest::Approx(nll_sum(inst.params, inst.spec, b)).epsilon(1e-12));
  }
}

TEST_CASE("nll saturation is counted and blocks the gradient") {
  ArchSpec spec = tiny_spec(false);
  ParamSet p = make_param_layout(spec);
  p.at("beta_b").value = {1000.0};  // beta = beta_max
  p.at("eta_b").value = {-1000.0};  // eta = 1
  const Batch b = one_row(0.0, 1e3, 0, 1.0);  // (1e3)^6 = 1e18 > cap
  ad::Tape tape;
  LossContext ctx = build_context(tape, p, spec, b);
  std::size_t sat = 0;
  ad::Var v = nll(ctx, b, NllReduction::Sum, &sat);
  CHECK(sat == 1);
  CHECK(v.scalar() == kDefaultNllCap);
  tape.backward(v);
  for (const auto& f : ctx.bound.free)
    for (double g : f.grad()) CHECK(g == 0.0);
  std::size_t sat2 = 0;
  CHECK(nll_sum(p, spec, b, &sat2) == kDefaultNllCap);
  CHECK(sat2 == 1);
}

TEST_CASE("nll gradient matches finite differences") {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 10; ++k) {
    const auto inst = test::random_instance(rng, k % 2 ? HeadStyle::MiniMlp : HeadStyle::Linear);
    const Batch b = test::model_batch(rng, inst, 5);
    ad::Tape tape;
    LossContext ctx = build_context(tape, inst.params, inst.spec, b);
    ad::Var v = nll(ctx, b, NllReduction::Mean);
    const auto rep = ad::check_gradients(tape, v, ctx.bound.free);
    CHECK(rep.fraction_within(1e-4) == 1.0);
  }
}

TEST_CASE("monotonicity penalty vanishes under constrained weights") {
  std::mt19937_64 rng(10);
  for (int k = 0; k < 1000; ++k) {
    const auto inst = test::random_instance(rng, k % 2 ? HeadStyle::MiniMlp : HeadStyle::Linear);
    const Batch b = test::random_batch(rng, inst.spec.d, 3);
    ad::Tape tape;
    LossContext ctx = build_context(tape, inst.params, inst.spec, b);
    CHECK(mono_penalty(ctx, b).scalar() == 0.0);
  }
}

TEST_CASE("monotonicity penalty on a hand net with a negative weight") {
  ArchSpec spec = tiny_spec(false);
  ParamSet p = make_param_layout(spec);
  p.at("W1").value = {-1.0};
  p.at("beta_w").value = {1.0};
  p.at("eta_v").value = {0.0};  // eta does not depend on x
  const Batch b = one_row(0.0, 1.0, 1, 1.0);
  ad::Tape tape;
  LossContext ctx = build_context(tape, p, spec, b);
  // h = softplus(-x), dh/dx = -1/2 at 0; beta = 1 + 5 sigmoid(h).
  const double s = 2.0 / 3.0;  // sigmoid(ln 2)
  const double expected = 5.0 * s * (1.0 - s) * 0.5;
  CHECK(mono_penalty(ctx, b).scalar() == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(5.0 / 9.0).epsilon(1e-14));
}

TEST_CASE("monotonicity penalty ignores eta when the mask is off") {
  ArchSpec spec = tiny_spec(false);
  ParamSet p = make_param_layout(spec);
  p.at("W1").value = {-1.0};
  p.at("beta_w").value = {1.0};
  p.at("beta_b").value = {-8.0};  // beta close to beta_min
  p.at("eta_v").value = {-3.0};   // d eta / dx > 0 through the negative W1
  const Batch b = one_row(0.0, 1.0, 1, 1.0);
  ad::Tape tape;
  LossContext ctx = build_context(tape, p, spec, b);
  CHECK(ctx.rows[0].mask.scalar() == 0.0);
  const double h = std::log(2.0);
  const double s = 1.0 / (1.0 + std::exp(-(h - 8.0)));
  const double beta_part = 5.0 * s * (1.0 - s) * 0.5;
  CHECK(mono_penalty(ctx, b).scalar() == doctest::Approx(beta_part).epsilon(1e-13));
}

TEST_CASE("monotonicity penalty gradient matches differences of the penalty") {
  std::mt19937_64 rng(12);
  int checked = 0;
  for (int k = 0; k < 10; ++k) {
    auto inst = test::random_instance(rng, k % 2 ? HeadStyle::MiniMlp : HeadStyle::Linear);
    inst.spec.monotone_weights = false;
    Rng prng(rng());
    InitConfig ic;
    ic.weight_scale = 1.0;
    ic.bias_scale = 0.5;
    inst.params = init_params(inst.spec, prng, ic);
    const Batch b = test::random_batch(rng, inst.spec.d, 4);
    ad::Tape tape;
    LossContext ctx = build_context(tape, inst.params, inst.spec, b);
    ad::Var pen = mono_penalty(ctx, b);
    if (pen.scalar() == 0.0) continue;
    ++checked;
    const auto rep = ad::check_gradients(tape, pen, ctx.bound.free, 1e-6);
    CHECK(rep.fraction_within(1e-3) >= 0.99);
  }
  CHECK(checked >= 5);
}

TEST_CASE("orthogonality penalty") {
  ArchSpec spec;
  spec.d = 2;
  spec.partition = CovariatePartition::all_oa(2);
  spec.widths = {2};
  spec.monotone_weights = false;
  ParamSet p = make_param_layout(spec);
  auto value = [&](std::vector<double> wb, std::vector<double> we) {
    p.at("beta_w").value = wb;
    p.at("eta_v").value = we;
    std::mt19937_64 r(1);
    const Batch b = test::random_batch(r, 2, 2);
    ad::Tape tape;
    LossContext ctx = build_context(tape, p, spec, b);
    return orth_penalty(ctx).scalar();
  };
  CHECK(std::abs(value({1.0, 2.0}, {1.0, 2.0}) - 1.0) < 1e-12);
  CHECK(std::abs(value({1.0, 0.0}, {0.0, 3.0})) < 1e-12);
  CHECK(value({1.0, 0.0}, {1.0, 1.0}) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(value({3.0, 0.0}, {7.0, 7.0}) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(value({0.0, 0.0}, {1.0, 1.0}) == 1.0);
  CHECK(value({0.3, -1.2}, {2.0, 0.5}) == doctest::Approx(value({0.9, -3.6}, {0.2, 0.05})).epsilon(1e-13));

  // Effective weights under the softplus constraint.
  ArchSpec mono = spec;
  mono.monotone_weights = true;
  ParamSet q = make_param_layout(mono);
  q.at("beta_w").value = {inverse_softplus(0.4), inverse_softplus(0.9)};
  q.at("eta_v").value = {0.4, 0.9};
  ad::Tape tape;
  std::mt19937_64 rng(3);
  const Batch b = test::random_batch(rng, 2, 2);
  LossContext ctx = build_context(tape, q, mono, b);
  CHECK(std::abs(orth_penalty(ctx).scalar() - 1.0) < 1e-12);
}

TEST_CASE("decov penalty") {
  ad::Tape tape;
  auto rows = [&](std::vector<std::vector<double>> h) {
    std::vector<ad::Var> v;
    for (auto& r : h) v.push_back(tape.constant(r));
    return decov_penalty(tape, v).scalar();
  };
  CHECK(rows({{1.0, 1.0}, {-1.0, -1.0}}) == 4.0);
  CHECK(std::abs(rows({{1.0, 1.0}, {1.0, -1.0}, {-1.0, 1.0}, {-1.0, -1.0}})) < 1e-10);
  CHECK(rows({{1.0}, {2.0}, {5.0}}) == 0.0);
  CHECK(rows({{1.0, 2.0, 0.5}, {3.0, -1.0, 2.0}, {0.0, 0.0, 1.0}}) ==
        doctest::Approx(rows({{11.0, -8.0, 3.5}, {13.0, -11.0, 5.0}, {10.0, -10.0, 4.0}})).epsilon(1e-12));
  std::vector<ad::Var> single{tape.constant(1.0)};
  CHECK_THROWS_AS(decov_penalty(tape, single), UsageError);
}

TEST_CASE("moment alignment") {
  ArchSpec spec = tiny_spec(false);
  const ParamSet unit = unit_weibull_net(spec);
  ad::Tape t1;
  Batch b = one_row(0.0, 1.0, 1, 1.0);
  LossContext c1 = build_context(t1, unit, spec, b);
  CHECK(mse_ipcw(c1, b).scalar() == 0.0);

  ParamSet p = make_param_layout(spec);
  p.at("beta_b").value = {std::log(0.25)};  // beta = 1 + 5 * 0.2 = 2
  p.at("eta_b").value = {-1000.0};
  Batch b2 = one_row(0.0, std::sqrt(std::numbers::pi) / 2.0, 1, 2.0);
  ad::Tape t2;
  LossContext c2 = build_context(t2, p, spec, b2);
  CHECK(c2.rows[0].beta.scalar() == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(std::abs(mse_ipcw(c2, b2).scalar()) < 1e-20);

  b2.z = {1.5};
  ad::Tape t3;
  LossContext c3 = build_context(t3, p, spec, b2);
  const double mu = std::sqrt(std::numbers::pi) / 2.0;
  CHECK(mse_ipcw(c3, b2).scalar() == doctest::Approx(2.0 * (1.5 - mu) * (1.5 - mu)).epsilon(1e-13));
}

TEST_CASE("total loss composition") {
  std::mt19937_64 rng(14);
  auto inst = test::random_instance(rng, HeadStyle::Linear);
  inst.spec.monotone_weights = false;
  Rng prng(5);
  InitConfig ic;
  ic.weight_scale = 1.0;
  inst.params = init_params(inst.spec, prng, ic);
  const Batch b = test::random_batch(rng, inst.spec.d, 6);

  const LossWeights zero{0.0, 0.0, 0.0, 0.0};
  const auto v0 = evaluate_loss(inst.params, inst.spec, b, zero);
  CHECK(v0.total == v0.nll);

  LossWeights lw;
  lw.mono = 0.0;
  lw.cov = 0.0;
  lw.mse = 0.0;
  lw.orth = 0.3;
  const auto v1 = evaluate_loss(inst.params, inst.spec, b, lw);
  lw.orth = 0.6;
  const auto v2 = evaluate_loss(inst.params, inst.spec, b, lw);
  CHECK(v2.total - v0.total == doctest::Approx(2.0 * (v1.total - v0.total)).epsilon(1e-12));

  const auto full = evaluate_loss(inst.params, inst.spec, b, LossWeights{});
  CHECK(full.total == doctest::Approx(full.nll + full.mono + 0.1 * full.orth + 0.01 * full.cov + full.mse).epsilon(1e-13));
  for (double v : {full.mono, full.orth, full.cov, full.mse}) CHECK(v >= 0.0);

  CHECK_THROWS_AS(evaluate_loss(inst.params, inst.spec, b, LossWeights{-1.0, 0.0, 0.0, 0.0}), UsageError);
}

TEST_CASE("total loss gradient matches finite differences") {
  std::mt19937_64 rng(16);
  for (int k = 0; k < 20; ++k) {
    auto inst = test::random_instance(rng, k % 2 ? HeadStyle::MiniMlp : HeadStyle::Linear);
    inst.spec.monotone_weights = (k % 4 < 2);
    Rng prng(rng());
    inst.params = init_params(inst.spec, prng, InitConfig{0.7, 0.3, true});
    const Batch b = test::model_batch(rng, inst, 5);
    ad::Tape tape;
    LossContext ctx = build_context(tape, inst.params, inst.spec, b);
    LossOptions opt;
    opt.tape_mono_when_constrained = true;
    const LossTerms t = total_loss(ctx, b, LossWeights{}, opt);
    const auto rep = ad::check_gradients(tape, t.total, ctx.bound.free);
    CHECK(rep.fraction_within(1e-4) >= 0.99);
  }
}

TEST_CASE("monotonicity diagnostic") {
  std::mt19937_64 rng(18);
  const auto inst = test::random_instance(rng, HeadStyle::Linear);
  const Batch b = test::random_batch(rng, inst.spec.d, 40);
  const auto rep = monotonicity_violations(inst.params, inst.spec, b.X);
  CHECK(rep.pairs == 40 * inst.spec.partition.oa.size());
  CHECK(rep.violations == 0);

  ArchSpec spec = tiny_spec(false);
  ParamSet p = make_param_layout(spec);
  p.at("W1").value = {-1.0};
  p.at("beta_w").value = {1.0};
  Matrix X(3, 1);
  const auto bad = monotonicity_violations(p, spec, X);
  CHECK(bad.pairs == 3);
  CHECK(bad.violations == 3);
  CHECK(bad.fraction() == 1.0);
}

TEST_CASE("batch validation") {
  Batch b = one_row(0.0, -1.0, 1, 1.0);
  CHECK_THROWS_AS(b.validate(1), DataError);
  b = one_row(0.0, 1.0, 3, 1.0);
  CHECK_THROWS_AS(b.validate(1), DataError);
  b = one_row(0.0, 1.0, 1, -1.0);
  CHECK_THROWS_AS(b.validate(1), DataError);
  b = one_row(0.0, 1.0, 1, 1.0);
  CHECK_THROWS_AS(b.validate(2), UsageError);
}
