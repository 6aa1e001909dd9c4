#include <doctest.h>

#include <cmath>

#include "btmle/classical.hpp"
#include "btmle/simgen.hpp"

using namespace btmle;

namespace {

Dataset randomized_dataset(Eigen::Index n, double psi, std::uint64_t seed,
                           OutcomeKind kind = OutcomeKind::Binary) {
  const auto xs = gen_confounders(n, seed);
  Rng rng(derive_seed(seed, 1234));
  Vec a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  Vec y = kind == OutcomeKind::Binary
              ? gen_outcome_binary(xs, a, psi, ModelOrder::SecondOrder, 0.0, seed).y
              : gen_outcome_continuous(xs, a, psi, seed);
  std::vector<ConfounderColumn> cols;
  cols.push_back({"X1", ColumnKind::Binary, xs.x1, {}});
  cols.push_back({"X2", ColumnKind::Categorical, xs.x2, {}});
  cols.push_back({"X3", ColumnKind::Continuous, xs.x3, {}});
  return Dataset(std::move(cols), a, std::move(y), kind);
}

Dataset case_study_dataset(Eigen::Index n, OutcomeKind kind, std::uint64_t seed) {
  DgpSpec spec;
  spec.n = n;
  spec.outcome_kind = kind;
  spec.effect_size = kind == OutcomeKind::Binary ? 0.03 : 0.25;
  spec.treatment_order = ModelOrder::FirstOrder;
  spec.outcome_order = ModelOrder::SecondOrder;
  spec.label_noise = kind == OutcomeKind::Binary ? 0.05 : 0.0;
  spec.seed = seed;
  return gen_dataset(spec);
}

}  // namespace

TEST_SUITE_BEGIN("classical");

TEST_CASE("clever covariate values") {
  CHECK(clever_covariate(1, 0.5) == doctest::Approx(2.0));
  CHECK(clever_covariate(0, 0.5) == doctest::Approx(-2.0));
  CHECK(clever_covariate(1, 0.2) == doctest::Approx(5.0));

  const auto [h0a, h1a] = clever_covariate_two(1, 0.25);
  CHECK(h0a == doctest::Approx(0.0));
  CHECK(h1a == doctest::Approx(4.0));
  const auto [h0b, h1b] = clever_covariate_two(0, 0.25);
  CHECK(h0b == doctest::Approx(4.0 / 3.0));
  CHECK(h1b == doctest::Approx(0.0));

  // algebraic identity H = H1 - H0
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const double a = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double p = rng.uniform(0.01, 0.99);
    const auto [h0, h1] = clever_covariate_two(a, p);
    CHECK(clever_covariate(a, p) == doctest::Approx(h1 - h0).epsilon(1e-12));
  }

  // clamping keeps out-of-range propensities finite
  CHECK(std::isfinite(clever_covariate(1, 0.0)));
  CHECK(std::isfinite(clever_covariate(0, 1.0)));
}

TEST_CASE("targeted predictions: epsilon = 0 reduces to the initial model") {
  const Dataset ds = case_study_dataset(800, OutcomeKind::Binary, 3);
  ClassicalTmleFit fit = fit_classical(ds, ModelSpec{}, ModelSpec{},
                                       FluctuationForm::OneParam);
  fit.epsilon.setZero();
  const Vec yf1 = targeted_predict(fit, ds, 1.0);
  const Vec init1 = expit(apply_design(ds, fit.outcome_meta, 1.0).values * fit.theta_outcome);
  CHECK((yf1 - init1).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("one hand-built row: expit(logit(0.5) + 0.1 * 2) = expit(0.2)") {
  // theta = 0 gives Y_init = 0.5 everywhere; propensity intercept 0 gives H = 2
  Vec x(2), a(2), y(2);
  x << 0.0, 1.0;
  a << 1, 0;
  y << 1, 0;
  const Dataset ds({{"X", ColumnKind::Binary, x, {}}}, a, y, OutcomeKind::Binary);
  ClassicalTmleFit fit;
  fit.outcome_kind = OutcomeKind::Binary;
  fit.fluctuation_form = FluctuationForm::OneParam;
  ModelSpec ospec;
  ospec.role = ModelRole::Outcome;
  ModelSpec pspec;
  pspec.role = ModelRole::Propensity;
  fit.outcome_meta = build_design(ds, ospec).meta;
  fit.propensity_meta = build_design(ds, pspec).meta;
  fit.theta_outcome = Vec::Zero(3);     // intercept, X, A
  fit.theta_propensity = Vec::Zero(2);  // intercept, X
  fit.epsilon = Vec::Constant(1, 0.1);
  const Vec yf = targeted_predict(fit, ds, 1.0);
  CHECK(yf[0] == doctest::Approx(0.549833997312478).epsilon(1e-12));
}

TEST_CASE("two-parameter fit with (eps1, eps0) = (e, -e) matches one-parameter") {
  const Dataset ds = case_study_dataset(300, OutcomeKind::Binary, 11);
  ClassicalTmleFit fit1 = fit_classical(ds, ModelSpec{}, ModelSpec{},
                                        FluctuationForm::OneParam);
  ClassicalTmleFit fit2 = fit1;
  fit2.fluctuation_form = FluctuationForm::TwoParam;
  fit2.epsilon = Vec(2);
  fit2.epsilon << -fit1.epsilon[0], fit1.epsilon[0];  // (eps0, eps1)
  for (double arm : {1.0, 0.0}) {
    const Vec a1 = targeted_predict(fit1, ds, arm);
    const Vec a2 = targeted_predict(fit2, ds, arm);
    CHECK((a1 - a2).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("randomized treatment: ATE within 2 SE of the difference in means") {
  const Dataset ds = randomized_dataset(20000, 0.15, 7);
  const auto fit = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);

  double m1 = 0, n1 = 0, m0 = 0, n0 = 0;
  for (Eigen::Index i = 0; i < ds.rows(); ++i) {
    if (ds.treatment()[i] == 1.0) {
      m1 += ds.outcome()[i];
      ++n1;
    } else {
      m0 += ds.outcome()[i];
      ++n0;
    }
  }
  const double diff = m1 / n1 - m0 / n0;
  CHECK(std::abs(fit.ate - diff) < 2.0 * fit.se);
}

TEST_CASE("targeting score is satisfied at the fluctuation optimum") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const Dataset ds = case_study_dataset(2000, OutcomeKind::Binary, seed);
    const auto fit = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
    const Vec yf1 = targeted_predict(fit, ds, 1.0);
    const Vec yf0 = targeted_predict(fit, ds, 0.0);
    const Vec up = apply_design(ds, fit.propensity_meta).values * fit.theta_propensity;
    double score = 0.0;
    for (Eigen::Index i = 0; i < ds.rows(); ++i) {
      const double p = clamp_prob(expit(up[i]));
      const double h = clever_covariate(ds.treatment()[i], p);
      const double yf = ds.treatment()[i] == 1.0 ? yf1[i] : yf0[i];
      score += h * (ds.outcome()[i] - yf);
    }
    CHECK(std::abs(score) < 1e-6);

    // influence values average to ~0 by construction
    CHECK(std::abs(fit.influence_values.mean()) < 1e-8);
    // the reported interval is ate +/- 1.96 se
    CHECK(fit.ci_low == doctest::Approx(fit.ate - 1.96 * fit.se));
    CHECK(fit.ci_high == doctest::Approx(fit.ate + 1.96 * fit.se));
  }
}

TEST_CASE("one- and two-parameter classical fits agree on case-study data") {
  for (auto kind : {OutcomeKind::Binary, OutcomeKind::Continuous}) {
    const Dataset ds = case_study_dataset(4000, kind, 5);
    const auto f1 = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
    const auto f2 = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::TwoParam);
    CHECK(std::abs(f1.ate - f2.ate) < 1e-3);
  }
}

TEST_CASE("continuous case-study data: interval contains the truth") {
  const Dataset ds = case_study_dataset(10000, OutcomeKind::Continuous, 31);
  const auto fit = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
  CHECK(fit.ci_low <= 0.25);
  CHECK(0.25 <= fit.ci_high);
  CHECK(std::abs(fit.ate - 0.25) < 0.015);
}

TEST_CASE("CI width shrinks as 1/sqrt(d)") {
  double sum_ratio = 0.0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    const Dataset d100 = case_study_dataset(100, OutcomeKind::Binary, 1000 + r);
    const Dataset d400 = case_study_dataset(400, OutcomeKind::Binary, 2000 + r);
    const auto f100 = fit_classical(d100, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
    const auto f400 = fit_classical(d400, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
    sum_ratio += (f400.ci_high - f400.ci_low) / (f100.ci_high - f100.ci_low);
  }
  const double avg = sum_ratio / reps;
  CHECK(avg > 0.4);
  CHECK(avg < 0.6);
}

TEST_CASE("double robustness: correct propensity rescues a misspecified outcome model") {
  // second-order outcome DGP, first-order analysis models
  int hits = 0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    DgpSpec spec;
    spec.n = 10000;
    spec.effect_size = 0.03;
    spec.treatment_order = ModelOrder::FirstOrder;
    spec.outcome_order = ModelOrder::SecondOrder;
    spec.seed = 5000 + static_cast<std::uint64_t>(r);
    const Dataset ds = gen_dataset(spec);
    const auto fit = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
    if (std::abs(fit.ate - 0.03) < 3.0 * fit.se) ++hits;
  }
  CHECK(hits >= 90);
}

TEST_CASE("single-arm data is an error") {
  Vec x(4), a(4), y(4);
  x << 0.1, -0.2, 0.3, 0.4;
  a << 1, 1, 1, 1;
  y << 0, 1, 0, 1;
  const Dataset ds({{"X", ColumnKind::Continuous, x, {}}}, a, y, OutcomeKind::Binary);
  CHECK_THROWS_AS(fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam),
                  EstimationError);
}

TEST_CASE("classical fit JSON has the documented fields") {
  const Dataset ds = case_study_dataset(500, OutcomeKind::Binary, 2);
  const auto fit = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
  const std::string j = classical_fit_json(fit);
  for (const char* key : {"\"ate\"", "\"se\"", "\"ci95\"", "\"epsilon\"",
                          "\"fluctuation_form\"", "\"diagnostics\""})
    CHECK(j.find(key) != std::string::npos);
}

TEST_SUITE_END();
