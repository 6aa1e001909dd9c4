#include <doctest.h>

#include <cmath>

#include "btmle/glm.hpp"
#include "btmle/rng.hpp"
#include "oracles.hpp"

using namespace btmle;

TEST_SUITE_BEGIN("core");

TEST_CASE("expit/logit round trip") {
  for (double p : {1e-9, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-6, 1.0 - 1e-9})
    CHECK(expit(logit(p)) == doctest::Approx(p).epsilon(1e-12));
}

TEST_CASE("logistic log density at zero is d*log(0.5) plus the prior constant") {
  Rng rng(42);
  const int d = 50, q = 3;
  Mat x(d, q);
  Vec y(d);
  for (int i = 0; i < d; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.normal();
    x(i, 2) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
  const double prior_scale = 1.0;
  const LogDensityModel model = logistic_log_density(x, y, prior_scale);
  const double prior_at_zero = -q * 0.5 * kLog2Pi;
  CHECK(model.log_density(Vec::Zero(q)) ==
        doctest::Approx(d * std::log(0.5) + prior_at_zero).epsilon(1e-12));
}

TEST_CASE("single-row logistic gradient by hand") {
  Mat x(1, 1);
  x << 1.0;
  Vec y(1);
  y << 1.0;
  const LogDensityModel model = logistic_log_density(x, y, 1.0);
  const Vec g = model.gradient(Vec::Zero(1));
  CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-14));  // (y - expit(0)) - 0
}

TEST_CASE("one-row linear likelihood equals the Gaussian log pdf") {
  Mat x(1, 1);
  x << 1.0;
  Vec y(1);
  y << 2.0;
  const LogDensityModel model = linear_log_density(x, y, 1.0, 1.0);
  Vec params(2);
  params << 2.0, 0.0;  // theta = 2, log sigma = 0
  // subtract priors/Jacobian to isolate the likelihood term
  const double prior_theta = -0.5 * kLog2Pi - 0.5 * 4.0;
  const double prior_sigma = 0.5 * std::log(2.0 / 3.14159265358979323846) - 0.5;
  const double jac = 0.0;
  const double expected_likelihood = -0.5 * kLog2Pi;  // logNormal(2; 2, 1)
  CHECK(model.log_density(params) ==
        doctest::Approx(expected_likelihood + prior_theta + prior_sigma + jac)
            .epsilon(1e-12));
}

TEST_CASE("linear density is maximized over theta at zero for y = 0") {
  Mat x(10, 1);
  Vec y = Vec::Zero(10);
  for (int i = 0; i < 10; ++i) x(i, 0) = (i % 2 == 0) ? 1.0 : -1.0;
  const LogDensityModel model = linear_log_density(x, y, 10.0, 10.0);
  Vec at0(2), at1(2), atm1(2);
  at0 << 0.0, 1.0;
  at1 << 0.5, 1.0;
  atm1 << -0.5, 1.0;
  CHECK(model.log_density(at0) > model.log_density(at1));
  CHECK(model.log_density(at0) > model.log_density(atm1));
}

TEST_CASE("gradients match central finite differences at 20 random points") {
  Rng rng(123);
  const int d = 40;
  Mat x(d, 3);
  Vec yb(d), yc(d);
  for (int i = 0; i < d; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.normal();
    x(i, 2) = rng.uniform(-1.0, 1.0);
    yb[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
    yc[i] = rng.normal(0.5 * x(i, 1), 1.2);
  }
  const LogDensityModel logistic = logistic_log_density(x, yb, 1.5);
  const LogDensityModel linear = linear_log_density(x, yc, 1.0, 1.0);

  for (int t = 0; t < 20; ++t) {
    Vec th(3);
    for (int j = 0; j < 3; ++j) th[j] = rng.normal(0.0, 0.8);
    CHECK(oracles::max_rel_gradient_error(logistic, th) < 1e-5);

    Vec params(4);
    for (int j = 0; j < 3; ++j) params[j] = rng.normal(0.0, 0.8);
    params[3] = rng.normal(0.0, 0.5);  // log sigma
    CHECK(oracles::max_rel_gradient_error(linear, params) < 1e-5);
  }
}

TEST_CASE("logistic MLE recovers the generating coefficients at d = 100000") {
  Rng rng(7);
  const int d = 100000;
  Mat x(d, 3);
  Vec y(d);
  Vec truth(3);
  truth << -0.5, 0.8, -1.1;
  for (int i = 0; i < d; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.normal();
    x(i, 2) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    y[i] = rng.bernoulli(expit(x.row(i).dot(truth))) ? 1.0 : 0.0;
  }
  const MleFit fit = fit_mle(GlmKind::Logistic, x, y);
  CHECK(fit.converged);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(fit.theta[j] - truth[j]) < 0.05);

  // score equation at convergence
  Vec eta(d);
  for (int i = 0; i < d; ++i) eta[i] = expit(x.row(i).dot(fit.theta));
  CHECK((x.transpose() * (y - eta)).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("linear MLE with orthonormal design is X^T y") {
  Mat x(4, 2);
  x << 1, 0, 0, 1, 0, 0, 0, 0;
  // orthonormal columns
  Vec y(4);
  y << 2.0, -1.0, 0.5, 0.25;
  const MleFit fit = fit_mle(GlmKind::Linear, x, y);
  const Vec expected = x.transpose() * y;
  CHECK((fit.theta - expected).lpNorm<Eigen::Infinity>() < 1e-12);
  REQUIRE(fit.sigma.has_value());
  const Vec resid = y - x * fit.theta;
  CHECK(*fit.sigma == doctest::Approx(std::sqrt(resid.squaredNorm() / 4.0)));
}

TEST_CASE("perfect separation yields a warning, not an error") {
  Mat x(4, 2);
  x << 1, -1.0, 1, -0.5, 1, 0.5, 1, 1.0;
  Vec y(4);
  y << 0, 0, 1, 1;
  const MleFit fit = fit_mle(GlmKind::Logistic, x, y);
  CHECK(fit.separation_warning);
}

TEST_CASE("rank-deficient design is an error") {
  Mat x(5, 2);
  for (int i = 0; i < 5; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = 2.0;  // collinear with the intercept
  }
  Vec y(5);
  y << 0, 1, 0, 1, 1;
  CHECK_THROWS_AS(fit_mle(GlmKind::Logistic, x, y), EstimationError);
  CHECK_THROWS_AS(fit_mle(GlmKind::Linear, x, y), EstimationError);
}

TEST_CASE("offset fit: score already zero gives epsilon = 0") {
  // y equals expit(offset) in distribution-free exact sense: use y = expit
  // pattern with H orthogonal to the residuals
  Vec offset(4), y(4);
  offset << 0.0, 0.0, 0.0, 0.0;
  y << 1, 0, 1, 0;  // residuals (y - 0.5): +.5, -.5, +.5, -.5
  Mat h(4, 1);
  h << 1, 1, -1, -1;  // orthogonal to residuals
  const Vec eps = offset_glm_fit(GlmKind::Logistic, offset, h, y);
  CHECK(std::abs(eps[0]) < 1e-10);
}

TEST_CASE("offset linear fit recovers an exact coefficient") {
  Rng rng(5);
  const int d = 30;
  Vec offset(d), y(d);
  Mat h(d, 1);
  for (int i = 0; i < d; ++i) {
    offset[i] = rng.normal();
    h(i, 0) = rng.normal(0.0, 2.0);
    y[i] = offset[i] + 0.7 * h(i, 0);
  }
  const Vec eps = offset_glm_fit(GlmKind::Linear, offset, h, y);
  CHECK(eps[0] == doctest::Approx(0.7).epsilon(1e-10));
}

TEST_CASE("two-covariate logistic offset fit matches a grid-search oracle") {
  // 6-row hand dataset
  Vec offset(6), y(6);
  offset << -0.4, 0.2, 0.1, -0.3, 0.5, 0.0;
  y << 1, 0, 1, 1, 0, 1;
  Mat h(6, 2);
  h << 2.0, 0.0, 0.0, 1.5, 2.5, 0.0, 0.0, 3.0, 1.8, 0.0, 0.0, 2.2;

  const Vec eps = offset_glm_fit(GlmKind::Logistic, offset, h, y);

  auto loglik = [&](double e0, double e1) {
    double ll = 0.0;
    for (int i = 0; i < 6; ++i) {
      const double u = offset[i] + e0 * h(i, 0) + e1 * h(i, 1);
      ll += y[i] * u - softplus(u);
    }
    return ll;
  };
  const Vec oracle = oracles::grid_search_2d(loglik, -4.0, 4.0);
  CHECK(std::abs(eps[0] - oracle[0]) < 1e-4);
  CHECK(std::abs(eps[1] - oracle[1]) < 1e-4);
}

TEST_CASE("non-finite offset is an error") {
  Vec offset(2), y(2);
  offset << 0.0, std::numeric_limits<double>::infinity();
  y << 0, 1;
  Mat h(2, 1);
  h << 1.0, 1.0;
  CHECK_THROWS_AS(offset_glm_fit(GlmKind::Logistic, offset, h, y), EstimationError);
}

TEST_SUITE_END();
