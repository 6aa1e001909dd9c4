#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "btmle/common.hpp"

namespace btmle {

enum class Transform { Identity, Log };

struct BlockSpec {
  std::string name;
  int offset = 0;
  int size = 0;
  Transform transform = Transform::Identity;
};

// A differentiable unnormalized log posterior over an unconstrained
// parameter vector. Positive scales are carried on the log scale (their
// block is tagged Transform::Log) with the Jacobian folded into the density.
// Evaluation is pure and reentrant.
struct LogDensityModel {
  int dim = 0;
  std::vector<BlockSpec> blocks;
  // Returns log density; when grad != nullptr it is resized and filled.
  std::function<double(const Vec&, Vec*)> eval;

  double log_density(const Vec& theta) const { return eval(theta, nullptr); }
  Vec gradient(const Vec& theta) const {
    Vec g;
    eval(theta, &g);
    return g;
  }
};

// Bernoulli likelihood with logit link and independent N(0, prior_scale)
// priors on the coefficients.
LogDensityModel logistic_log_density(const Mat& design, const Vec& y,
                                     double prior_scale,
                                     const std::string& block_name = "theta");

// Gaussian likelihood with N(0, prior_scale) coefficient priors and a
// HalfNormal(sd_prior_scale) prior on the residual sd, sampled as log(sigma).
LogDensityModel linear_log_density(const Mat& design, const Vec& y,
                                   double prior_scale, double sd_prior_scale,
                                   const std::string& block_name = "theta",
                                   const std::string& sigma_name = "sigma_xi");

enum class GlmKind { Logistic, Linear };

struct MleFit {
  Vec theta;
  std::optional<double> sigma;  // Linear: residual sd (denominator d)
  bool separation_warning = false;
  bool converged = true;
  int iterations = 0;
};

// Logistic: Newton-Raphson on the unpenalized log likelihood to gradient
// inf-norm < 1e-8 (<= 100 iterations). Linear: closed-form least squares.
// Rank-deficient designs raise EstimationError.
MleFit fit_mle(GlmKind kind, const Mat& design, const Vec& y);

// Intercept-free GLM of y on `covariates` with a fixed offset. Logistic
// offsets are on the logit scale. k must be 1 or 2.
Vec offset_glm_fit(GlmKind kind, const Vec& offset, const Mat& covariates,
                   const Vec& y);

}  // namespace btmle
