#pragma once

#include "btmle/classical.hpp"
#include "btmle/glm.hpp"

// Differentiable joint densities behind the Bayesian estimators, exposed as
// plain LogDensityModel builders so the samplers and gradient checks can
// drive them directly.
namespace btmle::models {

// Fluctuation model on row-mean inputs: Bernoulli(expit(offset + hbar*eps)),
// eps ~ N(0, eps_scale) per column of hbar.
LogDensityModel mean_fluct_binary(const Vec& offset, const Mat& hbar, const Vec& y,
                                  double eps_scale = 1.0);

// Continuous variant with sigma_f ~ HalfNormal(sd_prior_scale) on the log scale.
LogDensityModel mean_fluct_continuous(const Vec& ybar, const Mat& hbar, const Vec& y,
                                      double sd_prior_scale = 1.0,
                                      double eps_scale = 1.0);

// Latent-input fluctuation model: per-row initial outcomes and clever
// covariates are non-centered latents with Normal priors at their summary
// statistics (2d + 1 parameters, plus sigma_f for continuous outcomes).
LogDensityModel ss_fluct(const Vec& mu_y, const Vec& sd_y, const Vec& mu_h,
                         const Vec& sd_h, const Vec& y, OutcomeKind kind,
                         double sd_prior_scale = 1.0, double eps_scale = 1.0);

// Joint network density over (theta_Y, theta_A, epsilon[, sigma_o, sigma_f])
// with three likelihood factors per row: treatment, outcome-vs-initial, and
// outcome-vs-targeted (the duplicated-outcome construction).
LogDensityModel bn_tmle(const Mat& outcome_design, const Mat& propensity_design,
                        const Vec& treatment, const Vec& y, OutcomeKind kind,
                        FluctuationForm form, double prior_scale = 1.0,
                        double sd_prior_scale = 1.0, double eps_scale = 1.0);

}  // namespace btmle::models
