#pragma once

#include <memory>
#include <optional>
#include <string>

#include "btmle/classical.hpp"
#include "btmle/sampler.hpp"

namespace btmle {

enum class BayesMethod { BTmleM, BTmleSS, BnTmle1p, BnTmle2p };

std::string to_string(BayesMethod m);
BayesMethod bayes_method_from_string(const std::string& s);

enum class PredictionKind { InitialOutcome, PropensityScore, CleverCovariate, TargetedOutcome };

// d x m matrix of per-datapoint, per-draw predictions.
struct PredictionMatrix {
  Mat values;
  PredictionKind kind = PredictionKind::InitialOutcome;
};

struct AteDistribution {
  Vec samples;
  double mean = 0.0;
  double ci_low = 0.0;   // order statistics, central 95% by default
  double ci_high = 0.0;
  Vec kde_x;
  Vec kde_density;
};

// m ATE samples = colMean(yf1) - colMean(yf0); KDE uses a Gaussian kernel
// with Silverman bandwidth on a 512-point grid spanning mean +/- 4 sd.
AteDistribution ate_distribution(const PredictionMatrix& yf_treated,
                                 const PredictionMatrix& yf_control);
AteDistribution ate_distribution_from_samples(Vec samples);

// Row-wise mean/sd of initial-outcome and clever-covariate draws at the
// observed treatments; logit scale for binary outcomes. Sds floored at 1e-6.
struct SummaryStats {
  Vec mu_yinit;
  Vec sd_yinit;
  Vec mu_h;
  Vec sd_h;
};

struct BayesOptions {
  ModelSpec outcome_spec;
  ModelSpec propensity_spec;
  SamplerConfig sampler;
  FluctuationForm fluctuation = FluctuationForm::OneParam;  // B-TMLE-M only
  bool clip_propensity = false;
  int ss_row_cap = 2000;        // B-TMLE-SS latent-row cap (documented fallback)
  double epsilon_prior_scale = 1.0;
  // Prediction matrices are retained on the result only when d*m is at or
  // below this bound; the ATE samples are identical either way.
  long long keep_prediction_entries = 4'000'000;
  // Optional precomputed stage posteriors (must carry theta_Y / theta_A);
  // when set, the sequential estimators skip the corresponding stage.
  std::shared_ptr<const PosteriorDraws> outcome_draws;
  std::shared_ptr<const PosteriorDraws> propensity_draws;
};

struct BayesTmleResult {
  BayesMethod method = BayesMethod::BnTmle1p;
  PosteriorDraws draws;
  // Populated only when d*m <= keep_prediction_entries (TargetedOutcome kind;
  // continuous values on the original outcome scale).
  std::optional<PredictionMatrix> yf_treated;
  std::optional<PredictionMatrix> yf_control;
  AteDistribution ate;
  OutcomeKind outcome_kind = OutcomeKind::Binary;
  std::vector<std::string> warnings;
};

// Posterior over the outcome-model coefficients (plus sigma_xi when the
// outcome is continuous); standard Gaussian priors, HalfNormal(1) scales.
PosteriorDraws fit_bayes_outcome(const Dataset& ds, const ModelSpec& spec,
                                 const SamplerConfig& config);
PosteriorDraws fit_bayes_propensity(const Dataset& ds, const ModelSpec& spec,
                                    const SamplerConfig& config);

// d x m initial-outcome and clever-covariate matrices under do(A=a).
// y_init is on the model scale (probability for binary, standardized for
// continuous).
std::pair<PredictionMatrix, PredictionMatrix> predict_matrices(
    const PosteriorDraws& outcome_draws, const PosteriorDraws& propensity_draws,
    const Dataset& ds, const EncodingMeta& outcome_meta,
    const EncodingMeta& propensity_meta, double a, OutcomeKind kind);

// Sequential estimator using row means of the initial predictions and
// clever covariates in the fluctuation step.
BayesTmleResult fit_btmle_m(const Dataset& ds, const BayesOptions& opts);

// Sequential estimator treating per-row initial predictions and clever
// covariates as latent inputs with Normal priors at their summary statistics.
BayesTmleResult fit_btmle_ss(const Dataset& ds, const BayesOptions& opts);

// Joint estimator: one posterior over (theta_Y, theta_A, epsilon[, sigma_o,
// sigma_f]) whose likelihood carries the treatment factor and both the
// outcome-vs-initial and outcome-vs-targeted factors per row.
BayesTmleResult fit_bn_tmle(const Dataset& ds, const BayesOptions& opts,
                            FluctuationForm form);

BayesTmleResult fit_bayes(const Dataset& ds, BayesMethod method, const BayesOptions& opts);

// Interventional targeted predictions: the treatment column is forced to
// `a` for every row and Y_f is recomputed per draw; no re-inference.
// Continuous values are returned on the original outcome scale.
struct DoPredictContext {
  const PosteriorDraws& draws;
  const EncodingMeta& outcome_meta;
  const EncodingMeta& propensity_meta;
  OutcomeKind outcome_kind;
  OutcomeScaling scaling;
  FluctuationForm form = FluctuationForm::OneParam;
};

PredictionMatrix do_predict(const DoPredictContext& ctx, const Dataset& ds, double a);

std::string bayes_result_json(const BayesTmleResult& result,
                              const std::string& samples_path = "");

}  // namespace btmle
