#pragma once

#include <string>

#include "btmle/design.hpp"
#include "btmle/glm.hpp"

namespace btmle {

enum class FluctuationForm { OneParam, TwoParam };

std::string to_string(FluctuationForm f);
FluctuationForm fluctuation_form_from_string(const std::string& s);

// H(a, p) = I(a=1)/p - I(a=0)/(1-p). The propensity is clamped into
// (0, 1) first.
double clever_covariate(double a, double propensity);

// Treatment/control split: h1 = I(a=1)/p, h0 = I(a=0)/(1-p).
std::pair<double, double> clever_covariate_two(double a, double propensity);

struct ClassicalTmleFit {
  Vec theta_outcome;
  Vec theta_propensity;
  Vec epsilon;  // length 1 (OneParam) or 2 (TwoParam: eps0, eps1)
  FluctuationForm fluctuation_form = FluctuationForm::OneParam;
  double ate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  Vec influence_values;
  OutcomeKind outcome_kind = OutcomeKind::Binary;
  EncodingMeta outcome_meta;
  EncodingMeta propensity_meta;
  OutcomeScaling scaling;
  bool propensity_separation = false;
  bool outcome_separation = false;
};

struct ClassicalOptions {
  bool clip_propensity = false;  // optional clip to [0.005, 0.995]
};

// MLE outcome/propensity fits, clever covariates, one fluctuation step, ATE
// with the efficient-influence-curve standard error, ci95 = ate +/- 1.96 se.
// Continuous outcomes are fit on the standardized scale and the ATE/SE are
// reported on the original scale.
ClassicalTmleFit fit_classical(const Dataset& ds, const ModelSpec& outcome_spec,
                               const ModelSpec& propensity_spec,
                               FluctuationForm form,
                               const ClassicalOptions& opts = {});

// Per-row targeted predictions under do(A=a). Binary outcomes on the
// probability scale; continuous on the original outcome scale.
Vec targeted_predict(const ClassicalTmleFit& fit, const Dataset& ds, double a);

std::string classical_fit_json(const ClassicalTmleFit& fit);

}  // namespace btmle
