#include "btmle/classical.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace btmle {

using nlohmann::json;

std::string to_string(FluctuationForm f) {
  return f == FluctuationForm::OneParam ? "one_param" : "two_param";
}

FluctuationForm fluctuation_form_from_string(const std::string& s) {
  if (s == "one_param") return FluctuationForm::OneParam;
  if (s == "two_param") return FluctuationForm::TwoParam;
  throw ConfigError("unknown fluctuation form: " + s);
}

double clever_covariate(double a, double propensity) {
  const double p = clamp_prob(propensity);
  return a == 1.0 ? 1.0 / p : -1.0 / (1.0 - p);
}

std::pair<double, double> clever_covariate_two(double a, double propensity) {
  const double p = clamp_prob(propensity);
  const double h1 = a == 1.0 ? 1.0 / p : 0.0;
  const double h0 = a == 1.0 ? 0.0 : 1.0 / (1.0 - p);
  return {h0, h1};
}

namespace {

double clip_if(double p, bool clip) {
  if (clip) return std::clamp(p, 0.005, 0.995);
  return p;
}

// epsilon * H terms under do(A=a); eps is (eps) or (eps0, eps1).
double fluctuation_shift(const Vec& eps, FluctuationForm form, double a, double p) {
  if (form == FluctuationForm::OneParam)
    return eps[0] * clever_covariate(a, p);
  return a == 1.0 ? eps[1] / clamp_prob(p) : eps[0] / (1.0 - clamp_prob(p));
}

}  // namespace

ClassicalTmleFit fit_classical(const Dataset& ds, const ModelSpec& outcome_spec,
                               const ModelSpec& propensity_spec, FluctuationForm form,
                               const ClassicalOptions& opts) {
  const Eigen::Index d = ds.rows();
  const Eigen::Index treated = ds.treated_count();
  if (treated == 0 || treated == d)
    throw EstimationError("both treatment arms must be present");

  ClassicalTmleFit fit;
  fit.fluctuation_form = form;
  fit.outcome_kind = ds.outcome_kind();
  fit.scaling = outcome_scaling(ds);
  const Vec y = scaled_outcome(ds, fit.scaling);
  const bool binary = ds.outcome_kind() == OutcomeKind::Binary;

  ModelSpec ospec = outcome_spec;
  ospec.role = ModelRole::Outcome;
  ModelSpec pspec = propensity_spec;
  pspec.role = ModelRole::Propensity;
  const DesignMatrix xo = build_design(ds, ospec);
  const DesignMatrix xp = build_design(ds, pspec);
  fit.outcome_meta = xo.meta;
  fit.propensity_meta = xp.meta;

  const MleFit omle = fit_mle(binary ? GlmKind::Logistic : GlmKind::Linear, xo.values, y);
  const MleFit pmle = fit_mle(GlmKind::Logistic, xp.values, ds.treatment());
  fit.theta_outcome = omle.theta;
  fit.theta_propensity = pmle.theta;
  fit.outcome_separation = omle.separation_warning;
  fit.propensity_separation = pmle.separation_warning;

  Vec propensity(d);
  {
    const Vec up = xp.values * pmle.theta;
    for (Eigen::Index i = 0; i < d; ++i)
      propensity[i] = clamp_prob(clip_if(expit(up[i]), opts.clip_propensity));
  }

  const Vec u_obs = xo.values * omle.theta;
  Vec offset(d);
  if (binary) {
    for (Eigen::Index i = 0; i < d; ++i) offset[i] = logit(clamp_prob(expit(u_obs[i])));
  } else {
    offset = u_obs;
  }

  Mat h_obs(d, form == FluctuationForm::OneParam ? 1 : 2);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (form == FluctuationForm::OneParam) {
      h_obs(i, 0) = clever_covariate(ds.treatment()[i], propensity[i]);
    } else {
      const auto [h0, h1] = clever_covariate_two(ds.treatment()[i], propensity[i]);
      h_obs(i, 0) = h0;
      h_obs(i, 1) = h1;
    }
  }

  fit.epsilon = offset_glm_fit(binary ? GlmKind::Logistic : GlmKind::Linear, offset,
                               h_obs, y);

  const Vec u1 = apply_design(ds, xo.meta, 1.0).values * omle.theta;
  const Vec u0 = apply_design(ds, xo.meta, 0.0).values * omle.theta;
  Vec yf1(d), yf0(d), yf_obs(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double p = propensity[i];
    const double s1 = u1[i] + fluctuation_shift(fit.epsilon, form, 1.0, p);
    const double s0 = u0[i] + fluctuation_shift(fit.epsilon, form, 0.0, p);
    const double sobs = offset[i] + fluctuation_shift(fit.epsilon, form,
                                                      ds.treatment()[i], p);
    if (binary) {
      yf1[i] = expit(s1);
      yf0[i] = expit(s0);
      yf_obs[i] = expit(sobs);
    } else {
      yf1[i] = s1;
      yf0[i] = s0;
      yf_obs[i] = sobs;
    }
  }

  const double ate_model = (yf1 - yf0).mean();
  Vec ic(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double h = clever_covariate(ds.treatment()[i], propensity[i]);
    ic[i] = h * (y[i] - yf_obs[i]) + yf1[i] - yf0[i] - ate_model;
  }
  const double ic_sd =
      std::sqrt((ic.array() - ic.mean()).square().sum() / static_cast<double>(d - 1));
  const double se_model = ic_sd / std::sqrt(static_cast<double>(d));

  fit.ate = ate_model * fit.scaling.sd;
  fit.se = se_model * fit.scaling.sd;
  fit.influence_values = ic * fit.scaling.sd;
  fit.ci_low = fit.ate - 1.96 * fit.se;
  fit.ci_high = fit.ate + 1.96 * fit.se;
  return fit;
}

Vec targeted_predict(const ClassicalTmleFit& fit, const Dataset& ds, double a) {
  const Vec u = apply_design(ds, fit.outcome_meta, a).values * fit.theta_outcome;
  const Vec up = apply_design(ds, fit.propensity_meta).values * fit.theta_propensity;
  const bool binary = fit.outcome_kind == OutcomeKind::Binary;
  Vec out(ds.rows());
  for (Eigen::Index i = 0; i < ds.rows(); ++i) {
    const double p = clamp_prob(expit(up[i]));
    double s;
    if (binary) {
      s = logit(clamp_prob(expit(u[i]))) + fluctuation_shift(fit.epsilon, fit.fluctuation_form, a, p);
      out[i] = expit(s);
    } else {
      s = u[i] + fluctuation_shift(fit.epsilon, fit.fluctuation_form, a, p);
      out[i] = s * fit.scaling.sd + fit.scaling.mean;
    }
  }
  return out;
}

std::string classical_fit_json(const ClassicalTmleFit& fit) {
  std::vector<double> eps(fit.epsilon.data(), fit.epsilon.data() + fit.epsilon.size());
  json diag{{"outcome_separation", fit.outcome_separation},
            {"propensity_separation", fit.propensity_separation}};
  json doc{{"method", "classical"},
           {"outcome_kind", to_string(fit.outcome_kind)},
           {"ate", fit.ate},
           {"se", fit.se},
           {"ci95", {fit.ci_low, fit.ci_high}},
           {"epsilon", eps},
           {"fluctuation_form", to_string(fit.fluctuation_form)},
           {"diagnostics", diag}};
  return doc.dump(2);
}

}  // namespace btmle
