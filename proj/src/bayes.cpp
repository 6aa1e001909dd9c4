#include "btmle/bayes.hpp"

#include "btmle/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "btmle/rng.hpp"

namespace btmle {

using nlohmann::json;

std::string to_string(BayesMethod m) {
  switch (m) {
    case BayesMethod::BTmleM: return "btmle_m";
    case BayesMethod::BTmleSS: return "btmle_ss";
    case BayesMethod::BnTmle1p: return "bn_tmle_1p";
    case BayesMethod::BnTmle2p: return "bn_tmle_2p";
  }
  return "bn_tmle_1p";
}

BayesMethod bayes_method_from_string(const std::string& s) {
  if (s == "btmle_m") return BayesMethod::BTmleM;
  if (s == "btmle_ss") return BayesMethod::BTmleSS;
  if (s == "bn_tmle_1p") return BayesMethod::BnTmle1p;
  if (s == "bn_tmle_2p") return BayesMethod::BnTmle2p;
  throw ConfigError("unknown Bayesian method: " + s);
}

namespace {

// Central order-statistic quantile (nearest rank).
double order_stat(const std::vector<double>& sorted, double q) {
  const auto m = static_cast<long long>(sorted.size());
  long long idx = static_cast<long long>(std::ceil(q * static_cast<double>(m))) - 1;
  idx = std::clamp<long long>(idx, 0, m - 1);
  return sorted[static_cast<std::size_t>(idx)];
}

constexpr double kSqrt2Pi = 2.5066282746310005024157652848110;

}  // namespace

AteDistribution ate_distribution_from_samples(Vec samples) {
  const Eigen::Index m = samples.size();
  if (m < 2) throw EstimationError("ATE distribution needs at least 2 samples");

  AteDistribution dist;
  dist.samples = std::move(samples);
  dist.mean = dist.samples.mean();

  std::vector<double> sorted(dist.samples.data(), dist.samples.data() + m);
  std::sort(sorted.begin(), sorted.end());
  dist.ci_low = order_stat(sorted, 0.025);
  dist.ci_high = order_stat(sorted, 0.975);

  const double sd = std::sqrt((dist.samples.array() - dist.mean).square().sum() /
                              static_cast<double>(m - 1));
  const double iqr = order_stat(sorted, 0.75) - order_stat(sorted, 0.25);
  // Silverman bandwidth; IQR guards against heavy tails, sd against ties
  double spread = sd;
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  double h = 0.9 * spread * std::pow(static_cast<double>(m), -0.2);
  const double floor = 1e-9 * std::max(1.0, std::abs(dist.mean));
  if (!(h > floor)) h = floor;

  const int n_grid = 512;
  const double half_span = sd > 0.0 ? 4.0 * sd : 4.0 * h;
  dist.kde_x.resize(n_grid);
  dist.kde_density.resize(n_grid);
  const double x0 = dist.mean - half_span;
  const double dx = 2.0 * half_span / static_cast<double>(n_grid - 1);
  for (int k = 0; k < n_grid; ++k) {
    const double x = x0 + dx * k;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double z = (x - dist.samples[j]) / h;
      acc += std::exp(-0.5 * z * z);
    }
    dist.kde_x[k] = x;
    dist.kde_density[k] = acc / (static_cast<double>(m) * h * kSqrt2Pi);
  }
  return dist;
}

AteDistribution ate_distribution(const PredictionMatrix& yf_treated,
                                 const PredictionMatrix& yf_control) {
  if (yf_treated.values.rows() != yf_control.values.rows() ||
      yf_treated.values.cols() != yf_control.values.cols())
    throw EstimationError("targeted prediction matrices have mismatched shapes");
  const Eigen::Index m = yf_treated.values.cols();
  Vec samples(m);
  for (Eigen::Index j = 0; j < m; ++j)
    samples[j] = yf_treated.values.col(j).mean() - yf_control.values.col(j).mean();
  return ate_distribution_from_samples(std::move(samples));
}

// ---------------------------------------------------------------------------
// shared preprocessing and prediction machinery

namespace {

constexpr std::uint64_t kSeedOutcome = 11;
constexpr std::uint64_t kSeedPropensity = 12;
constexpr std::uint64_t kSeedFluctuation = 13;
constexpr std::uint64_t kSeedJoint = 14;
constexpr std::uint64_t kSeedSubsample = 16;

struct Prepared {
  DesignMatrix xo;  // outcome design at observed A
  DesignMatrix xp;  // propensity design
  Mat xo1;          // outcome design values under do(A=1)
  Mat xo0;
  Vec y;            // model-scale outcome
  OutcomeScaling scaling;
};

Prepared prepare(const Dataset& ds, ModelSpec outcome_spec, ModelSpec propensity_spec) {
  outcome_spec.role = ModelRole::Outcome;
  propensity_spec.role = ModelRole::Propensity;
  Prepared prep;
  prep.xo = build_design(ds, outcome_spec);
  prep.xp = build_design(ds, propensity_spec);
  prep.xo1 = apply_design(ds, prep.xo.meta, 1.0).values;
  prep.xo0 = apply_design(ds, prep.xo.meta, 0.0).values;
  prep.scaling = outcome_scaling(ds);
  prep.y = scaled_outcome(ds, prep.scaling);
  return prep;
}

void check_both_arms(const Dataset& ds) {
  const Eigen::Index t = ds.treated_count();
  if (t == 0 || t == ds.rows())
    throw EstimationError("both treatment arms must be present");
}

SamplerConfig stage_config(const SamplerConfig& base, std::uint64_t tag) {
  SamplerConfig cfg = base;
  cfg.seed = derive_seed(base.seed, tag);
  return cfg;
}

// Row statistics of the initial-outcome and clever-covariate draws at the
// observed treatments, accumulated draw-block-wise so the d x m matrices are
// never materialized.
struct ObservedStats {
  Vec mean_value;  // binary: mean probability; continuous: mean prediction
  Vec mean_logit;  // binary only
  Vec sd_logit;
  Vec sd_value;    // continuous only
  Vec mean_h;
  Vec sd_h;
  Vec mean_h0;     // TwoParam row means
  Vec mean_h1;
  Eigen::Index m = 0;
};

constexpr Eigen::Index kDrawBlock = 256;

ObservedStats observed_stats(const Mat& theta_y, const Mat& theta_a, const Mat& xo,
                             const Mat& xp, const Vec& a, OutcomeKind kind,
                             bool want_two_param) {
  const Eigen::Index d = xo.rows();
  const Eigen::Index m = theta_y.rows();
  ObservedStats st;
  st.m = m;
  Vec sum_val = Vec::Zero(d), sum_logit = Vec::Zero(d), ss_logit = Vec::Zero(d);
  Vec ss_val = Vec::Zero(d), sum_h = Vec::Zero(d), ss_h = Vec::Zero(d);
  Vec sum_h0 = Vec::Zero(d), sum_h1 = Vec::Zero(d);

  for (Eigen::Index j0 = 0; j0 < m; j0 += kDrawBlock) {
    const Eigen::Index nb = std::min(kDrawBlock, m - j0);
    const Mat u = xo * theta_y.middleRows(j0, nb).transpose();   // d x nb
    const Mat up = xp * theta_a.middleRows(j0, nb).transpose();  // d x nb
    for (Eigen::Index jj = 0; jj < nb; ++jj) {
      for (Eigen::Index i = 0; i < d; ++i) {
        const double p = clamp_prob(expit(up(i, jj)));
        const double h = clever_covariate(a[i], p);
        sum_h[i] += h;
        ss_h[i] += h * h;
        if (want_two_param) {
          const auto [h0, h1] = clever_covariate_two(a[i], p);
          sum_h0[i] += h0;
          sum_h1[i] += h1;
        }
        if (kind == OutcomeKind::Binary) {
          const double prob = clamp_prob(expit(u(i, jj)));
          const double lg = logit(prob);
          sum_val[i] += prob;
          sum_logit[i] += lg;
          ss_logit[i] += lg * lg;
        } else {
          const double v = u(i, jj);
          sum_val[i] += v;
          ss_val[i] += v * v;
        }
      }
    }
  }

  const double dm = static_cast<double>(m);
  auto finish_sd = [dm](const Vec& sum, const Vec& ss) -> Vec {
    if (dm < 2.0) return Vec::Zero(sum.size());
    Vec var = (ss.array() - sum.array().square() / dm) / (dm - 1.0);
    return var.array().max(0.0).sqrt().matrix();
  };
  st.mean_value = sum_val / dm;
  st.mean_h = sum_h / dm;
  st.sd_h = finish_sd(sum_h, ss_h);
  if (kind == OutcomeKind::Binary) {
    st.mean_logit = sum_logit / dm;
    st.sd_logit = finish_sd(sum_logit, ss_logit);
  } else {
    st.sd_value = finish_sd(sum_val, ss_val);
  }
  if (want_two_param) {
    st.mean_h0 = sum_h0 / dm;
    st.mean_h1 = sum_h1 / dm;
  }
  return st;
}

struct EpsilonDraws {
  const Vec* eps = nullptr;   // OneParam
  const Vec* eps0 = nullptr;  // TwoParam
  const Vec* eps1 = nullptr;
};

// Targeted predictions under both interventions, streamed over draw blocks.
// `samples` receives the per-draw ATE; the matrices are filled only when
// keep is true. Theta and epsilon draw counts may differ (indices wrap),
// which the single-draw degenerate paths rely on.
void targeted_samples(const Mat& theta_y, const Mat& theta_a, const EpsilonDraws& ed,
                      FluctuationForm form, const Mat& xo1, const Mat& xo0,
                      const Mat& xp, OutcomeKind kind, const OutcomeScaling& sc,
                      Eigen::Index m, bool keep, Vec& samples, Mat* yf1, Mat* yf0) {
  const Eigen::Index d = xo1.rows();
  const Eigen::Index mt = theta_y.rows();
  samples.resize(m);
  if (keep) {
    yf1->resize(d, m);
    yf0->resize(d, m);
  }
  Mat th_y_chunk, th_a_chunk;
  Vec s1(d), s0(d);

  for (Eigen::Index j0 = 0; j0 < m; j0 += kDrawBlock) {
    const Eigen::Index nb = std::min(kDrawBlock, m - j0);
    th_y_chunk.resize(nb, theta_y.cols());
    th_a_chunk.resize(nb, theta_a.cols());
    for (Eigen::Index jj = 0; jj < nb; ++jj) {
      th_y_chunk.row(jj) = theta_y.row((j0 + jj) % mt);
      th_a_chunk.row(jj) = theta_a.row((j0 + jj) % mt);
    }
    const Mat u1 = xo1 * th_y_chunk.transpose();  // d x nb
    const Mat u0 = xo0 * th_y_chunk.transpose();
    const Mat up = xp * th_a_chunk.transpose();

    for (Eigen::Index jj = 0; jj < nb; ++jj) {
      const Eigen::Index j = j0 + jj;
      double e = 0.0, e0 = 0.0, e1 = 0.0;
      if (form == FluctuationForm::OneParam) {
        e = (*ed.eps)[j % ed.eps->size()];
      } else {
        e0 = (*ed.eps0)[j % ed.eps0->size()];
        e1 = (*ed.eps1)[j % ed.eps1->size()];
      }
      for (Eigen::Index i = 0; i < d; ++i) {
        const double p = clamp_prob(expit(up(i, jj)));
        double f1, f0;
        if (form == FluctuationForm::OneParam) {
          f1 = e / p;          // epsilon * H(1, x)
          f0 = -e / (1.0 - p); // epsilon * H(0, x)
        } else {
          f1 = e1 / p;          // epsilon_1 * H_1 under do(A=1)
          f0 = e0 / (1.0 - p);  // epsilon_0 * H_0 under do(A=0)
        }
        if (kind == OutcomeKind::Binary) {
          s1[i] = expit(u1(i, jj) + f1);
          s0[i] = expit(u0(i, jj) + f0);
        } else {
          s1[i] = (u1(i, jj) + f1) * sc.sd + sc.mean;
          s0[i] = (u0(i, jj) + f0) * sc.sd + sc.mean;
        }
      }
      samples[j] = s1.mean() - s0.mean();
      if (keep) {
        yf1->col(j) = s1;
        yf0->col(j) = s0;
      }
    }
  }
}

SamplerDiagnostics merge_diagnostics(std::initializer_list<const SamplerDiagnostics*> parts) {
  SamplerDiagnostics out;
  double accept = 0.0;
  int n = 0;
  for (const auto* p : parts) {
    for (const auto& [k, v] : p->split_rhat) out.split_rhat[k] = v;
    out.divergences += p->divergences;
    out.max_depth_hits += p->max_depth_hits;
    accept += p->mean_accept;
    ++n;
    out.warnings.insert(out.warnings.end(), p->warnings.begin(), p->warnings.end());
  }
  out.mean_accept = n > 0 ? accept / n : 0.0;
  return out;
}

double std_normal_logpdf(double x) { return -0.5 * kLog2Pi - 0.5 * x * x; }

double normal_logpdf(double x, double sd) {
  return -0.5 * kLog2Pi - std::log(sd) - 0.5 * x * x / (sd * sd);
}

}  // namespace

// ---------------------------------------------------------------------------
// sequential stages

PosteriorDraws fit_bayes_outcome(const Dataset& ds, const ModelSpec& spec,
                                 const SamplerConfig& config) {
  ModelSpec s = spec;
  s.role = ModelRole::Outcome;
  const DesignMatrix dm = build_design(ds, s);
  const OutcomeScaling sc = outcome_scaling(ds);
  const Vec y = scaled_outcome(ds, sc);
  LogDensityModel model =
      ds.outcome_kind() == OutcomeKind::Binary
          ? logistic_log_density(dm.values, y, s.prior_scale, "theta_Y")
          : linear_log_density(dm.values, y, s.prior_scale, s.error_sd_prior_scale,
                               "theta_Y", "sigma_xi");
  return sample(model, config);
}

PosteriorDraws fit_bayes_propensity(const Dataset& ds, const ModelSpec& spec,
                                    const SamplerConfig& config) {
  ModelSpec s = spec;
  s.role = ModelRole::Propensity;
  const DesignMatrix dm = build_design(ds, s);
  LogDensityModel model =
      logistic_log_density(dm.values, ds.treatment(), s.prior_scale, "theta_A");
  return sample(model, config);
}

std::pair<PredictionMatrix, PredictionMatrix> predict_matrices(
    const PosteriorDraws& outcome_draws, const PosteriorDraws& propensity_draws,
    const Dataset& ds, const EncodingMeta& outcome_meta,
    const EncodingMeta& propensity_meta, double a, OutcomeKind kind) {
  const Mat& theta_y = outcome_draws.block("theta_Y");
  const Mat& theta_a = propensity_draws.block("theta_A");
  if (theta_y.rows() != theta_a.rows())
    throw EstimationError("outcome and propensity draw counts differ");
  const Mat xo = apply_design(ds, outcome_meta, a).values;
  const Mat xp = apply_design(ds, propensity_meta).values;
  const Eigen::Index d = xo.rows();
  const Eigen::Index m = theta_y.rows();

  PredictionMatrix y_init{Mat(d, m), PredictionKind::InitialOutcome};
  PredictionMatrix h{Mat(d, m), PredictionKind::CleverCovariate};

  for (Eigen::Index j0 = 0; j0 < m; j0 += kDrawBlock) {
    const Eigen::Index nb = std::min(kDrawBlock, m - j0);
    const Mat u = xo * theta_y.middleRows(j0, nb).transpose();
    const Mat up = xp * theta_a.middleRows(j0, nb).transpose();
    for (Eigen::Index jj = 0; jj < nb; ++jj) {
      for (Eigen::Index i = 0; i < d; ++i) {
        const double p = clamp_prob(expit(up(i, jj)));
        h.values(i, j0 + jj) = clever_covariate(a, p);
        y_init.values(i, j0 + jj) =
            kind == OutcomeKind::Binary ? clamp_prob(expit(u(i, jj))) : u(i, jj);
      }
    }
  }
  return {std::move(y_init), std::move(h)};
}

PredictionMatrix do_predict(const DoPredictContext& ctx, const Dataset& ds, double a) {
  const Mat& theta_y = ctx.draws.block("theta_Y");
  const Mat& theta_a = ctx.draws.block("theta_A");
  EpsilonDraws ed;
  Vec eps_col, eps0_col, eps1_col;
  if (ctx.form == FluctuationForm::OneParam) {
    eps_col = ctx.draws.block("epsilon").col(0);
    ed.eps = &eps_col;
  } else {
    eps0_col = ctx.draws.block("epsilon0").col(0);
    eps1_col = ctx.draws.block("epsilon1").col(0);
    ed.eps0 = &eps0_col;
    ed.eps1 = &eps1_col;
  }
  const Mat xo1 = apply_design(ds, ctx.outcome_meta, 1.0).values;
  const Mat xo0 = apply_design(ds, ctx.outcome_meta, 0.0).values;
  const Mat xp = apply_design(ds, ctx.propensity_meta).values;
  const Eigen::Index m =
      std::max<Eigen::Index>(theta_y.rows(), ctx.form == FluctuationForm::OneParam
                                                 ? eps_col.size()
                                                 : eps1_col.size());
  Vec samples;
  Mat yf1, yf0;
  targeted_samples(theta_y, theta_a, ed, ctx.form, xo1, xo0, xp, ctx.outcome_kind,
                   ctx.scaling, m, true, samples, &yf1, &yf0);
  PredictionMatrix out;
  out.kind = PredictionKind::TargetedOutcome;
  out.values = (a == 1.0) ? std::move(yf1) : std::move(yf0);
  return out;
}

// ---------------------------------------------------------------------------
// fluctuation-stage and joint models

namespace models {

LogDensityModel mean_fluct_binary(const Vec& offset, const Mat& hbar, const Vec& y,
                                  double eps_scale) {
  const int k = static_cast<int>(hbar.cols());
  LogDensityModel model;
  model.dim = k;
  if (k == 1) {
    model.blocks = {{"epsilon", 0, 1, Transform::Identity}};
  } else {
    model.blocks = {{"epsilon0", 0, 1, Transform::Identity},
                    {"epsilon1", 1, 1, Transform::Identity}};
  }
  model.eval = [offset, hbar, y, k, eps_scale](const Vec& eps, Vec* grad) -> double {
    const Vec u = offset + hbar * eps;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) ll += y[i] * u[i] - softplus(u[i]);
    for (int t = 0; t < k; ++t) ll += normal_logpdf(eps[t], eps_scale);
    if (grad) {
      Vec mu(u.size());
      for (Eigen::Index i = 0; i < u.size(); ++i) mu[i] = expit(u[i]);
      *grad = hbar.transpose() * (y - mu) - eps / (eps_scale * eps_scale);
    }
    return ll;
  };
  return model;
}

LogDensityModel mean_fluct_continuous(const Vec& ybar, const Mat& hbar, const Vec& y,
                                      double sd_prior_scale, double eps_scale) {
  const int k = static_cast<int>(hbar.cols());
  const double d = static_cast<double>(y.size());
  LogDensityModel model;
  model.dim = k + 1;
  if (k == 1) {
    model.blocks = {{"epsilon", 0, 1, Transform::Identity},
                    {"sigma_f", 1, 1, Transform::Log}};
  } else {
    model.blocks = {{"epsilon0", 0, 1, Transform::Identity},
                    {"epsilon1", 1, 1, Transform::Identity},
                    {"sigma_f", 2, 1, Transform::Log}};
  }
  model.eval = [ybar, hbar, y, k, d, sd_prior_scale, eps_scale](const Vec& params,
                                                                Vec* grad) -> double {
    const Vec eps = params.head(k);
    const double log_sigma = params[k];
    const double sigma = std::exp(log_sigma);
    const double s2 = sigma * sigma;
    const Vec resid = y - ybar - hbar * eps;
    const double rss = resid.squaredNorm();
    double ll = -0.5 * d * kLog2Pi - d * log_sigma - 0.5 * rss / s2;
    for (int t = 0; t < k; ++t) ll += normal_logpdf(eps[t], eps_scale);
    ll += 0.5 * std::log(2.0 / 3.14159265358979323846) - std::log(sd_prior_scale) -
          0.5 * s2 / (sd_prior_scale * sd_prior_scale) + log_sigma;
    if (grad) {
      grad->resize(k + 1);
      grad->head(k) = hbar.transpose() * resid / s2 - eps / (eps_scale * eps_scale);
      (*grad)[k] = -d + rss / s2 - s2 / (sd_prior_scale * sd_prior_scale) + 1.0;
    }
    return ll;
  };
  return model;
}

// B-TMLE-SS joint model over (epsilon [, log sigma_f], latent initial
// outcomes, latent clever covariates), non-centered.
LogDensityModel ss_fluct(const Vec& mu_y, const Vec& sd_y, const Vec& mu_h,
                         const Vec& sd_h, const Vec& y, OutcomeKind kind,
                         double sd_prior_scale, double eps_scale) {
  const int d = static_cast<int>(y.size());
  const bool cont = kind == OutcomeKind::Continuous;
  const int scale_dim = cont ? 1 : 0;
  LogDensityModel model;
  model.dim = 1 + scale_dim + 2 * d;
  model.blocks = {{"epsilon", 0, 1, Transform::Identity}};
  if (cont) model.blocks.push_back({"sigma_f", 1, 1, Transform::Log});
  model.blocks.push_back({"y_init_latent", 1 + scale_dim, d, Transform::Identity});
  model.blocks.push_back({"h_latent", 1 + scale_dim + d, d, Transform::Identity});

  model.eval = [mu_y, sd_y, mu_h, sd_h, y, d, cont, sd_prior_scale, eps_scale](
                   const Vec& params, Vec* grad) -> double {
    const double eps = params[0];
    const int off = cont ? 2 : 1;
    const double log_sigma = cont ? params[1] : 0.0;
    const double sigma = std::exp(log_sigma);
    const double s2 = sigma * sigma;
    const auto z = params.segment(off, d);
    const auto w = params.segment(off + d, d);

    const Vec lat_y = mu_y.array() + sd_y.array() * z.array();
    const Vec lat_h = mu_h.array() + sd_h.array() * w.array();
    const Vec u = lat_y + eps * lat_h;

    double ll = normal_logpdf(eps, eps_scale);
    ll += -0.5 * kLog2Pi * 2.0 * d - 0.5 * z.squaredNorm() - 0.5 * w.squaredNorm();
    Vec r(d);
    if (cont) {
      const Vec resid = y - u;
      const double rss = resid.squaredNorm();
      ll += -0.5 * d * kLog2Pi - d * log_sigma - 0.5 * rss / s2;
      ll += 0.5 * std::log(2.0 / 3.14159265358979323846) - std::log(sd_prior_scale) -
            0.5 * s2 / (sd_prior_scale * sd_prior_scale) + log_sigma;
      if (grad) r = resid / s2;
    } else {
      for (int i = 0; i < d; ++i) ll += y[i] * u[i] - softplus(u[i]);
      if (grad)
        for (int i = 0; i < d; ++i) r[i] = y[i] - expit(u[i]);
    }
    if (grad) {
      grad->resize(params.size());
      (*grad)[0] = lat_h.dot(r) - eps / (eps_scale * eps_scale);
      if (cont) {
        const double rss = (y - u).squaredNorm();
        (*grad)[1] = -d + rss / s2 - s2 / (sd_prior_scale * sd_prior_scale) + 1.0;
      }
      grad->segment(off, d) = (sd_y.array() * r.array() - z.array()).matrix();
      grad->segment(off + d, d) = (eps * sd_h.array() * r.array() - w.array()).matrix();
    }
    return ll;
  };
  return model;
}

// BN-TMLE joint model: treatment, outcome-vs-initial, and outcome-vs-targeted
// likelihood factors per row (the duplicated-outcome construction), with
// standard Gaussian priors throughout.
LogDensityModel bn_tmle(const Mat& xo, const Mat& xp, const Vec& a, const Vec& y,
                        OutcomeKind kind, FluctuationForm form, double prior_scale,
                        double sd_prior_scale, double eps_scale) {
  const int qy = static_cast<int>(xo.cols());
  const int qa = static_cast<int>(xp.cols());
  const int ke = form == FluctuationForm::OneParam ? 1 : 2;
  const bool cont = kind == OutcomeKind::Continuous;
  const int d = static_cast<int>(y.size());

  LogDensityModel model;
  model.dim = qy + qa + ke + (cont ? 2 : 0);
  model.blocks = {{"theta_Y", 0, qy, Transform::Identity},
                  {"theta_A", qy, qa, Transform::Identity}};
  if (ke == 1) {
    model.blocks.push_back({"epsilon", qy + qa, 1, Transform::Identity});
  } else {
    model.blocks.push_back({"epsilon0", qy + qa, 1, Transform::Identity});
    model.blocks.push_back({"epsilon1", qy + qa + 1, 1, Transform::Identity});
  }
  if (cont) {
    model.blocks.push_back({"sigma_o", qy + qa + ke, 1, Transform::Log});
    model.blocks.push_back({"sigma_f", qy + qa + ke + 1, 1, Transform::Log});
  }

  model.eval = [xo, xp, a, y, qy, qa, ke, cont, d, prior_scale, sd_prior_scale,
                eps_scale](const Vec& params, Vec* grad) -> double {
    const Vec theta_y = params.head(qy);
    const Vec theta_a = params.segment(qy, qa);
    const double e0 = params[qy + qa];  // unused when ke == 1
    const double e1 = ke == 1 ? params[qy + qa] : params[qy + qa + 1];
    const double log_so = cont ? params[qy + qa + ke] : 0.0;
    const double log_sf = cont ? params[qy + qa + ke + 1] : 0.0;
    const double so = std::exp(log_so), sf = std::exp(log_sf);
    const double so2 = so * so, sf2 = sf * sf;

    const Vec uo = xo * theta_y;
    const Vec up = xp * theta_a;

    double ll = 0.0;
    Vec r_out(d), w_prop(d);
    double g_e0 = 0.0, g_e1 = 0.0, rss_f = 0.0;

    for (int i = 0; i < d; ++i) {
      const double eta = expit(up[i]);
      ll += a[i] * up[i] - softplus(up[i]);  // treatment factor

      const bool treated = a[i] == 1.0;
      const double h1 = treated ? 1.0 / eta : 0.0;
      const double h0 = treated ? 0.0 : 1.0 / (1.0 - eta);
      const double fluct = (ke == 1) ? e1 * (h1 - h0) : e1 * h1 + e0 * h0;
      const double s = uo[i] + fluct;

      double ro, rf;
      if (cont) {
        const double res_o = y[i] - uo[i];
        const double res_f = y[i] - s;
        ll += -0.5 * kLog2Pi - log_so - 0.5 * res_o * res_o / so2;
        ll += -0.5 * kLog2Pi - log_sf - 0.5 * res_f * res_f / sf2;
        ro = res_o / so2;
        rf = res_f / sf2;
        rss_f += res_f * res_f;
      } else {
        ll += y[i] * uo[i] - softplus(uo[i]);  // outcome-vs-initial factor
        ll += y[i] * s - softplus(s);          // outcome-vs-targeted factor
        ro = y[i] - expit(uo[i]);
        rf = y[i] - expit(s);
      }
      if (grad) {
        r_out[i] = ro + rf;
        // chain rule through H(a, expit(up)); ke == 1 uses e1 for epsilon
        double dflucdup;
        if (treated) {
          dflucdup = -e1 * (1.0 - eta) / eta;
        } else {
          dflucdup = (ke == 1 ? -e1 : e0) * eta / (1.0 - eta);
        }
        w_prop[i] = (a[i] - eta) + rf * dflucdup;
        if (ke == 1) {
          g_e1 += rf * (h1 - h0);
        } else {
          g_e0 += rf * h0;
          g_e1 += rf * h1;
        }
      }
    }

    const double ps2 = prior_scale * prior_scale;
    const double es2 = eps_scale * eps_scale;
    ll += -0.5 * theta_y.squaredNorm() / ps2 - qy * (0.5 * kLog2Pi + std::log(prior_scale));
    ll += -0.5 * theta_a.squaredNorm() / ps2 - qa * (0.5 * kLog2Pi + std::log(prior_scale));
    ll += normal_logpdf(e1, eps_scale);
    if (ke == 2) ll += normal_logpdf(e0, eps_scale);
    if (cont) {
      const double hn = 0.5 * std::log(2.0 / 3.14159265358979323846);
      ll += hn - std::log(sd_prior_scale) - 0.5 * so2 / (sd_prior_scale * sd_prior_scale) +
            log_so;
      ll += hn - std::log(sd_prior_scale) - 0.5 * sf2 / (sd_prior_scale * sd_prior_scale) +
            log_sf;
    }

    if (grad) {
      grad->resize(params.size());
      grad->head(qy) = xo.transpose() * r_out - theta_y / ps2;
      grad->segment(qy, qa) = xp.transpose() * w_prop - theta_a / ps2;
      if (ke == 1) {
        (*grad)[qy + qa] = g_e1 - e1 / es2;
      } else {
        (*grad)[qy + qa] = g_e0 - e0 / es2;
        (*grad)[qy + qa + 1] = g_e1 - e1 / es2;
      }
      if (cont) {
        double rss_o = (y - uo).squaredNorm();
        (*grad)[qy + qa + ke] =
            -d + rss_o / so2 - so2 / (sd_prior_scale * sd_prior_scale) + 1.0;
        (*grad)[qy + qa + ke + 1] =
            -d + rss_f / sf2 - sf2 / (sd_prior_scale * sd_prior_scale) + 1.0;
      }
    }
    return ll;
  };
  return model;
}

}  // namespace models

namespace {

BayesTmleResult finalize_result(BayesMethod method, const Dataset& ds,
                                const BayesOptions& opts, PosteriorDraws draws,
                                const Mat& theta_y, const Mat& theta_a,
                                const Prepared& prep, FluctuationForm form) {
  BayesTmleResult res;
  res.method = method;
  res.outcome_kind = ds.outcome_kind();

  EpsilonDraws ed;
  Vec eps_col, eps0_col, eps1_col;
  Eigen::Index m_eps;
  if (form == FluctuationForm::OneParam) {
    eps_col = draws.block("epsilon").col(0);
    ed.eps = &eps_col;
    m_eps = eps_col.size();
  } else {
    eps0_col = draws.block("epsilon0").col(0);
    eps1_col = draws.block("epsilon1").col(0);
    ed.eps0 = &eps0_col;
    ed.eps1 = &eps1_col;
    m_eps = eps1_col.size();
  }
  const Eigen::Index m = std::max<Eigen::Index>(theta_y.rows(), m_eps);
  const bool keep =
      static_cast<long long>(ds.rows()) * static_cast<long long>(m) <=
      opts.keep_prediction_entries;

  Vec samples;
  Mat yf1, yf0;
  targeted_samples(theta_y, theta_a, ed, form, prep.xo1, prep.xo0, prep.xp.values,
                   ds.outcome_kind(), prep.scaling, m, keep, samples, &yf1, &yf0);
  if (keep) {
    res.yf_treated = PredictionMatrix{std::move(yf1), PredictionKind::TargetedOutcome};
    res.yf_control = PredictionMatrix{std::move(yf0), PredictionKind::TargetedOutcome};
  }
  res.ate = ate_distribution_from_samples(std::move(samples));
  res.warnings = draws.diagnostics.warnings;
  res.draws = std::move(draws);
  return res;
}

}  // namespace

// ---------------------------------------------------------------------------
// estimators

namespace {

PosteriorDraws stage_outcome(const Dataset& ds, const BayesOptions& opts) {
  if (opts.outcome_draws) return *opts.outcome_draws;
  return fit_bayes_outcome(ds, opts.outcome_spec, stage_config(opts.sampler, kSeedOutcome));
}

PosteriorDraws stage_propensity(const Dataset& ds, const BayesOptions& opts) {
  if (opts.propensity_draws) return *opts.propensity_draws;
  return fit_bayes_propensity(ds, opts.propensity_spec,
                              stage_config(opts.sampler, kSeedPropensity));
}

}  // namespace

BayesTmleResult fit_btmle_m(const Dataset& ds, const BayesOptions& opts) {
  check_both_arms(ds);
  const Prepared prep = prepare(ds, opts.outcome_spec, opts.propensity_spec);
  PosteriorDraws odraws = stage_outcome(ds, opts);
  PosteriorDraws pdraws = stage_propensity(ds, opts);

  const bool two = opts.fluctuation == FluctuationForm::TwoParam;
  const ObservedStats st =
      observed_stats(odraws.block("theta_Y"), pdraws.block("theta_A"), prep.xo.values,
                     prep.xp.values, ds.treatment(), ds.outcome_kind(), two);

  Mat hbar(ds.rows(), two ? 2 : 1);
  if (two) {
    hbar.col(0) = st.mean_h0;
    hbar.col(1) = st.mean_h1;
  } else {
    hbar.col(0) = st.mean_h;
  }

  LogDensityModel fluct;
  if (ds.outcome_kind() == OutcomeKind::Binary) {
    Vec offset(ds.rows());
    for (Eigen::Index i = 0; i < ds.rows(); ++i)
      offset[i] = logit(clamp_prob(st.mean_value[i]));
    fluct = models::mean_fluct_binary(offset, hbar, prep.y, opts.epsilon_prior_scale);
  } else {
    fluct = models::mean_fluct_continuous(st.mean_value, hbar, prep.y,
                                  opts.outcome_spec.error_sd_prior_scale,
                                  opts.epsilon_prior_scale);
  }
  PosteriorDraws fdraws = sample(fluct, stage_config(opts.sampler, kSeedFluctuation));

  const Mat theta_y = odraws.block("theta_Y");
  const Mat theta_a = pdraws.block("theta_A");
  const Eigen::Index m_expected = fdraws.n_draws();
  PosteriorDraws merged;
  merged.n_chains = opts.sampler.n_chains;
  merged.n_draws_per_chain = opts.sampler.n_draws;
  merged.diagnostics = merge_diagnostics(
      {&odraws.diagnostics, &pdraws.diagnostics, &fdraws.diagnostics});
  // injected stage posteriors may carry a different draw count; keep the
  // result's blocks at one common m
  for (auto& [k, v] : odraws.blocks)
    if (v.rows() == m_expected) merged.blocks.emplace(k, std::move(v));
  for (auto& [k, v] : pdraws.blocks)
    if (v.rows() == m_expected) merged.blocks.emplace(k, std::move(v));
  for (auto& [k, v] : fdraws.blocks) merged.blocks.emplace(k, std::move(v));

  return finalize_result(BayesMethod::BTmleM, ds, opts, std::move(merged), theta_y,
                         theta_a, prep, opts.fluctuation);
}

BayesTmleResult fit_btmle_ss(const Dataset& ds, const BayesOptions& opts) {
  check_both_arms(ds);
  const Prepared prep = prepare(ds, opts.outcome_spec, opts.propensity_spec);
  PosteriorDraws odraws = stage_outcome(ds, opts);
  PosteriorDraws pdraws = stage_propensity(ds, opts);

  const ObservedStats st =
      observed_stats(odraws.block("theta_Y"), pdraws.block("theta_A"), prep.xo.values,
                     prep.xp.values, ds.treatment(), ds.outcome_kind(), false);

  const bool binary = ds.outcome_kind() == OutcomeKind::Binary;
  Vec mu_y = binary ? st.mean_logit : st.mean_value;
  Vec sd_y = (binary ? st.sd_logit : st.sd_value).array().max(1e-6).matrix();
  Vec mu_h = st.mean_h;
  Vec sd_h = st.sd_h.array().max(1e-6).matrix();
  Vec y_rows = prep.y;

  std::vector<std::string> extra_warnings;
  if (ds.rows() > opts.ss_row_cap) {
    // documented fallback: the latent stage runs on a seeded subsample
    Rng rng(derive_seed(opts.sampler.seed, kSeedSubsample));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(ds.rows()));
    for (Eigen::Index i = 0; i < ds.rows(); ++i) idx[static_cast<std::size_t>(i)] = i;
    for (Eigen::Index i = 0; i < opts.ss_row_cap; ++i) {
      const auto j = static_cast<Eigen::Index>(
          i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(ds.rows() - i))));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(opts.ss_row_cap));
    std::sort(idx.begin(), idx.end());
    auto take = [&idx](const Vec& v) {
      Vec out(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = v[idx[i]];
      return out;
    };
    mu_y = take(mu_y);
    sd_y = take(sd_y);
    mu_h = take(mu_h);
    sd_h = take(sd_h);
    y_rows = take(y_rows);
    extra_warnings.push_back("latent fluctuation stage subsampled to " +
                             std::to_string(opts.ss_row_cap) + " of " +
                             std::to_string(ds.rows()) + " rows");
  }

  LogDensityModel joint = models::ss_fluct(mu_y, sd_y, mu_h, sd_h, y_rows,
                                         ds.outcome_kind(),
                                         opts.outcome_spec.error_sd_prior_scale,
                                         opts.epsilon_prior_scale);
  PosteriorDraws jdraws = sample(joint, stage_config(opts.sampler, kSeedJoint));
  // latent blocks are only needed for diagnostics; drop them to keep results small
  jdraws.blocks.erase("y_init_latent");
  jdraws.blocks.erase("h_latent");

  const Mat theta_y = odraws.block("theta_Y");
  const Mat theta_a = pdraws.block("theta_A");
  const Eigen::Index m_expected = jdraws.n_draws();
  PosteriorDraws merged;
  merged.n_chains = opts.sampler.n_chains;
  merged.n_draws_per_chain = opts.sampler.n_draws;
  merged.diagnostics = merge_diagnostics(
      {&odraws.diagnostics, &pdraws.diagnostics, &jdraws.diagnostics});
  for (auto& w : extra_warnings) merged.diagnostics.warnings.push_back(w);
  for (auto& [k, v] : odraws.blocks)
    if (v.rows() == m_expected) merged.blocks.emplace(k, std::move(v));
  for (auto& [k, v] : pdraws.blocks)
    if (v.rows() == m_expected) merged.blocks.emplace(k, std::move(v));
  for (auto& [k, v] : jdraws.blocks) merged.blocks.emplace(k, std::move(v));

  return finalize_result(BayesMethod::BTmleSS, ds, opts, std::move(merged), theta_y,
                         theta_a, prep, FluctuationForm::OneParam);
}

BayesTmleResult fit_bn_tmle(const Dataset& ds, const BayesOptions& opts,
                            FluctuationForm form) {
  check_both_arms(ds);
  const Prepared prep = prepare(ds, opts.outcome_spec, opts.propensity_spec);
  LogDensityModel joint = models::bn_tmle(
      prep.xo.values, prep.xp.values, ds.treatment(), prep.y, ds.outcome_kind(), form,
      opts.outcome_spec.prior_scale, opts.outcome_spec.error_sd_prior_scale,
      opts.epsilon_prior_scale);
  PosteriorDraws draws = sample(joint, stage_config(opts.sampler, kSeedJoint));
  const Mat theta_y = draws.block("theta_Y");
  const Mat theta_a = draws.block("theta_A");
  return finalize_result(
      form == FluctuationForm::OneParam ? BayesMethod::BnTmle1p : BayesMethod::BnTmle2p,
      ds, opts, std::move(draws), theta_y, theta_a, prep, form);
}

BayesTmleResult fit_bayes(const Dataset& ds, BayesMethod method, const BayesOptions& opts) {
  switch (method) {
    case BayesMethod::BTmleM: return fit_btmle_m(ds, opts);
    case BayesMethod::BTmleSS: return fit_btmle_ss(ds, opts);
    case BayesMethod::BnTmle1p: return fit_bn_tmle(ds, opts, FluctuationForm::OneParam);
    case BayesMethod::BnTmle2p: return fit_bn_tmle(ds, opts, FluctuationForm::TwoParam);
  }
  throw ConfigError("unknown Bayesian method");
}

std::string bayes_result_json(const BayesTmleResult& result, const std::string& samples_path) {
  json diag;
  diag["mean_accept"] = result.draws.diagnostics.mean_accept;
  diag["divergences"] = result.draws.diagnostics.divergences;
  diag["split_rhat"] = result.draws.diagnostics.split_rhat;
  diag["warnings"] = result.warnings;

  json kde = json::array();
  for (Eigen::Index k = 0; k < result.ate.kde_x.size(); ++k)
    kde.push_back({result.ate.kde_x[k], result.ate.kde_density[k]});

  json doc{{"method", to_string(result.method)},
           {"outcome_kind", to_string(result.outcome_kind)},
           {"ate_mean", result.ate.mean},
           {"ci95", {result.ate.ci_low, result.ate.ci_high}},
           {"n_draws", result.ate.samples.size()},
           {"diagnostics", diag},
           {"kde", kde}};
  if (!samples_path.empty()) doc["samples_path"] = samples_path;
  return doc.dump(2);
}

}  // namespace btmle
