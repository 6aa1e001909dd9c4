// Acceptance suite: runs each criterion at its stated tolerance and prints
// one pass/fail line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "btmle/harness.hpp"
#include "btmle/models.hpp"
#include "oracles.hpp"

using namespace btmle;
namespace fs = std::filesystem;

namespace {

struct CriterionResult {
  int id = 0;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

class Suite {
 public:
  explicit Suite(std::string out_dir) : out_dir_(std::move(out_dir)) {
    fs::create_directories(out_dir_);
  }

  const CaseStudyReport& case_study(OutcomeKind kind, std::uint64_t seed,
                                    const std::vector<Method>& methods) {
    std::ostringstream key;
    key << to_string(kind) << ':' << seed << ':';
    for (auto m : methods) key << to_string(m) << ',';
    auto it = cache_.find(key.str());
    if (it != cache_.end()) return it->second;

    CaseStudyOptions opts;
    opts.methods = methods;
    const CaseStudyReport report = run_case_study(kind, seed, opts);
    for (const auto& m : report.methods) {
      for (const auto& w : m.warnings)
        std::cout << "    [flag] " << to_string(kind) << " seed " << seed << ' '
                  << to_string(m.method) << ": " << w << '\n';
      for (const auto& [block, r] : m.split_rhat)
        if (r >= 1.05)
          std::cout << "    [flag] " << to_string(kind) << " seed " << seed << ' '
                    << to_string(m.method) << ": split R-hat " << r << " for "
                    << block << '\n';
    }
    return cache_.emplace(key.str(), report).first->second;
  }

  static const MethodSummary* find(const CaseStudyReport& report, Method m) {
    for (const auto& s : report.methods)
      if (s.method == m) return &s;
    return nullptr;
  }

  const std::vector<Method> kCaseMethods{Method::Classical, Method::BTmleM,
                                         Method::BTmleSS, Method::BnTmle1p};

  std::string out_dir_;
  std::map<std::string, CaseStudyReport> cache_;
};

Dataset case_dataset(OutcomeKind kind, std::uint64_t seed, Eigen::Index n = 10000) {
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

SweepSpec reduced_sweep_spec(int workers) {
  SweepSpec spec;
  spec.data_sizes = {25, 100, 500};
  spec.replications = 20;
  spec.cases = {MisspecCase::NMS};
  spec.effect_sizes = {0.15};
  spec.methods = {Method::Classical, Method::BnTmle1p};
  spec.base_seed = 20250101;
  spec.worker_count = workers;
  return spec;
}

// ---------------------------------------------------------------------------

CriterionResult criterion_containment(Suite& suite, OutcomeKind kind, int id) {
  CriterionResult res;
  res.id = id;
  const double truth = kind == OutcomeKind::Binary ? 0.03 : 0.25;
  std::map<Method, int> contained;
  std::ostringstream detail;
  bool means_ok = true;

  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto& report = suite.case_study(kind, seed, suite.kCaseMethods);
    for (const auto& m : report.methods) {
      if (!m.ok) {
        detail << to_string(m.method) << " seed " << seed << " failed: " << m.error
               << "; ";
        continue;
      }
      if (m.ci_low <= truth && truth <= m.ci_high) ++contained[m.method];
      if (kind == OutcomeKind::Continuous && std::abs(m.ate_mean - 0.25) > 0.015) {
        means_ok = false;
        detail << to_string(m.method) << " seed " << seed << " mean " << m.ate_mean
               << " outside 0.25 +/- 0.015; ";
      }
    }
  }
  bool pass = true;
  for (const auto method : suite.kCaseMethods) {
    detail << to_string(method) << " " << contained[method] << "/5 ";
    if (contained[method] < 4) pass = false;
  }
  if (kind == OutcomeKind::Continuous && !means_ok) pass = false;
  res.pass = pass;
  res.detail = detail.str();
  return res;
}

CriterionResult criterion_agreement(Suite& suite) {
  CriterionResult res;
  res.id = 3;
  res.pass = true;
  std::ostringstream detail;
  double worst = 0.0;
  for (auto kind : {OutcomeKind::Binary, OutcomeKind::Continuous}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto& report = suite.case_study(kind, seed, suite.kCaseMethods);
      const auto* classical = Suite::find(report, Method::Classical);
      if (classical == nullptr || !classical->ok) {
        res.pass = false;
        detail << "classical failed on " << to_string(kind) << " seed " << seed << "; ";
        continue;
      }
      for (const auto& m : report.methods) {
        if (m.method == Method::Classical) continue;
        if (!m.ok) {
          res.pass = false;
          continue;
        }
        const double gap = std::abs(m.ate_mean - classical->ate_mean);
        worst = std::max(worst, gap / (2.0 * classical->se));
        if (gap >= 2.0 * classical->se) {
          res.pass = false;
          detail << to_string(m.method) << " vs classical gap " << gap << " on "
                 << to_string(kind) << " seed " << seed << "; ";
        }
      }
    }
  }
  detail << "max |gap|/(2se) = " << worst;
  res.detail = detail.str();
  return res;
}

CriterionResult criterion_variance_ordering(Suite& suite) {
  CriterionResult res;
  res.id = 4;
  int ordered = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto& report = suite.case_study(OutcomeKind::Binary, seed, suite.kCaseMethods);
    const auto* bn = Suite::find(report, Method::BnTmle1p);
    const auto* m = Suite::find(report, Method::BTmleM);
    if (bn && m && bn->ok && m->ok && bn->sd <= m->sd) ++ordered;
    if (bn && m && bn->ok && m->ok)
      detail << "seed " << seed << ": " << bn->sd << " vs " << m->sd << "; ";
  }
  res.pass = ordered >= 4;
  res.detail = "sd(BN) <= sd(B-TMLE-M) on " + std::to_string(ordered) + "/5 seeds; " +
               detail.str();
  return res;
}

CriterionResult criterion_fluctuation_forms(Suite& suite) {
  CriterionResult res;
  res.id = 5;
  res.pass = true;
  std::ostringstream detail;
  for (auto kind : {OutcomeKind::Binary, OutcomeKind::Continuous}) {
    const auto& base = suite.case_study(kind, 1, suite.kCaseMethods);
    const auto& two = suite.case_study(kind, 1, {Method::BnTmle2p});
    const auto* p1 = Suite::find(base, Method::BnTmle1p);
    const auto* p2 = Suite::find(two, Method::BnTmle2p);
    if (!p1 || !p2 || !p1->ok || !p2->ok) {
      res.pass = false;
      detail << "missing BN fit on " << to_string(kind) << "; ";
      continue;
    }
    const double dmean = std::abs(p1->ate_mean - p2->ate_mean);
    const double dlo = std::abs(p1->ci_low - p2->ci_low);
    const double dhi = std::abs(p1->ci_high - p2->ci_high);
    detail << to_string(kind) << " dmean=" << dmean << " dlo=" << dlo << " dhi=" << dhi;
    if (dmean >= 0.002 || dlo >= 0.003 || dhi >= 0.003) res.pass = false;

    const Dataset ds = case_dataset(kind, 1);
    const auto c1 = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
    const auto c2 = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::TwoParam);
    const double dclassical = std::abs(c1.ate - c2.ate);
    detail << " classical 1p-2p=" << dclassical << "; ";
    if (dclassical >= 1e-3) res.pass = false;
  }
  res.detail = detail.str();
  return res;
}

CriterionResult criterion_reduced_sweep(Suite& suite) {
  CriterionResult res;
  res.id = 6;
  const SweepSpec spec = reduced_sweep_spec(8);
  const auto rows = run_sweep(spec, (fs::path(suite.out_dir_) / "c6_w8").string(), false);

  auto row_of = [&rows](Eigen::Index size, Method m) -> const CoverageRow* {
    for (const auto& r : rows)
      if (r.data_size == size && r.method == m) return &r;
    return nullptr;
  };
  const auto* bn25 = row_of(25, Method::BnTmle1p);
  const auto* cl25 = row_of(25, Method::Classical);
  const auto* bn500 = row_of(500, Method::BnTmle1p);
  const auto* cl500 = row_of(500, Method::Classical);
  std::ostringstream detail;
  res.pass = bn25 && cl25 && bn500 && cl500;
  if (res.pass) {
    const bool a = bn25->coverage_pct >= cl25->coverage_pct;
    const bool b = bn25->mean_width > bn500->mean_width;
    const bool c = bn500->coverage_pct >= 80.0 && cl500->coverage_pct >= 80.0;
    detail << "(a) BN " << bn25->coverage_pct << "% vs classical " << cl25->coverage_pct
           << "% at n=25; (b) BN width " << bn25->mean_width << " -> "
           << bn500->mean_width << "; (c) n=500 coverage BN " << bn500->coverage_pct
           << "% classical " << cl500->coverage_pct << "%";
    res.pass = a && b && c;
  } else {
    detail << "missing aggregate rows";
  }
  res.detail = detail.str();
  return res;
}

CriterionResult criterion_sampler_oracle() {
  CriterionResult res;
  res.id = 7;
  std::ostringstream detail;

  LogDensityModel conj;
  conj.dim = 1;
  conj.blocks = {{"mu", 0, 1, Transform::Identity}};
  conj.eval = [](const Vec& q, Vec* grad) {
    const double mu = q[0];
    const double ll = -0.5 * mu * mu - 0.5 * 10.0 * (1.0 - mu) * (1.0 - mu);
    if (grad) {
      grad->resize(1);
      (*grad)[0] = -mu + 10.0 * (1.0 - mu);
    }
    return ll;
  };
  SamplerConfig cfg;
  cfg.seed = 20250710;
  const PosteriorDraws draws = sample(conj, cfg);
  const Vec mu = draws.block("mu").col(0);
  const double post_mean = 10.0 / 11.0;
  const double post_sd = std::sqrt(1.0 / 11.0);
  const double mcse = oracles::mcse_mean(mu);
  const double mean_err = std::abs(mu.mean() - post_mean);
  const double sd_est = std::sqrt((mu.array() - mu.mean()).square().sum() /
                                  static_cast<double>(mu.size() - 1));
  const double sd_mcse = post_sd / std::sqrt(2.0 * oracles::effective_sample_size(mu));
  const bool conj_ok = mean_err < 3.0 * mcse && std::abs(sd_est - post_sd) < 3.0 * sd_mcse;
  detail << "conjugate mean err " << mean_err << " (3 mcse = " << 3.0 * mcse << "), sd "
         << sd_est << " vs " << post_sd << "; ";

  Eigen::Matrix2d cov;
  cov << 1.0, 0.9, 0.9, 1.0;
  const Eigen::Matrix2d prec = cov.inverse();
  LogDensityModel gauss;
  gauss.dim = 2;
  gauss.blocks = {{"x", 0, 2, Transform::Identity}};
  gauss.eval = [prec](const Vec& q, Vec* grad) {
    if (grad) *grad = -(prec * q);
    return -0.5 * q.dot(prec * q);
  };
  SamplerConfig cfg2;
  cfg2.seed = 20250711;
  const Mat x = sample(gauss, cfg2).block("x");
  Eigen::Matrix2d sample_cov = Eigen::Matrix2d::Zero();
  const Eigen::Vector2d mean = x.colwise().mean().transpose();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::Vector2d d = x.row(i).transpose() - mean;
    sample_cov += d * d.transpose();
  }
  sample_cov /= static_cast<double>(x.rows() - 1);
  bool cov_ok = true;
  double worst = 0.0;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      const double rel = std::abs(sample_cov(r, c) - cov(r, c)) / std::abs(cov(r, c));
      worst = std::max(worst, rel);
      if (rel >= 0.15) cov_ok = false;
    }
  detail << "max covariance rel err " << worst << " at 4000 draws";
  res.pass = conj_ok && cov_ok;
  res.detail = detail.str();
  return res;
}

CriterionResult criterion_gradients() {
  CriterionResult res;
  res.id = 8;
  Rng rng(424242);

  // small simulated inputs shared by all model builders
  const Eigen::Index d = 40;
  const Dataset bds = case_dataset(OutcomeKind::Binary, 9, d);
  const Dataset cds = case_dataset(OutcomeKind::Continuous, 9, d);
  ModelSpec ospec;
  ospec.role = ModelRole::Outcome;
  ModelSpec pspec;
  pspec.role = ModelRole::Propensity;
  const Mat xo = build_design(bds, ospec).values;
  const Mat xp = build_design(bds, pspec).values;
  const Mat xoc = build_design(cds, ospec).values;
  const Mat xpc = build_design(cds, pspec).values;
  const Vec yb = bds.outcome();
  const Vec yc = scaled_outcome(cds, outcome_scaling(cds));

  Vec offset(d), ybar(d);
  Mat h1(d, 1), h2(d, 2);
  Vec mu_y(d), sd_y(d), mu_h(d), sd_h(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    offset[i] = rng.normal(0.0, 0.8);
    ybar[i] = rng.normal(0.0, 0.8);
    h1(i, 0) = rng.normal(0.0, 2.0);
    h2(i, 0) = rng.uniform(0.0, 3.0);
    h2(i, 1) = rng.uniform(0.0, 3.0);
    mu_y[i] = rng.normal(0.0, 0.8);
    sd_y[i] = rng.uniform(0.05, 0.5);
    mu_h[i] = rng.normal(0.0, 2.0);
    sd_h[i] = rng.uniform(0.05, 0.5);
  }

  std::vector<std::pair<std::string, LogDensityModel>> model_list;
  model_list.emplace_back("logistic", logistic_log_density(xp, bds.treatment(), 1.0));
  model_list.emplace_back("linear", linear_log_density(xoc, yc, 1.0, 1.0));
  model_list.emplace_back("mean_fluct_binary_1p", models::mean_fluct_binary(offset, h1, yb));
  model_list.emplace_back("mean_fluct_binary_2p", models::mean_fluct_binary(offset, h2, yb));
  model_list.emplace_back("mean_fluct_cont_1p",
                          models::mean_fluct_continuous(ybar, h1, yc));
  model_list.emplace_back("mean_fluct_cont_2p",
                          models::mean_fluct_continuous(ybar, h2, yc));
  model_list.emplace_back("ss_binary",
                          models::ss_fluct(mu_y, sd_y, mu_h, sd_h, yb, OutcomeKind::Binary));
  model_list.emplace_back("ss_continuous", models::ss_fluct(mu_y, sd_y, mu_h, sd_h, yc,
                                                            OutcomeKind::Continuous));
  model_list.emplace_back("bn_binary_1p",
                          models::bn_tmle(xo, xp, bds.treatment(), yb, OutcomeKind::Binary,
                                          FluctuationForm::OneParam));
  model_list.emplace_back("bn_binary_2p",
                          models::bn_tmle(xo, xp, bds.treatment(), yb, OutcomeKind::Binary,
                                          FluctuationForm::TwoParam));
  model_list.emplace_back("bn_cont_1p",
                          models::bn_tmle(xoc, xpc, cds.treatment(), yc,
                                          OutcomeKind::Continuous, FluctuationForm::OneParam));
  model_list.emplace_back("bn_cont_2p",
                          models::bn_tmle(xoc, xpc, cds.treatment(), yc,
                                          OutcomeKind::Continuous, FluctuationForm::TwoParam));

  res.pass = true;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, model] : model_list) {
    for (int t = 0; t < 20; ++t) {
      Vec theta(model.dim);
      for (int j = 0; j < model.dim; ++j) theta[j] = rng.normal(0.0, 0.5);
      const double err = oracles::max_rel_gradient_error(model, theta);
      if (err > worst) {
        worst = err;
        worst_name = name;
      }
      if (err >= 1e-5) res.pass = false;
    }
  }
  res.detail = "12 models x 20 points; worst rel err " + std::to_string(worst) + " (" +
               worst_name + ")";
  return res;
}

CriterionResult criterion_targeting_score(Suite&) {
  CriterionResult res;
  res.id = 9;
  res.pass = true;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = case_dataset(OutcomeKind::Binary, seed);
    const auto fit = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
    const Vec yf1 = targeted_predict(fit, ds, 1.0);
    const Vec yf0 = targeted_predict(fit, ds, 0.0);
    const Vec up = apply_design(ds, fit.propensity_meta).values * fit.theta_propensity;
    double score = 0.0;
    for (Eigen::Index i = 0; i < ds.rows(); ++i) {
      const double p = clamp_prob(expit(up[i]));
      const double yf = ds.treatment()[i] == 1.0 ? yf1[i] : yf0[i];
      score += clever_covariate(ds.treatment()[i], p) * (ds.outcome()[i] - yf);
    }
    worst = std::max(worst, std::abs(score));
    if (std::abs(score) >= 1e-6) res.pass = false;
  }
  res.detail = "max |sum H (Y - Yf)| = " + std::to_string(worst) + " over 5 datasets";
  return res;
}

CriterionResult criterion_double_robustness() {
  CriterionResult res;
  res.id = 10;
  int classical_hits = 0, bn_hits = 0;
  const int reps = 20;
  for (int r = 0; r < reps; ++r) {
    DgpSpec spec;
    spec.n = 10000;
    spec.effect_size = 0.03;
    spec.outcome_kind = OutcomeKind::Binary;
    spec.treatment_order = ModelOrder::FirstOrder;   // correct propensity model
    spec.outcome_order = ModelOrder::SecondOrder;    // misspecified outcome model
    spec.label_noise = 0.05;
    spec.seed = 31000 + static_cast<std::uint64_t>(r);
    const Dataset ds = gen_dataset(spec);

    const auto cfit = fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam);
    if (cfit.ci_low <= 0.03 && 0.03 <= cfit.ci_high) ++classical_hits;

    BayesOptions opts;
    opts.sampler.seed = derive_seed(spec.seed, 71);
    opts.keep_prediction_entries = 0;
    const auto bfit = fit_bn_tmle(ds, opts, FluctuationForm::OneParam);
    if (bfit.ate.ci_low <= 0.03 && 0.03 <= bfit.ate.ci_high) ++bn_hits;
  }
  res.pass = classical_hits >= 18 && bn_hits >= 18;
  res.detail = "classical " + std::to_string(classical_hits) + "/20, BN-TMLE " +
               std::to_string(bn_hits) + "/20 intervals contain the truth";
  return res;
}

CriterionResult criterion_determinism(Suite& suite) {
  CriterionResult res;
  res.id = 11;
  std::ostringstream detail;

  // worker parity on the reduced sweep
  const SweepSpec w1 = reduced_sweep_spec(1);
  run_sweep(w1, (fs::path(suite.out_dir_) / "c6_w1").string(), false);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string rep1 = slurp(fs::path(suite.out_dir_) / "c6_w1" / "replications.csv");
  const std::string rep8 = slurp(fs::path(suite.out_dir_) / "c6_w8" / "replications.csv");
  const bool sweep_ok = !rep1.empty() && rep1 == rep8;
  detail << "worker 1 vs 8 replications.csv " << (sweep_ok ? "identical" : "DIFFER");

  // library-level rerun determinism for one Bayesian fit
  const Dataset ds = case_dataset(OutcomeKind::Binary, 1, 500);
  BayesOptions opts;
  opts.sampler.n_warmup = 400;
  opts.sampler.n_draws = 500;
  opts.sampler.seed = 99;
  const std::string a = bayes_result_json(fit_bn_tmle(ds, opts, FluctuationForm::OneParam));
  const std::string b = bayes_result_json(fit_bn_tmle(ds, opts, FluctuationForm::OneParam));
  const bool fit_ok = a == b;
  detail << "; repeated fit JSON " << (fit_ok ? "identical" : "DIFFERS");

  res.pass = sweep_ok && fit_ok;
  res.detail = detail.str();
  return res;
}

}  // namespace

int main(int argc, char** argv) {
  std::string out_dir = "acceptance_work";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--out") == 0 && i + 1 < argc) out_dir = argv[++i];
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
  }

  Suite suite(out_dir);
  std::vector<CriterionResult> results;
  auto run = [&](int id, auto&& fn) {
    if (only != 0 && only != id) return;
    const auto t0 = std::chrono::steady_clock::now();
    CriterionResult r = fn();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %2d (%.1fs): %s\n", r.pass ? "PASS" : "FAIL", r.id,
                r.seconds, r.detail.c_str());
    std::fflush(stdout);
    results.push_back(std::move(r));
  };

  run(1, [&] { return criterion_containment(suite, OutcomeKind::Binary, 1); });
  run(2, [&] { return criterion_containment(suite, OutcomeKind::Continuous, 2); });
  run(3, [&] { return criterion_agreement(suite); });
  run(4, [&] { return criterion_variance_ordering(suite); });
  run(5, [&] { return criterion_fluctuation_forms(suite); });
  run(6, [&] { return criterion_reduced_sweep(suite); });
  run(7, [&] { return criterion_sampler_oracle(); });
  run(8, [&] { return criterion_gradients(); });
  run(9, [&] { return criterion_targeting_score(suite); });
  run(10, [&] { return criterion_double_robustness(); });
  run(11, [&] { return criterion_determinism(suite); });

  int failed = 0;
  for (const auto& r : results)
    if (!r.pass) ++failed;
  std::printf("%zu criteria run, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : 1;
}
