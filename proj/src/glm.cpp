#include "btmle/glm.hpp"

#include <cmath>

namespace btmle {

namespace {

double gaussian_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * kLog2Pi - std::log(sd) - 0.5 * z * z;
}

// HalfNormal(scale) log pdf, x > 0.
double halfnormal_logpdf(double x, double scale) {
  return 0.5 * std::log(2.0 / 3.14159265358979323846) - std::log(scale) -
         0.5 * x * x / (scale * scale);
}

void check_rows(const Mat& design, const Vec& y) {
  if (design.rows() != y.size())
    throw EstimationError("design and response row counts differ");
}

}  // namespace

LogDensityModel logistic_log_density(const Mat& design, const Vec& y,
                                     double prior_scale, const std::string& block_name) {
  check_rows(design, y);
  if (!(prior_scale > 0.0)) throw ConfigError("prior_scale must be positive");
  const int q = static_cast<int>(design.cols());

  LogDensityModel model;
  model.dim = q;
  model.blocks = {{block_name, 0, q, Transform::Identity}};
  // capture by value: evaluation must stay valid and reentrant
  model.eval = [design, y, prior_scale, q](const Vec& theta, Vec* grad) -> double {
    const Vec u = design * theta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i)
      ll += y[i] * u[i] - softplus(u[i]);
    const double ps2 = prior_scale * prior_scale;
    ll += -0.5 * theta.squaredNorm() / ps2 -
          q * (0.5 * kLog2Pi + std::log(prior_scale));
    if (grad) {
      Vec eta(u.size());
      for (Eigen::Index i = 0; i < u.size(); ++i) eta[i] = expit(u[i]);
      *grad = design.transpose() * (y - eta) - theta / ps2;
    }
    return ll;
  };
  return model;
}

LogDensityModel linear_log_density(const Mat& design, const Vec& y, double prior_scale,
                                   double sd_prior_scale, const std::string& block_name,
                                   const std::string& sigma_name) {
  check_rows(design, y);
  if (!(prior_scale > 0.0) || !(sd_prior_scale > 0.0))
    throw ConfigError("prior scales must be positive");
  const int q = static_cast<int>(design.cols());
  const double d = static_cast<double>(design.rows());

  LogDensityModel model;
  model.dim = q + 1;
  model.blocks = {{block_name, 0, q, Transform::Identity},
                  {sigma_name, q, 1, Transform::Log}};
  model.eval = [design, y, prior_scale, sd_prior_scale, q, d](const Vec& params,
                                                              Vec* grad) -> double {
    const Vec theta = params.head(q);
    const double log_sigma = params[q];
    const double sigma = std::exp(log_sigma);
    const Vec resid = y - design * theta;
    const double rss = resid.squaredNorm();
    const double s2 = sigma * sigma;

    double ll = -0.5 * d * kLog2Pi - d * log_sigma - 0.5 * rss / s2;
    const double ps2 = prior_scale * prior_scale;
    ll += -0.5 * theta.squaredNorm() / ps2 -
          q * (0.5 * kLog2Pi + std::log(prior_scale));
    // HalfNormal prior on sigma plus the log-transform Jacobian
    ll += halfnormal_logpdf(sigma, sd_prior_scale) + log_sigma;
    if (grad) {
      grad->resize(q + 1);
      grad->head(q) = design.transpose() * resid / s2 - theta / ps2;
      (*grad)[q] = -d + rss / s2 - s2 / (sd_prior_scale * sd_prior_scale) + 1.0;
    }
    return ll;
  };
  return model;
}

namespace {

void check_full_rank(const Mat& design) {
  Eigen::ColPivHouseholderQR<Mat> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols())
    throw EstimationError("rank-deficient design matrix");
}

}  // namespace

MleFit fit_mle(GlmKind kind, const Mat& design, const Vec& y) {
  check_rows(design, y);
  check_full_rank(design);
  const Eigen::Index q = design.cols();
  MleFit fit;

  if (kind == GlmKind::Linear) {
    fit.theta = design.colPivHouseholderQr().solve(y);
    const Vec resid = y - design * fit.theta;
    fit.sigma = std::sqrt(resid.squaredNorm() / static_cast<double>(design.rows()));
    return fit;
  }

  Vec theta = Vec::Zero(q);
  double ll_prev = -std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= 100; ++iter) {
    fit.iterations = iter;
    const Vec u = design * theta;
    Vec eta(u.size());
    double ll = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      eta[i] = expit(u[i]);
      ll += y[i] * u[i] - softplus(u[i]);
    }
    const Vec score = design.transpose() * (y - eta);
    if (score.lpNorm<Eigen::Infinity>() < 1e-8) {
      fit.theta = theta;
      fit.converged = true;
      fit.separation_warning = theta.lpNorm<Eigen::Infinity>() > 30.0;
      return fit;
    }
    const Vec w = eta.array() * (1.0 - eta.array());
    Mat hess = design.transpose() * w.asDiagonal() * design;
    Eigen::LDLT<Mat> ldlt(hess);
    if (ldlt.info() != Eigen::Success)
      throw EstimationError("singular information matrix in logistic fit");
    Vec step = ldlt.solve(score);
    // step halving keeps the likelihood monotone when far from the optimum
    double scale = 1.0;
    for (int h = 0; h < 30; ++h) {
      const Vec cand = theta + scale * step;
      const Vec uc = design * cand;
      double llc = 0.0;
      for (Eigen::Index i = 0; i < uc.size(); ++i) llc += y[i] * uc[i] - softplus(uc[i]);
      if (llc >= ll || !std::isfinite(ll)) {
        theta = cand;
        break;
      }
      scale *= 0.5;
      if (h == 29) theta += scale * step;
    }
    ll_prev = ll;
  }
  (void)ll_prev;
  fit.theta = theta;
  fit.converged = false;
  fit.separation_warning = theta.lpNorm<Eigen::Infinity>() > 30.0;
  return fit;
}

Vec offset_glm_fit(GlmKind kind, const Vec& offset, const Mat& covariates, const Vec& y) {
  const Eigen::Index k = covariates.cols();
  if (k < 1 || k > 2) throw ConfigError("offset GLM supports 1 or 2 covariates");
  if (offset.size() != y.size() || covariates.rows() != y.size())
    throw EstimationError("offset GLM shape mismatch");
  if (!offset.allFinite())
    throw EstimationError("non-finite offset in fluctuation fit");

  if (kind == GlmKind::Linear) {
    return covariates.colPivHouseholderQr().solve(y - offset);
  }

  Vec eps = Vec::Zero(k);
  for (int iter = 0; iter < 100; ++iter) {
    const Vec u = offset + covariates * eps;
    Vec mu(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) mu[i] = expit(u[i]);
    const Vec score = covariates.transpose() * (y - mu);
    if (score.lpNorm<Eigen::Infinity>() < 1e-10) return eps;
    const Vec w = mu.array() * (1.0 - mu.array());
    Mat hess = covariates.transpose() * w.asDiagonal() * covariates;
    Eigen::LDLT<Mat> ldlt(hess);
    if (ldlt.info() != Eigen::Success)
      throw EstimationError("singular Hessian in fluctuation fit");
    const Vec step = ldlt.solve(score);
    if (!step.allFinite())
      throw EstimationError("non-finite step in fluctuation fit");
    eps += step;
  }
  const Vec u = offset + covariates * eps;
  Vec mu(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) mu[i] = expit(u[i]);
  if ((covariates.transpose() * (y - mu)).lpNorm<Eigen::Infinity>() > 1e-6)
    throw EstimationError("fluctuation fit did not converge");
  return eps;
}

}  // namespace btmle
