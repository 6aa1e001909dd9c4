#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace btmle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Thrown for malformed specs, schemas, or arguments (CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when prediction-time data does not match stored encoding metadata.
struct EncodingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a fit cannot be completed (CLI exit code 1).
struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Probabilities are kept inside [kProbEps, 1 - kProbEps] before any logit.
inline constexpr double kProbEps = 1e-9;

inline double clamp_prob(double p) {
  if (p < kProbEps) return kProbEps;
  if (p > 1.0 - kProbEps) return 1.0 - kProbEps;
  return p;
}

inline double expit(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline Vec expit(const Vec& x) {
  Vec out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = expit(x[i]);
  return out;
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace btmle
