#pragma once

#include <cstdint>

#include "btmle/dataset.hpp"
#include "btmle/design.hpp"
#include "btmle/rng.hpp"

namespace btmle {

// Synthetic data-generating process: X1 ~ Bernoulli(0.4), X2 ~
// Categorical(0.3, 0.5, 0.2), X3 ~ N(0, 1); logistic treatment assignment
// and binary/continuous outcomes with an additive effect `psi`.
struct DgpSpec {
  Eigen::Index n = 0;
  double effect_size = 0.0;
  OutcomeKind outcome_kind = OutcomeKind::Binary;
  ModelOrder treatment_order = ModelOrder::FirstOrder;
  ModelOrder outcome_order = ModelOrder::SecondOrder;
  double label_noise = 0.05;  // binary outcome only
  std::uint64_t seed = 0;

  void validate() const;
};

struct ConfounderTable {
  Vec x1;
  Vec x2;  // levels 0/1/2
  Vec x3;
};

ConfounderTable gen_confounders(Eigen::Index n, std::uint64_t seed);

// Index of the treatment logit on raw confounder values (X2 enters as its
// integer level).
double treatment_logit(double x1, double x2, double x3, ModelOrder order);
Vec gen_treatment(const ConfounderTable& xs, ModelOrder order, std::uint64_t seed);

double outcome_logit_control(double x1, double x2, double x3, ModelOrder order);
double outcome_mean_control(double x1, double x2, double x3);  // continuous, second order

struct BinaryOutcome {
  Vec y;
  Eigen::Index clamped = 0;  // rows where P(Y1=1) was clamped into [0, 1]
};

BinaryOutcome gen_outcome_binary(const ConfounderTable& xs, const Vec& treatment,
                                 double psi, ModelOrder order, double noise,
                                 std::uint64_t seed);
Vec gen_outcome_continuous(const ConfounderTable& xs, const Vec& treatment,
                           double psi, std::uint64_t seed);

// Composes the generators with child seeds derived from spec.seed by
// component index. Raises EstimationError when a treatment arm is empty.
Dataset gen_dataset(const DgpSpec& spec);

std::string dgp_spec_json(const DgpSpec& spec);
DgpSpec dgp_spec_from_json(const std::string& json_text);

}  // namespace btmle
