#include "btmle/simgen.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace btmle {

using nlohmann::json;

namespace {

// component indices for child-seed derivation; append-only
constexpr std::uint64_t kStreamX1 = 1;
constexpr std::uint64_t kStreamX2 = 2;
constexpr std::uint64_t kStreamX3 = 3;
constexpr std::uint64_t kStreamTreatment = 4;
constexpr std::uint64_t kStreamOutcome = 5;
constexpr std::uint64_t kStreamNoise = 6;

}  // namespace

void DgpSpec::validate() const {
  if (n < 1) throw ConfigError("dgp n must be >= 1");
  if (!(label_noise >= 0.0 && label_noise < 1.0))
    throw ConfigError("label_noise must be in [0, 1)");
  if (!std::isfinite(effect_size)) throw ConfigError("effect_size must be finite");
}

ConfounderTable gen_confounders(Eigen::Index n, std::uint64_t seed) {
  ConfounderTable xs;
  xs.x1.resize(n);
  xs.x2.resize(n);
  xs.x3.resize(n);
  Rng r1(derive_seed(seed, kStreamX1));
  Rng r2(derive_seed(seed, kStreamX2));
  Rng r3(derive_seed(seed, kStreamX3));
  const std::vector<double> probs{0.3, 0.5, 0.2};
  for (Eigen::Index i = 0; i < n; ++i) {
    xs.x1[i] = r1.bernoulli(0.4) ? 1.0 : 0.0;
    xs.x2[i] = static_cast<double>(r2.categorical(probs));
    xs.x3[i] = r3.normal();
  }
  return xs;
}

double treatment_logit(double x1, double x2, double x3, ModelOrder order) {
  double v = -1.4 + 0.3 * x1 + 0.5 * x2 - 0.9 * x3;
  if (order == ModelOrder::SecondOrder)
    v += 0.07 * x3 * x3 - 0.02 * x1 * x2 + 0.06 * x2 * x3;
  return v;
}

Vec gen_treatment(const ConfounderTable& xs, ModelOrder order, std::uint64_t seed) {
  const Eigen::Index n = xs.x1.size();
  Vec a(n);
  Rng rng(derive_seed(seed, kStreamTreatment));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = expit(treatment_logit(xs.x1[i], xs.x2[i], xs.x3[i], order));
    a[i] = rng.bernoulli(p) ? 1.0 : 0.0;
  }
  return a;
}

double outcome_logit_control(double x1, double x2, double x3, ModelOrder order) {
  double v = -1.3 - 0.7 * x1 + 0.8 * x2 + 0.9 * x3;
  if (order == ModelOrder::SecondOrder)
    v += 0.07 * x3 * x3 - 0.02 * x1 * x2 + 0.06 * x2 * x3;
  return v;
}

double outcome_mean_control(double x1, double x2, double x3) {
  return outcome_logit_control(x1, x2, x3, ModelOrder::SecondOrder);
}

BinaryOutcome gen_outcome_binary(const ConfounderTable& xs, const Vec& treatment,
                                 double psi, ModelOrder order, double noise,
                                 std::uint64_t seed) {
  const Eigen::Index n = xs.x1.size();
  BinaryOutcome out;
  out.y.resize(n);
  Rng rng(derive_seed(seed, kStreamOutcome));
  Rng noise_rng(derive_seed(seed, kStreamNoise));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p0 = expit(outcome_logit_control(xs.x1[i], xs.x2[i], xs.x3[i], order));
    double p1 = p0 + psi;
    if (p1 < 0.0 || p1 > 1.0) {
      p1 = std::clamp(p1, 0.0, 1.0);
      ++out.clamped;
    }
    const double p = treatment[i] == 1.0 ? p1 : p0;
    double y = rng.bernoulli(p) ? 1.0 : 0.0;
    // independent label-noise stream keeps paired runs comparable
    if (noise_rng.uniform() < noise) y = 1.0 - y;
    out.y[i] = y;
  }
  return out;
}

Vec gen_outcome_continuous(const ConfounderTable& xs, const Vec& treatment, double psi,
                           std::uint64_t seed) {
  const Eigen::Index n = xs.x1.size();
  Vec y(n);
  Rng rng(derive_seed(seed, kStreamOutcome));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y0 = outcome_mean_control(xs.x1[i], xs.x2[i], xs.x3[i]);
    const double y1 = y0 + psi;
    const double mean = treatment[i] == 1.0 ? y1 : y0;
    y[i] = rng.normal(mean, 0.1);
  }
  return y;
}

Dataset gen_dataset(const DgpSpec& spec) {
  spec.validate();
  const ConfounderTable xs = gen_confounders(spec.n, spec.seed);
  const Vec a = gen_treatment(xs, spec.treatment_order, spec.seed);
  const double treated = a.sum();
  if (spec.n > 1 && (treated == 0.0 || treated == static_cast<double>(spec.n)))
    throw EstimationError("generated dataset has an empty treatment arm; use another seed");

  Vec y;
  if (spec.outcome_kind == OutcomeKind::Binary) {
    y = gen_outcome_binary(xs, a, spec.effect_size, spec.outcome_order,
                           spec.label_noise, spec.seed)
            .y;
  } else {
    y = gen_outcome_continuous(xs, a, spec.effect_size, spec.seed);
  }

  std::vector<ConfounderColumn> cols;
  cols.push_back({"X1", ColumnKind::Binary, xs.x1, {}});
  cols.push_back({"X2", ColumnKind::Categorical, xs.x2, {}});
  cols.push_back({"X3", ColumnKind::Continuous, xs.x3, {}});
  return Dataset(std::move(cols), a, std::move(y), spec.outcome_kind);
}

std::string dgp_spec_json(const DgpSpec& spec) {
  json doc{{"n", spec.n},
           {"effect_size", spec.effect_size},
           {"outcome_kind", to_string(spec.outcome_kind)},
           {"treatment_order", to_string(spec.treatment_order)},
           {"outcome_order", to_string(spec.outcome_order)},
           {"label_noise", spec.label_noise},
           {"seed", spec.seed}};
  return doc.dump(2);
}

DgpSpec dgp_spec_from_json(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid DGP spec JSON: ") + e.what());
  }
  DgpSpec spec;
  try {
    spec.n = doc.at("n").get<Eigen::Index>();
    spec.effect_size = doc.at("effect_size").get<double>();
    if (doc.contains("outcome_kind"))
      spec.outcome_kind = outcome_kind_from_string(doc["outcome_kind"].get<std::string>());
    if (doc.contains("treatment_order"))
      spec.treatment_order = model_order_from_string(doc["treatment_order"].get<std::string>());
    if (doc.contains("outcome_order"))
      spec.outcome_order = model_order_from_string(doc["outcome_order"].get<std::string>());
    if (doc.contains("label_noise")) spec.label_noise = doc["label_noise"].get<double>();
    if (doc.contains("seed")) spec.seed = doc["seed"].get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid DGP spec JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace btmle
