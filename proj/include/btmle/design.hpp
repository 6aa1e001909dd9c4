#pragma once

#include <optional>
#include <string>
#include <vector>

#include "btmle/dataset.hpp"

namespace btmle {

enum class ModelOrder { FirstOrder, SecondOrder };
enum class ModelRole { Outcome, Propensity };

std::string to_string(ModelOrder o);
ModelOrder model_order_from_string(const std::string& s);

struct ModelSpec {
  ModelOrder order = ModelOrder::FirstOrder;
  ModelRole role = ModelRole::Outcome;
  double prior_scale = 1.0;
  double error_sd_prior_scale = 1.0;  // continuous outcome only
};

// Per-source-column encoding record; reapplying it must reproduce the
// training matrix bit-exactly.
struct ColumnEncoding {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  std::vector<double> levels;  // categorical: raw level for index k
  double mean = 0.0;           // continuous standardization
  double sd = 1.0;
};

struct EncodingMeta {
  std::vector<ColumnEncoding> columns;
  ModelOrder order = ModelOrder::FirstOrder;
  bool includes_treatment = false;
};

struct DesignMatrix {
  Mat values;  // d x q, intercept column first
  std::vector<std::string> column_names;
  EncodingMeta meta;
};

// Builds the design for `spec` from scratch: intercept first, categorical
// columns reference-coded (level 0 dropped), continuous columns standardized
// with the sample statistics recorded in the meta. SecondOrder adds squared
// standardized continuous columns and cross-source pairwise products.
// Outcome role appends the treatment column last.
DesignMatrix build_design(const Dataset& ds, const ModelSpec& spec);

// Re-encodes rows with previously stored metadata; never recomputes
// statistics. `treatment_override` forces the treatment column to a fixed
// value (counterfactual designs).
DesignMatrix apply_design(const Dataset& ds, const EncodingMeta& meta,
                          std::optional<double> treatment_override = std::nullopt);

// Continuous outcomes are standardized for fitting; estimates are mapped
// back to the original scale with the stored sd.
struct OutcomeScaling {
  double mean = 0.0;
  double sd = 1.0;
};

// Identity scaling for binary outcomes.
OutcomeScaling outcome_scaling(const Dataset& ds);
Vec scaled_outcome(const Dataset& ds, const OutcomeScaling& sc);

}  // namespace btmle
