#pragma once

#include <optional>
#include <string>
#include <vector>

#include "btmle/common.hpp"

namespace btmle {

enum class ColumnKind { Binary, Categorical, Continuous };
enum class OutcomeKind { Binary, Continuous };

std::string to_string(ColumnKind k);
std::string to_string(OutcomeKind k);
ColumnKind column_kind_from_string(const std::string& s);
OutcomeKind outcome_kind_from_string(const std::string& s);

// One confounder column. Categorical values are stored as level indices
// 0..K-1; `levels` maps each index back to the raw value seen at load time.
struct ConfounderColumn {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  Vec values;
  std::vector<double> levels;  // categorical only, index -> raw level
};

// Immutable after construction; the unit of all fitting.
class Dataset {
 public:
  Dataset(std::vector<ConfounderColumn> confounders, Vec treatment, Vec outcome,
          OutcomeKind outcome_kind);

  Eigen::Index rows() const { return treatment_.size(); }
  const std::vector<ConfounderColumn>& confounders() const { return confounders_; }
  const Vec& treatment() const { return treatment_; }
  const Vec& outcome() const { return outcome_; }
  OutcomeKind outcome_kind() const { return outcome_kind_; }

  Eigen::Index treated_count() const;

  // CSV persistence with a JSON sidecar schema declaring column kinds/roles.
  static Dataset load_csv(const std::string& csv_path, const std::string& schema_path);
  void save_csv(const std::string& csv_path, const std::string& schema_path) const;

 private:
  std::vector<ConfounderColumn> confounders_;
  Vec treatment_;
  Vec outcome_;
  OutcomeKind outcome_kind_;
};

}  // namespace btmle
