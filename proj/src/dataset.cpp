#include "btmle/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace btmle {

using nlohmann::json;

std::string to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::Binary: return "binary";
    case ColumnKind::Categorical: return "categorical";
    case ColumnKind::Continuous: return "continuous";
  }
  return "continuous";
}

std::string to_string(OutcomeKind k) {
  return k == OutcomeKind::Binary ? "binary" : "continuous";
}

ColumnKind column_kind_from_string(const std::string& s) {
  if (s == "binary") return ColumnKind::Binary;
  if (s == "categorical") return ColumnKind::Categorical;
  if (s == "continuous") return ColumnKind::Continuous;
  throw ConfigError("unknown column kind: " + s);
}

OutcomeKind outcome_kind_from_string(const std::string& s) {
  if (s == "binary") return OutcomeKind::Binary;
  if (s == "continuous") return OutcomeKind::Continuous;
  throw ConfigError("unknown outcome kind: " + s);
}

namespace {

bool is_zero_one(const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] != 0.0 && v[i] != 1.0) return false;
  return true;
}

// Maps raw categorical values to level indices 0..K-1 by sorted order.
void assign_levels(ConfounderColumn& col) {
  std::vector<double> uniq(col.values.data(), col.values.data() + col.values.size());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::map<double, double> index;
  for (std::size_t k = 0; k < uniq.size(); ++k) index[uniq[k]] = static_cast<double>(k);
  for (Eigen::Index i = 0; i < col.values.size(); ++i)
    col.values[i] = index.at(col.values[i]);
  col.levels = uniq;
}

}  // namespace

Dataset::Dataset(std::vector<ConfounderColumn> confounders, Vec treatment, Vec outcome,
                 OutcomeKind outcome_kind)
    : confounders_(std::move(confounders)),
      treatment_(std::move(treatment)),
      outcome_(std::move(outcome)),
      outcome_kind_(outcome_kind) {
  const Eigen::Index d = treatment_.size();
  if (d < 1) throw ConfigError("dataset must have at least one row");
  if (outcome_.size() != d) throw ConfigError("outcome row count mismatch");
  for (const auto& c : confounders_) {
    if (c.values.size() != d)
      throw ConfigError("confounder column '" + c.name + "' row count mismatch");
  }
  if (!is_zero_one(treatment_)) throw ConfigError("treatment must contain only 0 or 1");
  if (outcome_kind_ == OutcomeKind::Binary && !is_zero_one(outcome_))
    throw ConfigError("binary outcome must contain only 0 or 1");
  if (!outcome_.allFinite() || !treatment_.allFinite())
    throw ConfigError("non-finite values in treatment or outcome");
  for (auto& c : confounders_) {
    if (!c.values.allFinite())
      throw ConfigError("non-finite values in confounder '" + c.name + "'");
    if (c.kind == ColumnKind::Binary && !is_zero_one(c.values))
      throw ConfigError("binary confounder '" + c.name + "' must contain only 0 or 1");
    if (c.kind == ColumnKind::Categorical) {
      if (c.levels.empty()) {
        assign_levels(c);
      } else {
        // preset levels: values must already be indices into them
        const auto K = static_cast<double>(c.levels.size());
        for (Eigen::Index i = 0; i < c.values.size(); ++i) {
          const double v = c.values[i];
          if (v != std::floor(v) || v < 0.0 || v >= K)
            throw ConfigError("categorical confounder '" + c.name +
                              "' has a value outside its declared levels");
        }
      }
    }
  }
}

Eigen::Index Dataset::treated_count() const {
  return static_cast<Eigen::Index>(treatment_.sum());
}

namespace {

struct SchemaColumn {
  std::string name;
  ColumnKind kind;
  std::string role;  // confounder | treatment | outcome
};

std::vector<SchemaColumn> load_schema(const std::string& schema_path) {
  std::ifstream in(schema_path);
  if (!in) throw IoError("cannot open schema file: " + schema_path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("invalid schema JSON (" + schema_path + "): " + e.what());
  }
  const json& cols = doc.contains("columns") ? doc.at("columns") : doc;
  if (!cols.is_array()) throw ConfigError("schema must be an array of columns");
  std::vector<SchemaColumn> out;
  for (const auto& c : cols) {
    SchemaColumn sc;
    sc.name = c.at("name").get<std::string>();
    sc.kind = column_kind_from_string(c.at("kind").get<std::string>());
    sc.role = c.at("role").get<std::string>();
    if (sc.role != "confounder" && sc.role != "treatment" && sc.role != "outcome")
      throw ConfigError("unknown column role: " + sc.role);
    out.push_back(std::move(sc));
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

Dataset Dataset::load_csv(const std::string& csv_path, const std::string& schema_path) {
  const auto schema = load_schema(schema_path);
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open CSV file: " + csv_path);

  std::string line;
  if (!std::getline(in, line)) throw ConfigError("CSV is empty: " + csv_path);
  const auto header = split_csv_line(line);

  std::vector<int> col_of_schema(schema.size(), -1);
  for (std::size_t s = 0; s < schema.size(); ++s) {
    for (std::size_t h = 0; h < header.size(); ++h)
      if (header[h] == schema[s].name) col_of_schema[s] = static_cast<int>(h);
    if (col_of_schema[s] < 0)
      throw ConfigError("schema column '" + schema[s].name + "' missing from CSV header");
  }

  std::vector<std::vector<double>> raw(schema.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw ConfigError("CSV row with wrong field count in " + csv_path);
    for (std::size_t s = 0; s < schema.size(); ++s) {
      const std::string& f = fields[static_cast<std::size_t>(col_of_schema[s])];
      try {
        raw[s].push_back(std::stod(f));
      } catch (const std::exception&) {
        throw ConfigError("non-numeric CSV field '" + f + "' in column " + schema[s].name);
      }
    }
  }

  std::vector<ConfounderColumn> confounders;
  Vec treatment, outcome;
  OutcomeKind okind = OutcomeKind::Binary;
  bool saw_treatment = false, saw_outcome = false;
  for (std::size_t s = 0; s < schema.size(); ++s) {
    Vec v = Eigen::Map<const Vec>(raw[s].data(), static_cast<Eigen::Index>(raw[s].size()));
    if (schema[s].role == "treatment") {
      treatment = std::move(v);
      saw_treatment = true;
    } else if (schema[s].role == "outcome") {
      outcome = std::move(v);
      okind = schema[s].kind == ColumnKind::Continuous ? OutcomeKind::Continuous
                                                       : OutcomeKind::Binary;
      saw_outcome = true;
    } else {
      confounders.push_back({schema[s].name, schema[s].kind, std::move(v), {}});
    }
  }
  if (!saw_treatment) throw ConfigError("schema declares no treatment column");
  if (!saw_outcome) throw ConfigError("schema declares no outcome column");
  return Dataset(std::move(confounders), std::move(treatment), std::move(outcome), okind);
}

void Dataset::save_csv(const std::string& csv_path, const std::string& schema_path) const {
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write CSV file: " + csv_path);

  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };

  for (const auto& c : confounders_) out << c.name << ',';
  out << "A,Y\n";
  for (Eigen::Index i = 0; i < rows(); ++i) {
    for (const auto& c : confounders_) {
      const double v = c.kind == ColumnKind::Categorical
                           ? c.levels[static_cast<std::size_t>(c.values[i])]
                           : c.values[i];
      out << fmt(v) << ',';
    }
    out << fmt(treatment_[i]) << ',' << fmt(outcome_[i]) << '\n';
  }
  if (!out.good()) throw IoError("failed writing CSV file: " + csv_path);

  json cols = json::array();
  for (const auto& c : confounders_)
    cols.push_back({{"name", c.name}, {"kind", to_string(c.kind)}, {"role", "confounder"}});
  cols.push_back({{"name", "A"}, {"kind", "binary"}, {"role", "treatment"}});
  cols.push_back({{"name", "Y"},
                  {"kind", outcome_kind_ == OutcomeKind::Binary ? "binary" : "continuous"},
                  {"role", "outcome"}});
  std::ofstream sout(schema_path);
  if (!sout) throw IoError("cannot write schema file: " + schema_path);
  sout << json{{"columns", cols}}.dump(2) << '\n';
  if (!sout.good()) throw IoError("failed writing schema file: " + schema_path);
}

}  // namespace btmle
