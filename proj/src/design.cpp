#include "btmle/design.hpp"

#include <cmath>

namespace btmle {

std::string to_string(ModelOrder o) {
  return o == ModelOrder::FirstOrder ? "first" : "second";
}

ModelOrder model_order_from_string(const std::string& s) {
  if (s == "first" || s == "first_order") return ModelOrder::FirstOrder;
  if (s == "second" || s == "second_order") return ModelOrder::SecondOrder;
  throw ConfigError("unknown model order: " + s);
}

namespace {

// Encoded columns for one confounder under stored metadata. Categorical
// columns expand to K-1 indicators (level 0 dropped); continuous columns are
// standardized with the stored statistics. Categorical values are matched by
// their original level value, so a column loaded with different levels than
// the training data fails rather than silently re-indexing.
void encode_column(const ColumnEncoding& enc, const ConfounderColumn& col, Mat& out,
                   int col0) {
  const Eigen::Index d = col.values.size();
  switch (enc.kind) {
    case ColumnKind::Binary:
      out.col(col0) = col.values;
      break;
    case ColumnKind::Categorical: {
      const int K = static_cast<int>(enc.levels.size());
      for (Eigen::Index i = 0; i < d; ++i) {
        const double original =
            col.levels.empty()
                ? col.values[i]
                : col.levels[static_cast<std::size_t>(col.values[i])];
        int idx = -1;
        for (int k = 0; k < K; ++k)
          if (original == enc.levels[static_cast<std::size_t>(k)]) idx = k;
        if (idx < 0)
          throw EncodingError("unseen categorical level in column '" + enc.name + "'");
        for (int k = 1; k < K; ++k) out(i, col0 + k - 1) = (idx == k) ? 1.0 : 0.0;
      }
      break;
    }
    case ColumnKind::Continuous:
      out.col(col0) = (col.values.array() - enc.mean) / enc.sd;
      break;
  }
}

int encoded_width(const ColumnEncoding& enc) {
  if (enc.kind == ColumnKind::Categorical)
    return static_cast<int>(enc.levels.size()) - 1;
  return 1;
}

}  // namespace

DesignMatrix apply_design(const Dataset& ds, const EncodingMeta& meta,
                          std::optional<double> treatment_override) {
  const Eigen::Index d = ds.rows();
  const auto& cols = ds.confounders();
  if (cols.size() != meta.columns.size())
    throw EncodingError("confounder count does not match encoding metadata");

  struct Encoded {
    std::string name;
    int col = 0;
    bool continuous = false;
  };
  std::vector<Encoded> base;  // encoded confounder columns (no intercept)

  int n_base = 0;
  for (const auto& enc : meta.columns) n_base += encoded_width(enc);

  int n_second = 0;
  if (meta.order == ModelOrder::SecondOrder) {
    int n_cont = 0;
    for (const auto& enc : meta.columns)
      if (enc.kind == ColumnKind::Continuous) ++n_cont;
    // squared continuous + cross-source pairwise products
    n_second = n_cont;
    for (std::size_t a = 0; a < meta.columns.size(); ++a)
      for (std::size_t b = a + 1; b < meta.columns.size(); ++b)
        n_second += encoded_width(meta.columns[a]) * encoded_width(meta.columns[b]);
  }

  const int q = 1 + n_base + n_second + (meta.includes_treatment ? 1 : 0);
  DesignMatrix dm;
  dm.meta = meta;
  dm.values.resize(d, q);
  dm.values.col(0).setOnes();
  dm.column_names.assign(1, "intercept");

  int col = 1;
  std::vector<std::pair<int, int>> source_span;  // per source column: [first, count)
  for (std::size_t s = 0; s < meta.columns.size(); ++s) {
    const auto& enc = meta.columns[s];
    const auto& raw = ds.confounders()[s];
    if (raw.name != enc.name)
      throw EncodingError("column name mismatch: '" + raw.name + "' vs '" + enc.name + "'");
    if (raw.kind != enc.kind)
      throw EncodingError("column kind mismatch for '" + enc.name + "'");
    encode_column(enc, raw, dm.values, col);
    const int w = encoded_width(enc);
    source_span.emplace_back(col, w);
    if (enc.kind == ColumnKind::Categorical) {
      for (int k = 1; k <= w; ++k)
        dm.column_names.push_back(enc.name + "_" + std::to_string(k));
    } else {
      dm.column_names.push_back(enc.name);
    }
    for (int k = 0; k < w; ++k)
      base.push_back({dm.column_names[static_cast<std::size_t>(col + k)], col + k,
                      enc.kind == ColumnKind::Continuous});
    col += w;
  }

  if (meta.order == ModelOrder::SecondOrder) {
    for (const auto& b : base) {
      if (!b.continuous) continue;
      dm.values.col(col) = dm.values.col(b.col).array().square();
      dm.column_names.push_back(b.name + "_sq");
      ++col;
    }
    for (std::size_t a = 0; a < source_span.size(); ++a) {
      for (std::size_t b = a + 1; b < source_span.size(); ++b) {
        for (int i = 0; i < source_span[a].second; ++i) {
          for (int j = 0; j < source_span[b].second; ++j) {
            const int ca = source_span[a].first + i;
            const int cb = source_span[b].first + j;
            dm.values.col(col) =
                dm.values.col(ca).array() * dm.values.col(cb).array();
            dm.column_names.push_back(dm.column_names[static_cast<std::size_t>(ca)] + ":" +
                                      dm.column_names[static_cast<std::size_t>(cb)]);
            ++col;
          }
        }
      }
    }
  }

  if (meta.includes_treatment) {
    if (treatment_override) {
      dm.values.col(col).setConstant(*treatment_override);
    } else {
      dm.values.col(col) = ds.treatment();
    }
    dm.column_names.push_back("A");
    ++col;
  }
  return dm;
}

DesignMatrix build_design(const Dataset& ds, const ModelSpec& spec) {
  const Eigen::Index d = ds.rows();
  EncodingMeta meta;
  meta.order = spec.order;
  meta.includes_treatment = spec.role == ModelRole::Outcome;
  for (const auto& c : ds.confounders()) {
    ColumnEncoding enc;
    enc.name = c.name;
    enc.kind = c.kind;
    if (c.kind == ColumnKind::Categorical) {
      enc.levels = c.levels;
    } else if (c.kind == ColumnKind::Continuous) {
      if (d < 2) throw EstimationError("cannot standardize column '" + c.name +
                                       "' with fewer than 2 rows");
      enc.mean = c.values.mean();
      const double ss = (c.values.array() - enc.mean).square().sum();
      enc.sd = std::sqrt(ss / static_cast<double>(d - 1));
      if (!(enc.sd > 1e-12))
        throw EstimationError("degenerate (zero variance) continuous column '" + c.name + "'");
    }
    meta.columns.push_back(std::move(enc));
  }
  return apply_design(ds, meta);
}

OutcomeScaling outcome_scaling(const Dataset& ds) {
  OutcomeScaling sc;
  if (ds.outcome_kind() == OutcomeKind::Continuous) {
    const Vec& y = ds.outcome();
    sc.mean = y.mean();
    const double ss = (y.array() - sc.mean).square().sum();
    sc.sd = std::sqrt(ss / static_cast<double>(std::max<Eigen::Index>(1, y.size() - 1)));
    if (!(sc.sd > 1e-12))
      throw EstimationError("degenerate (zero variance) continuous outcome");
  }
  return sc;
}

Vec scaled_outcome(const Dataset& ds, const OutcomeScaling& sc) {
  if (ds.outcome_kind() == OutcomeKind::Binary) return ds.outcome();
  return (ds.outcome().array() - sc.mean) / sc.sd;
}

}  // namespace btmle
