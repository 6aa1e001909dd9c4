#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "btmle/bayes.hpp"
#include "btmle/simgen.hpp"

namespace btmle {

enum class Method { Classical, BTmleM, BTmleSS, BnTmle1p, BnTmle2p };
enum class MisspecCase { NMS, OMS, OPMS };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(MisspecCase c);
MisspecCase misspec_case_from_string(const std::string& s);

// DGP orders for a misspecification case relative to first-order analysis
// models. `literal` keeps the literal second-order-treatment /
// first-order-outcome pairing for OPMS.
std::pair<ModelOrder, ModelOrder> case_dgp_orders(MisspecCase c, bool literal);

// Central Beta(successes + 0.5, trials - successes + 0.5) interval with the
// boundary endpoints pinned at 0 and 1.
std::pair<double, double> jeffreys_interval(long long successes, long long trials,
                                            double level = 0.95);

struct SweepSpec {
  std::vector<Eigen::Index> data_sizes = {25,  50,  75,  100, 150, 200,
                                          250, 300, 350, 400, 450, 500};
  int replications = 100;
  std::vector<MisspecCase> cases = {MisspecCase::NMS, MisspecCase::OMS,
                                    MisspecCase::OPMS};
  std::vector<double> effect_sizes = {0.03, 0.15};
  std::vector<Method> methods = {Method::Classical, Method::BnTmle1p};
  std::uint64_t base_seed = 0;
  int worker_count = 0;  // 0 = hardware concurrency
  bool literal_paper_dgp = false;
  double label_noise = 0.05;
  SamplerConfig sampler;

  void validate() const;
};

std::string sweep_spec_json(const SweepSpec& spec);
SweepSpec sweep_spec_from_json(const std::string& json_text);

// Injective over the configured design: splitmix64(base_seed + packed cell
// index), with the packed index enumerating (size, case, effect, rep).
std::uint64_t replication_seed(const SweepSpec& spec, int size_idx, int case_idx,
                               int effect_idx, int rep);

struct ReplicationRecord {
  Eigen::Index data_size = 0;
  MisspecCase mcase = MisspecCase::NMS;
  double effect_size = 0.0;
  Method method = Method::Classical;
  int replication = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double ate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string error;

  double width() const { return ci_high - ci_low; }
  bool contains(double truth) const { return ok && ci_low <= truth && truth <= ci_high; }
};

struct CoverageRow {
  Eigen::Index data_size = 0;
  MisspecCase mcase = MisspecCase::NMS;
  double effect_size = 0.0;
  Method method = Method::Classical;
  int n_ok = 0;
  int n_failed = 0;
  double mean_ate_mean = 0.0;
  double mean_ate_ci_low = 0.0;
  double mean_ate_ci_high = 0.0;
  double mean_width = 0.0;
  double width_ci_low = 0.0;
  double width_ci_high = 0.0;
  double coverage_pct = 0.0;
  double coverage_ci_low = 0.0;   // percent
  double coverage_ci_high = 0.0;  // percent
};

// Runs the full design on a bounded worker pool; per-replication rows are
// persisted append-only to <out_dir>/replications.csv (resume skips rows
// already present) and the aggregate table to <out_dir>/coverage.csv.
// Results are independent of worker_count.
std::vector<CoverageRow> run_sweep(const SweepSpec& spec, const std::string& out_dir,
                                   bool resume = false);

std::vector<CoverageRow> aggregate_replications(
    const SweepSpec& spec, const std::vector<ReplicationRecord>& records);

std::vector<ReplicationRecord> read_replications_csv(const std::string& path);
void write_coverage_csv(const std::vector<CoverageRow>& rows, const std::string& path);
std::vector<CoverageRow> read_coverage_csv(const std::string& path);

struct CaseStudyOptions {
  Eigen::Index n = 10000;
  SamplerConfig sampler;
  std::vector<Method> methods = {Method::Classical, Method::BTmleM,
                                 Method::BTmleSS, Method::BnTmle1p};
  int ss_row_cap = 2000;
};

struct MethodSummary {
  Method method = Method::Classical;
  bool ok = false;
  std::string error;
  double ate_mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double sd = 0.0;  // sd of ATE samples (Bayesian) or the influence-curve SE
  double se = 0.0;  // classical only
  Vec kde_x;
  Vec kde_density;
  std::vector<std::string> warnings;
  std::map<std::string, double> split_rhat;
};

struct CaseStudyReport {
  OutcomeKind outcome_kind = OutcomeKind::Binary;
  std::uint64_t seed = 0;
  double truth = 0.0;
  Eigen::Index n = 0;
  std::vector<MethodSummary> methods;
};

// Generates the d=10000 case-study dataset for `seed` and runs the requested
// estimators; per-method failures are recorded and the run continues.
CaseStudyReport run_case_study(OutcomeKind kind, std::uint64_t seed,
                               const CaseStudyOptions& opts = {});

std::string case_study_json(const CaseStudyReport& report);

// Rebuilds the aggregate table from persisted per-replication rows, checks
// it against coverage.csv when present (tolerance 1e-12), and writes
// report.csv / report.json (plus per-cell coverage series when plot_data).
struct ReportResult {
  std::vector<CoverageRow> rows;
  bool audit_checked = false;
  double audit_max_abs_diff = 0.0;
  std::vector<std::string> files_written;
};

ReportResult emit_report(const std::string& in_dir, const std::string& format,
                         bool plot_data, const std::string& out_dir);

}  // namespace btmle
