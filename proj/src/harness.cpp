#include "btmle/harness.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <boost/math/distributions/beta.hpp>
#include <nlohmann/json.hpp>

namespace btmle {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::Classical: return "classical";
    case Method::BTmleM: return "btmle_m";
    case Method::BTmleSS: return "btmle_ss";
    case Method::BnTmle1p: return "bn_tmle_1p";
    case Method::BnTmle2p: return "bn_tmle_2p";
  }
  return "classical";
}

Method method_from_string(const std::string& s) {
  if (s == "classical") return Method::Classical;
  if (s == "btmle_m") return Method::BTmleM;
  if (s == "btmle_ss") return Method::BTmleSS;
  if (s == "bn_tmle_1p") return Method::BnTmle1p;
  if (s == "bn_tmle_2p") return Method::BnTmle2p;
  throw ConfigError("unknown method: " + s);
}

std::string to_string(MisspecCase c) {
  switch (c) {
    case MisspecCase::NMS: return "NMS";
    case MisspecCase::OMS: return "OMS";
    case MisspecCase::OPMS: return "OPMS";
  }
  return "NMS";
}

MisspecCase misspec_case_from_string(const std::string& s) {
  if (s == "NMS") return MisspecCase::NMS;
  if (s == "OMS") return MisspecCase::OMS;
  if (s == "OPMS") return MisspecCase::OPMS;
  throw ConfigError("unknown misspecification case: " + s);
}

std::pair<ModelOrder, ModelOrder> case_dgp_orders(MisspecCase c, bool literal) {
  switch (c) {
    case MisspecCase::NMS:
      return {ModelOrder::FirstOrder, ModelOrder::FirstOrder};
    case MisspecCase::OMS:
      return {ModelOrder::FirstOrder, ModelOrder::SecondOrder};
    case MisspecCase::OPMS:
      return {ModelOrder::SecondOrder,
              literal ? ModelOrder::FirstOrder : ModelOrder::SecondOrder};
  }
  return {ModelOrder::FirstOrder, ModelOrder::FirstOrder};
}

std::pair<double, double> jeffreys_interval(long long successes, long long trials,
                                            double level) {
  if (trials <= 0) throw ConfigError("jeffreys interval needs trials > 0");
  if (successes < 0 || successes > trials)
    throw ConfigError("jeffreys interval needs 0 <= successes <= trials");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must be in (0, 1)");
  const double a = static_cast<double>(successes) + 0.5;
  const double b = static_cast<double>(trials - successes) + 0.5;
  const boost::math::beta_distribution<double> dist(a, b);
  const double tail = (1.0 - level) / 2.0;
  const double lo = successes == 0 ? 0.0 : boost::math::quantile(dist, tail);
  const double hi = successes == trials ? 1.0 : boost::math::quantile(dist, 1.0 - tail);
  return {lo, hi};
}

void SweepSpec::validate() const {
  if (data_sizes.empty() || cases.empty() || effect_sizes.empty() || methods.empty())
    throw ConfigError("sweep spec has an empty dimension");
  for (auto n : data_sizes)
    if (n < 2) throw ConfigError("sweep data sizes must be >= 2");
  if (replications < 1) throw ConfigError("replications must be >= 1");
  if (worker_count < 0) throw ConfigError("worker_count must be >= 0");
  sampler.validate();
}

std::uint64_t replication_seed(const SweepSpec& spec, int size_idx, int case_idx,
                               int effect_idx, int rep) {
  const auto n_cases = static_cast<std::uint64_t>(spec.cases.size());
  const auto n_effects = static_cast<std::uint64_t>(spec.effect_sizes.size());
  const auto reps = static_cast<std::uint64_t>(spec.replications);
  const std::uint64_t packed =
      ((static_cast<std::uint64_t>(size_idx) * n_cases + static_cast<std::uint64_t>(case_idx)) *
           n_effects +
       static_cast<std::uint64_t>(effect_idx)) *
          reps +
      static_cast<std::uint64_t>(rep);
  return splitmix64(spec.base_seed + packed + 1);
}

// ---------------------------------------------------------------------------
// JSON (de)serialization

namespace {

json sampler_to_json(const SamplerConfig& cfg) {
  return json{{"n_chains", cfg.n_chains},     {"n_warmup", cfg.n_warmup},
              {"n_draws", cfg.n_draws},       {"target_accept", cfg.target_accept},
              {"max_tree_depth", cfg.max_tree_depth}, {"seed", cfg.seed}};
}

SamplerConfig sampler_from_json(const json& doc) {
  SamplerConfig cfg;
  if (doc.contains("n_chains")) cfg.n_chains = doc["n_chains"].get<int>();
  if (doc.contains("n_warmup")) cfg.n_warmup = doc["n_warmup"].get<int>();
  if (doc.contains("n_draws")) cfg.n_draws = doc["n_draws"].get<int>();
  if (doc.contains("target_accept")) cfg.target_accept = doc["target_accept"].get<double>();
  if (doc.contains("max_tree_depth")) cfg.max_tree_depth = doc["max_tree_depth"].get<int>();
  if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
  return cfg;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string sweep_spec_json(const SweepSpec& spec) {
  json sizes = json::array();
  for (auto n : spec.data_sizes) sizes.push_back(n);
  json cases = json::array();
  for (auto c : spec.cases) cases.push_back(to_string(c));
  json methods = json::array();
  for (auto m : spec.methods) methods.push_back(to_string(m));
  json doc{{"data_sizes", sizes},
           {"replications", spec.replications},
           {"cases", cases},
           {"effect_sizes", spec.effect_sizes},
           {"methods", methods},
           {"base_seed", spec.base_seed},
           {"worker_count", spec.worker_count},
           {"literal_paper_dgp", spec.literal_paper_dgp},
           {"label_noise", spec.label_noise},
           {"sampler", sampler_to_json(spec.sampler)}};
  return doc.dump(2);
}

SweepSpec sweep_spec_from_json(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid sweep spec JSON: ") + e.what());
  }
  SweepSpec spec;
  try {
    if (doc.contains("data_sizes")) {
      spec.data_sizes.clear();
      for (const auto& v : doc["data_sizes"]) spec.data_sizes.push_back(v.get<Eigen::Index>());
    }
    if (doc.contains("replications")) spec.replications = doc["replications"].get<int>();
    if (doc.contains("cases")) {
      spec.cases.clear();
      for (const auto& v : doc["cases"])
        spec.cases.push_back(misspec_case_from_string(v.get<std::string>()));
    }
    if (doc.contains("effect_sizes")) {
      spec.effect_sizes.clear();
      for (const auto& v : doc["effect_sizes"]) spec.effect_sizes.push_back(v.get<double>());
    }
    if (doc.contains("methods")) {
      spec.methods.clear();
      for (const auto& v : doc["methods"])
        spec.methods.push_back(method_from_string(v.get<std::string>()));
    }
    if (doc.contains("base_seed")) spec.base_seed = doc["base_seed"].get<std::uint64_t>();
    if (doc.contains("worker_count")) spec.worker_count = doc["worker_count"].get<int>();
    if (doc.contains("literal_paper_dgp"))
      spec.literal_paper_dgp = doc["literal_paper_dgp"].get<bool>();
    if (doc.contains("label_noise")) spec.label_noise = doc["label_noise"].get<double>();
    if (doc.contains("sampler")) spec.sampler = sampler_from_json(doc["sampler"]);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid sweep spec JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// replication execution

namespace {

constexpr std::uint64_t kSeedMethodBase = 21;

std::vector<ReplicationRecord> run_replication(const SweepSpec& spec, int size_idx,
                                               int case_idx, int effect_idx, int rep) {
  const auto seed = replication_seed(spec, size_idx, case_idx, effect_idx, rep);
  const auto [t_order, o_order] =
      case_dgp_orders(spec.cases[static_cast<std::size_t>(case_idx)], spec.literal_paper_dgp);

  ReplicationRecord base;
  base.data_size = spec.data_sizes[static_cast<std::size_t>(size_idx)];
  base.mcase = spec.cases[static_cast<std::size_t>(case_idx)];
  base.effect_size = spec.effect_sizes[static_cast<std::size_t>(effect_idx)];
  base.replication = rep;
  base.seed = seed;

  DgpSpec dgp;
  dgp.n = base.data_size;
  dgp.effect_size = base.effect_size;
  dgp.outcome_kind = OutcomeKind::Binary;
  dgp.treatment_order = t_order;
  dgp.outcome_order = o_order;
  dgp.label_noise = spec.label_noise;
  dgp.seed = seed;

  std::vector<ReplicationRecord> records;
  std::optional<Dataset> ds;
  std::string gen_error;
  try {
    ds.emplace(gen_dataset(dgp));
  } catch (const std::exception& e) {
    gen_error = e.what();
  }

  for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
    ReplicationRecord rec = base;
    rec.method = spec.methods[mi];
    if (!ds) {
      rec.ok = false;
      rec.error = gen_error;
      records.push_back(std::move(rec));
      continue;
    }
    try {
      if (rec.method == Method::Classical) {
        const auto fit = fit_classical(*ds, ModelSpec{}, ModelSpec{},
                                       FluctuationForm::OneParam);
        rec.ate = fit.ate;
        rec.ci_low = fit.ci_low;
        rec.ci_high = fit.ci_high;
      } else {
        BayesOptions opts;
        opts.sampler = spec.sampler;
        opts.sampler.seed = derive_seed(seed, kSeedMethodBase, mi);
        opts.keep_prediction_entries = 0;
        BayesMethod bm;
        switch (rec.method) {
          case Method::BTmleM: bm = BayesMethod::BTmleM; break;
          case Method::BTmleSS: bm = BayesMethod::BTmleSS; break;
          case Method::BnTmle1p: bm = BayesMethod::BnTmle1p; break;
          case Method::BnTmle2p: bm = BayesMethod::BnTmle2p; break;
          default: throw ConfigError("unexpected method");
        }
        const auto res = fit_bayes(*ds, bm, opts);
        rec.ate = res.ate.mean;
        rec.ci_low = res.ate.ci_low;
        rec.ci_high = res.ate.ci_high;
      }
      rec.ok = true;
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return out;
}

std::string record_csv_line(const ReplicationRecord& r) {
  std::ostringstream os;
  os << r.data_size << ',' << to_string(r.mcase) << ',' << fmt(r.effect_size) << ','
     << to_string(r.method) << ',' << r.replication << ',' << r.seed << ','
     << (r.ok ? "ok" : "error") << ',' << fmt(r.ate) << ',' << fmt(r.ci_low) << ','
     << fmt(r.ci_high) << ',' << sanitize(r.error);
  return os.str();
}

constexpr const char* kReplicationsHeader =
    "data_size,case,effect_size,method,replication,seed,status,ate,ci_low,ci_high,error";

// Bounded pool that hands completed task results to `sink` in strict task
// order, so persisted output is independent of worker count.
void ordered_pool(int n_tasks, int n_workers,
                  const std::function<std::vector<ReplicationRecord>(int)>& fn,
                  const std::function<void(std::vector<ReplicationRecord>&)>& sink) {
  if (n_workers <= 1) {
    for (int i = 0; i < n_tasks; ++i) {
      auto r = fn(i);
      sink(r);
    }
    return;
  }
  std::vector<std::optional<std::vector<ReplicationRecord>>> results(
      static_cast<std::size_t>(n_tasks));
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<int> next{0};

  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n_tasks) return;
      auto r = fn(i);
      {
        std::lock_guard<std::mutex> lock(mu);
        results[static_cast<std::size_t>(i)] = std::move(r);
      }
      cv.notify_all();
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);

  for (int k = 0; k < n_tasks; ++k) {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return results[static_cast<std::size_t>(k)].has_value(); });
    auto r = std::move(*results[static_cast<std::size_t>(k)]);
    results[static_cast<std::size_t>(k)].reset();
    lock.unlock();
    sink(r);
  }
  for (auto& t : threads) t.join();
}

}  // namespace

std::vector<ReplicationRecord> read_replications_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open replications CSV: " + path);
  std::vector<ReplicationRecord> records;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        f.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur.push_back(ch);
      }
    }
    f.push_back(cur);
    if (f.size() != 11) throw ConfigError("malformed replications CSV row");
    ReplicationRecord r;
    r.data_size = std::stoll(f[0]);
    r.mcase = misspec_case_from_string(f[1]);
    r.effect_size = std::stod(f[2]);
    r.method = method_from_string(f[3]);
    r.replication = std::stoi(f[4]);
    r.seed = std::stoull(f[5]);
    r.ok = f[6] == "ok";
    r.ate = std::stod(f[7]);
    r.ci_low = std::stod(f[8]);
    r.ci_high = std::stod(f[9]);
    r.error = f[10];
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<CoverageRow> aggregate_replications(
    const SweepSpec& spec, const std::vector<ReplicationRecord>& records) {
  std::vector<CoverageRow> rows;
  for (std::size_t si = 0; si < spec.data_sizes.size(); ++si) {
    for (std::size_t ci = 0; ci < spec.cases.size(); ++ci) {
      for (std::size_t ei = 0; ei < spec.effect_sizes.size(); ++ei) {
        for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
          CoverageRow row;
          row.data_size = spec.data_sizes[si];
          row.mcase = spec.cases[ci];
          row.effect_size = spec.effect_sizes[ei];
          row.method = spec.methods[mi];
          const double truth = row.effect_size;

          std::vector<double> ates, widths;
          long long covered = 0;
          for (const auto& r : records) {
            if (r.data_size != row.data_size || r.mcase != row.mcase ||
                r.effect_size != row.effect_size || r.method != row.method)
              continue;
            if (!r.ok) {
              ++row.n_failed;
              continue;
            }
            ates.push_back(r.ate);
            widths.push_back(r.width());
            if (r.contains(truth)) ++covered;
          }
          row.n_ok = static_cast<int>(ates.size());
          auto mean_ci = [](const std::vector<double>& v) {
            const auto n = static_cast<double>(v.size());
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= n;
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var = n > 1.0 ? var / (n - 1.0) : 0.0;
            const double half = 1.96 * std::sqrt(var / n);
            return std::array<double, 3>{mean, mean - half, mean + half};
          };
          if (row.n_ok > 0) {
            const auto am = mean_ci(ates);
            row.mean_ate_mean = am[0];
            row.mean_ate_ci_low = am[1];
            row.mean_ate_ci_high = am[2];
            const auto wm = mean_ci(widths);
            row.mean_width = wm[0];
            row.width_ci_low = wm[1];
            row.width_ci_high = wm[2];
            row.coverage_pct = 100.0 * static_cast<double>(covered) /
                               static_cast<double>(row.n_ok);
            const auto [lo, hi] = jeffreys_interval(covered, row.n_ok);
            row.coverage_ci_low = 100.0 * lo;
            row.coverage_ci_high = 100.0 * hi;
          } else {
            row.coverage_ci_high = 100.0;
          }
          rows.push_back(row);
        }
      }
    }
  }
  return rows;
}

namespace {

constexpr const char* kCoverageHeader =
    "data_size,case,effect_size,method,n_ok,n_failed,mean_ate_mean,mean_ate_ci_low,"
    "mean_ate_ci_high,mean_width,width_ci_low,width_ci_high,coverage_pct,"
    "coverage_ci_low,coverage_ci_high";

std::string coverage_csv_line(const CoverageRow& r) {
  std::ostringstream os;
  os << r.data_size << ',' << to_string(r.mcase) << ',' << fmt(r.effect_size) << ','
     << to_string(r.method) << ',' << r.n_ok << ',' << r.n_failed << ','
     << fmt(r.mean_ate_mean) << ',' << fmt(r.mean_ate_ci_low) << ','
     << fmt(r.mean_ate_ci_high) << ',' << fmt(r.mean_width) << ','
     << fmt(r.width_ci_low) << ',' << fmt(r.width_ci_high) << ','
     << fmt(r.coverage_pct) << ',' << fmt(r.coverage_ci_low) << ','
     << fmt(r.coverage_ci_high);
  return os.str();
}

}  // namespace

void write_coverage_csv(const std::vector<CoverageRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write coverage CSV: " + path);
  out << kCoverageHeader << '\n';
  for (const auto& r : rows) out << coverage_csv_line(r) << '\n';
  if (!out.good()) throw IoError("failed writing coverage CSV: " + path);
}

std::vector<CoverageRow> read_coverage_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open coverage CSV: " + path);
  std::vector<CoverageRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        f.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur.push_back(ch);
      }
    }
    f.push_back(cur);
    if (f.size() != 15) throw ConfigError("malformed coverage CSV row");
    CoverageRow r;
    r.data_size = std::stoll(f[0]);
    r.mcase = misspec_case_from_string(f[1]);
    r.effect_size = std::stod(f[2]);
    r.method = method_from_string(f[3]);
    r.n_ok = std::stoi(f[4]);
    r.n_failed = std::stoi(f[5]);
    r.mean_ate_mean = std::stod(f[6]);
    r.mean_ate_ci_low = std::stod(f[7]);
    r.mean_ate_ci_high = std::stod(f[8]);
    r.mean_width = std::stod(f[9]);
    r.width_ci_low = std::stod(f[10]);
    r.width_ci_high = std::stod(f[11]);
    r.coverage_pct = std::stod(f[12]);
    r.coverage_ci_low = std::stod(f[13]);
    r.coverage_ci_high = std::stod(f[14]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<CoverageRow> run_sweep(const SweepSpec& spec, const std::string& out_dir,
                                   bool resume) {
  spec.validate();
  fs::create_directories(out_dir);
  const std::string rep_path = (fs::path(out_dir) / "replications.csv").string();
  const std::string cov_path = (fs::path(out_dir) / "coverage.csv").string();
  const std::string spec_path = (fs::path(out_dir) / "spec.json").string();

  {
    std::ofstream sp(spec_path);
    if (!sp) throw IoError("cannot write sweep spec: " + spec_path);
    sp << sweep_spec_json(spec) << '\n';
  }

  std::vector<ReplicationRecord> done;
  if (resume && fs::exists(rep_path)) done = read_replications_csv(rep_path);

  // a task is one (size, case, effect, replication); methods share its dataset
  struct Task {
    int si, ci, ei, rep;
  };
  std::vector<Task> tasks;
  auto is_done = [&done](const SweepSpec& s, const Task& t) {
    const Eigen::Index size = s.data_sizes[static_cast<std::size_t>(t.si)];
    const MisspecCase c = s.cases[static_cast<std::size_t>(t.ci)];
    const double e = s.effect_sizes[static_cast<std::size_t>(t.ei)];
    for (const auto& m : s.methods) {
      bool found = false;
      for (const auto& r : done)
        if (r.data_size == size && r.mcase == c && r.effect_size == e && r.method == m &&
            r.replication == t.rep) {
          found = true;
          break;
        }
      if (!found) return false;
    }
    return true;
  };
  for (std::size_t si = 0; si < spec.data_sizes.size(); ++si)
    for (std::size_t ci = 0; ci < spec.cases.size(); ++ci)
      for (std::size_t ei = 0; ei < spec.effect_sizes.size(); ++ei)
        for (int rep = 0; rep < spec.replications; ++rep) {
          Task t{static_cast<int>(si), static_cast<int>(ci), static_cast<int>(ei), rep};
          if (done.empty() || !is_done(spec, t)) tasks.push_back(t);
        }

  std::ofstream out;
  const bool fresh = !resume || !fs::exists(rep_path);
  out.open(rep_path, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw IoError("cannot write replications CSV: " + rep_path);
  if (fresh) out << kReplicationsHeader << '\n';

  std::vector<ReplicationRecord> all = std::move(done);
  int n_workers = spec.worker_count > 0
                      ? spec.worker_count
                      : static_cast<int>(std::thread::hardware_concurrency());
  if (n_workers < 1) n_workers = 1;

  ordered_pool(
      static_cast<int>(tasks.size()), n_workers,
      [&](int i) {
        const Task& t = tasks[static_cast<std::size_t>(i)];
        return run_replication(spec, t.si, t.ci, t.ei, t.rep);
      },
      [&](std::vector<ReplicationRecord>& recs) {
        for (const auto& r : recs) out << record_csv_line(r) << '\n';
        out.flush();
        for (auto& r : recs) all.push_back(std::move(r));
      });
  out.close();

  auto rows = aggregate_replications(spec, all);
  write_coverage_csv(rows, cov_path);
  return rows;
}

// ---------------------------------------------------------------------------
// case studies

namespace {

constexpr std::uint64_t kSeedCaseMethod = 31;

MethodSummary summarize_classical(const ClassicalTmleFit& fit) {
  MethodSummary s;
  s.method = Method::Classical;
  s.ok = true;
  s.ate_mean = fit.ate;
  s.ci_low = fit.ci_low;
  s.ci_high = fit.ci_high;
  s.se = fit.se;
  s.sd = fit.se;
  if (fit.outcome_separation) s.warnings.push_back("outcome MLE separation");
  if (fit.propensity_separation) s.warnings.push_back("propensity MLE separation");
  return s;
}

MethodSummary summarize_bayes(Method m, const BayesTmleResult& res) {
  MethodSummary s;
  s.method = m;
  s.ok = true;
  s.ate_mean = res.ate.mean;
  s.ci_low = res.ate.ci_low;
  s.ci_high = res.ate.ci_high;
  const Eigen::Index n = res.ate.samples.size();
  s.sd = std::sqrt((res.ate.samples.array() - res.ate.mean).square().sum() /
                   static_cast<double>(n - 1));
  s.kde_x = res.ate.kde_x;
  s.kde_density = res.ate.kde_density;
  s.warnings = res.warnings;
  s.split_rhat = res.draws.diagnostics.split_rhat;
  return s;
}

}  // namespace

CaseStudyReport run_case_study(OutcomeKind kind, std::uint64_t seed,
                               const CaseStudyOptions& opts) {
  CaseStudyReport report;
  report.outcome_kind = kind;
  report.seed = seed;
  report.n = opts.n;
  report.truth = kind == OutcomeKind::Binary ? 0.03 : 0.25;

  DgpSpec dgp;
  dgp.n = opts.n;
  dgp.effect_size = report.truth;
  dgp.outcome_kind = kind;
  dgp.treatment_order = ModelOrder::FirstOrder;
  dgp.outcome_order = ModelOrder::SecondOrder;
  dgp.label_noise = kind == OutcomeKind::Binary ? 0.05 : 0.0;
  dgp.seed = seed;
  const Dataset ds = gen_dataset(dgp);

  for (std::size_t mi = 0; mi < opts.methods.size(); ++mi) {
    const Method m = opts.methods[mi];
    MethodSummary summary;
    summary.method = m;
    try {
      if (m == Method::Classical) {
        summary = summarize_classical(
            fit_classical(ds, ModelSpec{}, ModelSpec{}, FluctuationForm::OneParam));
      } else {
        BayesOptions bopts;
        bopts.sampler = opts.sampler;
        bopts.sampler.seed = derive_seed(seed, kSeedCaseMethod, mi);
        bopts.ss_row_cap = opts.ss_row_cap;
        bopts.keep_prediction_entries = 0;
        BayesMethod bm;
        switch (m) {
          case Method::BTmleM: bm = BayesMethod::BTmleM; break;
          case Method::BTmleSS: bm = BayesMethod::BTmleSS; break;
          case Method::BnTmle1p: bm = BayesMethod::BnTmle1p; break;
          case Method::BnTmle2p: bm = BayesMethod::BnTmle2p; break;
          default: throw ConfigError("unexpected method");
        }
        summary = summarize_bayes(m, fit_bayes(ds, bm, bopts));
      }
    } catch (const std::exception& e) {
      summary.ok = false;
      summary.error = e.what();
    }
    report.methods.push_back(std::move(summary));
  }
  return report;
}

std::string case_study_json(const CaseStudyReport& report) {
  json methods = json::array();
  for (const auto& m : report.methods) {
    json entry{{"method", to_string(m.method)}, {"ok", m.ok}};
    if (!m.ok) {
      entry["error"] = m.error;
    } else {
      entry["ate_mean"] = m.ate_mean;
      entry["ci95"] = {m.ci_low, m.ci_high};
      entry["sd"] = m.sd;
      if (m.method == Method::Classical) entry["se"] = m.se;
      entry["warnings"] = m.warnings;
      if (!m.split_rhat.empty()) entry["split_rhat"] = m.split_rhat;
      if (m.kde_x.size() > 0) {
        json kde = json::array();
        for (Eigen::Index k = 0; k < m.kde_x.size(); ++k)
          kde.push_back({m.kde_x[k], m.kde_density[k]});
        entry["kde"] = kde;
      }
    }
    methods.push_back(std::move(entry));
  }
  json doc{{"outcome_kind", to_string(report.outcome_kind)},
           {"seed", report.seed},
           {"n", report.n},
           {"truth", report.truth},
           {"methods", methods}};
  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// reporting

ReportResult emit_report(const std::string& in_dir, const std::string& format,
                         bool plot_data, const std::string& out_dir) {
  if (format != "csv" && format != "json")
    throw ConfigError("report format must be csv or json");
  const std::string rep_path = (fs::path(in_dir) / "replications.csv").string();
  if (!fs::exists(rep_path))
    throw IoError("no replications.csv under " + in_dir);
  const auto records = read_replications_csv(rep_path);

  SweepSpec spec;
  const std::string spec_path = (fs::path(in_dir) / "spec.json").string();
  if (fs::exists(spec_path)) {
    std::ifstream in(spec_path);
    std::stringstream ss;
    ss << in.rdbuf();
    spec = sweep_spec_from_json(ss.str());
  } else {
    // reconstruct the design from the records in encounter order
    spec.data_sizes.clear();
    spec.cases.clear();
    spec.effect_sizes.clear();
    spec.methods.clear();
    int max_rep = 0;
    for (const auto& r : records) {
      if (std::find(spec.data_sizes.begin(), spec.data_sizes.end(), r.data_size) ==
          spec.data_sizes.end())
        spec.data_sizes.push_back(r.data_size);
      if (std::find(spec.cases.begin(), spec.cases.end(), r.mcase) == spec.cases.end())
        spec.cases.push_back(r.mcase);
      if (std::find(spec.effect_sizes.begin(), spec.effect_sizes.end(), r.effect_size) ==
          spec.effect_sizes.end())
        spec.effect_sizes.push_back(r.effect_size);
      if (std::find(spec.methods.begin(), spec.methods.end(), r.method) ==
          spec.methods.end())
        spec.methods.push_back(r.method);
      max_rep = std::max(max_rep, r.replication);
    }
    spec.replications = max_rep + 1;
  }

  ReportResult result;
  result.rows = aggregate_replications(spec, records);

  const std::string cov_path = (fs::path(in_dir) / "coverage.csv").string();
  if (fs::exists(cov_path)) {
    const auto persisted = read_coverage_csv(cov_path);
    if (persisted.size() != result.rows.size())
      throw EstimationError("coverage audit failed: row count mismatch");
    double max_diff = 0.0;
    for (std::size_t i = 0; i < persisted.size(); ++i) {
      const auto& a = persisted[i];
      const auto& b = result.rows[i];
      for (const auto& [x, y] :
           std::initializer_list<std::pair<double, double>>{
               {a.mean_ate_mean, b.mean_ate_mean},
               {a.mean_ate_ci_low, b.mean_ate_ci_low},
               {a.mean_ate_ci_high, b.mean_ate_ci_high},
               {a.mean_width, b.mean_width},
               {a.width_ci_low, b.width_ci_low},
               {a.width_ci_high, b.width_ci_high},
               {a.coverage_pct, b.coverage_pct},
               {a.coverage_ci_low, b.coverage_ci_low},
               {a.coverage_ci_high, b.coverage_ci_high}})
        max_diff = std::max(max_diff, std::abs(x - y));
    }
    result.audit_checked = true;
    result.audit_max_abs_diff = max_diff;
    if (max_diff > 1e-12)
      throw EstimationError("coverage audit failed: aggregates differ by " +
                            std::to_string(max_diff));
  }

  fs::create_directories(out_dir);
  if (format == "csv") {
    const std::string path = (fs::path(out_dir) / "report.csv").string();
    write_coverage_csv(result.rows, path);
    result.files_written.push_back(path);
  } else {
    json rows = json::array();
    for (const auto& r : result.rows) {
      rows.push_back({{"data_size", r.data_size},
                      {"case", to_string(r.mcase)},
                      {"effect_size", r.effect_size},
                      {"method", to_string(r.method)},
                      {"n_ok", r.n_ok},
                      {"n_failed", r.n_failed},
                      {"mean_ate_mean", r.mean_ate_mean},
                      {"mean_ate_ci95", {r.mean_ate_ci_low, r.mean_ate_ci_high}},
                      {"mean_width", r.mean_width},
                      {"width_ci95", {r.width_ci_low, r.width_ci_high}},
                      {"coverage_pct", r.coverage_pct},
                      {"coverage_jeffreys_ci", {r.coverage_ci_low, r.coverage_ci_high}}});
    }
    const std::string path = (fs::path(out_dir) / "report.json").string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    out << json{{"rows", rows},
                {"audit_checked", result.audit_checked},
                {"audit_max_abs_diff", result.audit_max_abs_diff}}
               .dump(2)
        << '\n';
    result.files_written.push_back(path);
  }

  if (plot_data) {
    const fs::path plot_dir = fs::path(out_dir) / "plot";
    fs::create_directories(plot_dir);
    for (std::size_t ci = 0; ci < spec.cases.size(); ++ci) {
      for (std::size_t ei = 0; ei < spec.effect_sizes.size(); ++ei) {
        for (std::size_t mi = 0; mi < spec.methods.size(); ++mi) {
          std::ostringstream name;
          name << "series_" << to_string(spec.cases[ci]) << "_psi" << spec.effect_sizes[ei]
               << '_' << to_string(spec.methods[mi]) << ".csv";
          const std::string path = (plot_dir / name.str()).string();
          std::ofstream out(path);
          if (!out) throw IoError("cannot write plot series: " + path);
          out << "data_size,mean_ate_mean,mean_ate_ci_low,mean_ate_ci_high,mean_width,"
                 "width_ci_low,width_ci_high,coverage_pct,coverage_ci_low,coverage_ci_high\n";
          for (const auto& r : result.rows) {
            if (r.mcase != spec.cases[ci] || r.effect_size != spec.effect_sizes[ei] ||
                r.method != spec.methods[mi])
              continue;
            out << r.data_size << ',' << fmt(r.mean_ate_mean) << ','
                << fmt(r.mean_ate_ci_low) << ',' << fmt(r.mean_ate_ci_high) << ','
                << fmt(r.mean_width) << ',' << fmt(r.width_ci_low) << ','
                << fmt(r.width_ci_high) << ',' << fmt(r.coverage_pct) << ','
                << fmt(r.coverage_ci_low) << ',' << fmt(r.coverage_ci_high) << '\n';
          }
          result.files_written.push_back(path);
        }
      }
    }
    // KDE grids from any fit/case-study result JSONs dropped in the directory
    for (const auto& entry : fs::directory_iterator(in_dir)) {
      if (entry.path().extension() != ".json" || entry.path().filename() == "spec.json")
        continue;
      std::ifstream in(entry.path());
      json doc;
      try {
        in >> doc;
      } catch (const json::exception&) {
        continue;
      }
      auto dump_kde = [&](const json& kde, const std::string& stem) {
        const std::string path = (plot_dir / ("kde_" + stem + ".csv")).string();
        std::ofstream out(path);
        out << "x,density\n";
        for (const auto& pt : kde) out << fmt(pt[0].get<double>()) << ',' << fmt(pt[1].get<double>()) << '\n';
        result.files_written.push_back(path);
      };
      if (doc.contains("kde")) {
        dump_kde(doc["kde"], entry.path().stem().string());
      } else if (doc.contains("methods")) {
        for (const auto& m : doc["methods"])
          if (m.contains("kde"))
            dump_kde(m["kde"], entry.path().stem().string() + "_" + m["method"].get<std::string>());
      }
    }
  }
  return result;
}

}  // namespace btmle
