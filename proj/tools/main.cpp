// Command-line front end; all estimation goes through the C API.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "btmle.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunError = 1;
constexpr int kExitConfigError = 2;

int exit_code(btmle_status rc) {
  switch (rc) {
    case BTMLE_OK: return kExitOk;
    case BTMLE_ERR_CONFIG: return kExitConfigError;
    default: return kExitRunError;
  }
}

int report_failure(btmle_status rc, const std::string& what) {
  std::cerr << "error (" << what << "): " << btmle_last_error() << '\n';
  return exit_code(rc);
}

std::string read_file(const std::string& path, bool& ok) {
  std::ifstream in(path);
  if (!in) {
    ok = false;
    return {};
  }
  std::stringstream ss;
  ss << in.rdbuf();
  ok = true;
  return ss.str();
}

// Patches "seed" into a JSON object without a JSON library on this side.
std::string with_seed(std::string text, std::uint64_t seed, bool has_seed) {
  if (!has_seed) return text;
  const auto pos = text.rfind('}');
  if (pos == std::string::npos) return text;
  std::string patch = (text.find(':') == std::string::npos ? "\"seed\": " : ", \"seed\": ") +
                      std::to_string(seed);
  text.insert(pos, patch);
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal effect estimation with classical and Bayesian TMLE"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  std::string sim_spec, sim_out;
  std::uint64_t sim_seed = 0;
  bool sim_has_seed = false;
  sim->add_option("--spec", sim_spec, "DGP spec JSON file")->required();
  sim->add_option("--out", sim_out, "Output directory")->required();
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "Override spec seed");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit one estimator to a dataset");
  std::string fit_data, fit_schema, fit_method, fit_config, fit_out;
  std::uint64_t fit_seed = 0;
  fit->add_option("--data", fit_data, "Dataset CSV")->required();
  fit->add_option("--schema", fit_schema, "Sidecar schema JSON")->required();
  fit->add_option("--method", fit_method,
                  "classical | btmle_m | btmle_ss | bn_tmle_1p | bn_tmle_2p")
      ->required();
  fit->add_option("--config", fit_config, "Config JSON file (optional)");
  fit->add_option("--out", fit_out, "Output JSON path")->required();
  auto* fit_seed_opt = fit->add_option("--seed", fit_seed, "Override config seed");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run a replication sweep");
  std::string sweep_spec, sweep_out;
  bool sweep_resume = false;
  std::uint64_t sweep_seed = 0;
  sweep->add_option("--spec", sweep_spec, "Sweep spec JSON file")->required();
  sweep->add_option("--out", sweep_out, "Output directory")->required();
  sweep->add_flag("--resume", sweep_resume, "Skip replications already persisted");
  auto* sweep_seed_opt = sweep->add_option("--seed", sweep_seed, "Override base seed");

  // report
  auto* rep = app.add_subcommand("report", "Aggregate sweep output and audit it");
  std::string rep_in, rep_format = "csv", rep_out;
  bool rep_plot = false;
  rep->add_option("--in", rep_in, "Sweep output directory")->required();
  rep->add_option("--format", rep_format, "csv | json");
  rep->add_option("--out", rep_out, "Report output directory (default: --in)");
  rep->add_flag("--plot-data", rep_plot, "Emit plot-ready series and KDE grids");

  // case-study
  auto* cs = app.add_subcommand("case-study", "Run the d=10000 case study");
  std::string cs_kind = "binary", cs_config, cs_out;
  std::uint64_t cs_seed = 1;
  cs->add_option("--outcome", cs_kind, "binary | continuous");
  cs->add_option("--seed", cs_seed, "Dataset seed");
  cs->add_option("--config", cs_config, "Config JSON file (optional)");
  cs->add_option("--out", cs_out, "Output JSON path")->required();

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed()) {
    sim_has_seed = sim_seed_opt->count() > 0;
    bool ok = false;
    std::string spec = read_file(sim_spec, ok);
    if (!ok) {
      std::cerr << "error: cannot read spec file " << sim_spec << '\n';
      return kExitConfigError;
    }
    spec = with_seed(spec, sim_seed, sim_has_seed);
    btmle_dataset* ds = nullptr;
    if (auto rc = btmle_dataset_simulate(spec.c_str(), &ds); rc != BTMLE_OK)
      return report_failure(rc, "simulate");
    const std::string csv = sim_out + "/dataset.csv";
    const std::string schema = sim_out + "/schema.json";
    std::error_code ec;
    std::filesystem::create_directories(sim_out, ec);
    if (auto rc = btmle_dataset_save_csv(ds, csv.c_str(), schema.c_str()); rc != BTMLE_OK) {
      btmle_dataset_free(ds);
      return report_failure(rc, "simulate");
    }
    std::cout << "wrote " << csv << " (" << btmle_dataset_rows(ds) << " rows) and "
              << schema << '\n';
    btmle_dataset_free(ds);
    return kExitOk;
  }

  if (fit->parsed()) {
    std::string config;
    if (!fit_config.empty()) {
      bool ok = false;
      config = read_file(fit_config, ok);
      if (!ok) {
        std::cerr << "error: cannot read config file " << fit_config << '\n';
        return kExitConfigError;
      }
    } else {
      config = "{}";
    }
    config = with_seed(config, fit_seed, fit_seed_opt->count() > 0);

    btmle_dataset* ds = nullptr;
    if (auto rc = btmle_dataset_load_csv(fit_data.c_str(), fit_schema.c_str(), &ds);
        rc != BTMLE_OK)
      return report_failure(rc, "fit: load");
    btmle_result* res = nullptr;
    const auto rc = btmle_fit(ds, fit_method.c_str(), config.c_str(), &res);
    btmle_dataset_free(ds);
    if (rc != BTMLE_OK) return report_failure(rc, "fit");
    std::ofstream out(fit_out);
    if (!out) {
      btmle_result_free(res);
      std::cerr << "error: cannot write " << fit_out << '\n';
      return kExitRunError;
    }
    out << btmle_result_json(res) << '\n';
    btmle_result_free(res);
    std::cout << "wrote " << fit_out << '\n';
    return kExitOk;
  }

  if (sweep->parsed()) {
    bool ok = false;
    std::string spec = read_file(sweep_spec, ok);
    if (!ok) {
      std::cerr << "error: cannot read spec file " << sweep_spec << '\n';
      return kExitConfigError;
    }
    if (sweep_seed_opt->count() > 0) {
      // base_seed override mirrors --seed on the other subcommands
      const auto pos = spec.rfind('}');
      if (pos != std::string::npos)
        spec.insert(pos, ", \"base_seed\": " + std::to_string(sweep_seed));
    }
    btmle_result* res = nullptr;
    const auto rc = btmle_sweep(spec.c_str(), sweep_out.c_str(), sweep_resume ? 1 : 0, &res);
    if (rc != BTMLE_OK) return report_failure(rc, "sweep");
    std::cout << btmle_result_json(res) << '\n';
    btmle_result_free(res);
    return kExitOk;
  }

  if (rep->parsed()) {
    if (rep_out.empty()) rep_out = rep_in;
    btmle_result* res = nullptr;
    const auto rc =
        btmle_report(rep_in.c_str(), rep_format.c_str(), rep_plot ? 1 : 0, rep_out.c_str(), &res);
    if (rc != BTMLE_OK) return report_failure(rc, "report");
    std::cout << btmle_result_json(res) << '\n';
    btmle_result_free(res);
    return kExitOk;
  }

  if (cs->parsed()) {
    std::string config = "{}";
    if (!cs_config.empty()) {
      bool ok = false;
      config = read_file(cs_config, ok);
      if (!ok) {
        std::cerr << "error: cannot read config file " << cs_config << '\n';
        return kExitConfigError;
      }
    }
    btmle_result* res = nullptr;
    const auto rc = btmle_case_study(cs_kind.c_str(), cs_seed, config.c_str(), &res);
    if (rc != BTMLE_OK) return report_failure(rc, "case-study");
    std::ofstream out(cs_out);
    if (!out) {
      btmle_result_free(res);
      std::cerr << "error: cannot write " << cs_out << '\n';
      return kExitRunError;
    }
    out << btmle_result_json(res) << '\n';
    btmle_result_free(res);
    std::cout << "wrote " << cs_out << '\n';
    return kExitOk;
  }

  return kExitConfigError;
}
