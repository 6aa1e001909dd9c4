#include "btmle.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "btmle/harness.hpp"

using nlohmann::json;

struct btmle_dataset {
  btmle::Dataset data;
};

struct btmle_result {
  std::string json_text;
};

namespace {

thread_local std::string g_last_error;

btmle_status fail(btmle_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

btmle_status classify(const std::exception& e) {
  if (dynamic_cast<const btmle::ConfigError*>(&e))
    return fail(BTMLE_ERR_CONFIG, e.what());
  if (dynamic_cast<const btmle::IoError*>(&e)) return fail(BTMLE_ERR_IO, e.what());
  return fail(BTMLE_ERR_ESTIMATION, e.what());
}

btmle_status require(const void* p, const char* what) {
  if (p) return BTMLE_OK;
  return fail(BTMLE_ERR_CONFIG, std::string("null ") + what);
}

struct FitConfig {
  btmle::BayesOptions bayes;
  btmle::FluctuationForm fluctuation = btmle::FluctuationForm::OneParam;
  bool clip_propensity = false;
};

FitConfig parse_fit_config(const char* config_json) {
  FitConfig cfg;
  if (config_json == nullptr || std::strlen(config_json) == 0) return cfg;
  json doc;
  try {
    doc = json::parse(config_json);
  } catch (const json::exception& e) {
    throw btmle::ConfigError(std::string("invalid fit config JSON: ") + e.what());
  }
  try {
    auto& s = cfg.bayes.sampler;
    if (doc.contains("n_chains")) s.n_chains = doc["n_chains"].get<int>();
    if (doc.contains("n_warmup")) s.n_warmup = doc["n_warmup"].get<int>();
    if (doc.contains("n_draws")) s.n_draws = doc["n_draws"].get<int>();
    if (doc.contains("target_accept")) s.target_accept = doc["target_accept"].get<double>();
    if (doc.contains("max_tree_depth")) s.max_tree_depth = doc["max_tree_depth"].get<int>();
    if (doc.contains("seed")) s.seed = doc["seed"].get<std::uint64_t>();
    if (doc.contains("fluctuation"))
      cfg.fluctuation =
          btmle::fluctuation_form_from_string(doc["fluctuation"].get<std::string>());
    if (doc.contains("outcome_order"))
      cfg.bayes.outcome_spec.order =
          btmle::model_order_from_string(doc["outcome_order"].get<std::string>());
    if (doc.contains("propensity_order"))
      cfg.bayes.propensity_spec.order =
          btmle::model_order_from_string(doc["propensity_order"].get<std::string>());
    if (doc.contains("prior_scale")) {
      cfg.bayes.outcome_spec.prior_scale = doc["prior_scale"].get<double>();
      cfg.bayes.propensity_spec.prior_scale = doc["prior_scale"].get<double>();
    }
    if (doc.contains("clip_propensity")) cfg.clip_propensity = doc["clip_propensity"].get<bool>();
    if (doc.contains("ss_row_cap")) cfg.bayes.ss_row_cap = doc["ss_row_cap"].get<int>();
  } catch (const json::exception& e) {
    throw btmle::ConfigError(std::string("invalid fit config JSON: ") + e.what());
  }
  cfg.bayes.fluctuation = cfg.fluctuation;
  cfg.bayes.clip_propensity = cfg.clip_propensity;
  cfg.bayes.sampler.validate();
  return cfg;
}

}  // namespace

extern "C" {

const char* btmle_version(void) { return "0.1.0"; }

const char* btmle_last_error(void) { return g_last_error.c_str(); }

btmle_status btmle_dataset_simulate(const char* dgp_spec_json, btmle_dataset** out) {
  if (auto rc = require(dgp_spec_json, "dgp spec"); rc != BTMLE_OK) return rc;
  if (auto rc = require(out, "output handle"); rc != BTMLE_OK) return rc;
  try {
    const auto spec = btmle::dgp_spec_from_json(dgp_spec_json);
    *out = new btmle_dataset{btmle::gen_dataset(spec)};
    return BTMLE_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

btmle_status btmle_dataset_load_csv(const char* csv_path, const char* schema_path,
                                    btmle_dataset** out) {
  if (auto rc = require(csv_path, "csv path"); rc != BTMLE_OK) return rc;
  if (auto rc = require(schema_path, "schema path"); rc != BTMLE_OK) return rc;
  if (auto rc = require(out, "output handle"); rc != BTMLE_OK) return rc;
  try {
    *out = new btmle_dataset{btmle::Dataset::load_csv(csv_path, schema_path)};
    return BTMLE_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

btmle_status btmle_dataset_save_csv(const btmle_dataset* ds, const char* csv_path,
                                    const char* schema_path) {
  if (auto rc = require(ds, "dataset"); rc != BTMLE_OK) return rc;
  if (auto rc = require(csv_path, "csv path"); rc != BTMLE_OK) return rc;
  if (auto rc = require(schema_path, "schema path"); rc != BTMLE_OK) return rc;
  try {
    ds->data.save_csv(csv_path, schema_path);
    return BTMLE_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

int64_t btmle_dataset_rows(const btmle_dataset* ds) {
  return ds ? static_cast<int64_t>(ds->data.rows()) : -1;
}

void btmle_dataset_free(btmle_dataset* ds) { delete ds; }

btmle_status btmle_fit(const btmle_dataset* ds, const char* method,
                       const char* config_json, btmle_result** out) {
  if (auto rc = require(ds, "dataset"); rc != BTMLE_OK) return rc;
  if (auto rc = require(method, "method"); rc != BTMLE_OK) return rc;
  if (auto rc = require(out, "output handle"); rc != BTMLE_OK) return rc;
  try {
    const btmle::Method m = btmle::method_from_string(method);
    const FitConfig cfg = parse_fit_config(config_json);
    std::string text;
    if (m == btmle::Method::Classical) {
      btmle::ClassicalOptions copts;
      copts.clip_propensity = cfg.clip_propensity;
      const auto fit =
          btmle::fit_classical(ds->data, cfg.bayes.outcome_spec, cfg.bayes.propensity_spec,
                               cfg.fluctuation, copts);
      text = btmle::classical_fit_json(fit);
    } else {
      btmle::BayesMethod bm;
      switch (m) {
        case btmle::Method::BTmleM: bm = btmle::BayesMethod::BTmleM; break;
        case btmle::Method::BTmleSS: bm = btmle::BayesMethod::BTmleSS; break;
        case btmle::Method::BnTmle1p: bm = btmle::BayesMethod::BnTmle1p; break;
        default: bm = btmle::BayesMethod::BnTmle2p; break;
      }
      const auto res = btmle::fit_bayes(ds->data, bm, cfg.bayes);
      text = btmle::bayes_result_json(res);
    }
    *out = new btmle_result{std::move(text)};
    return BTMLE_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

btmle_status btmle_case_study(const char* outcome_kind, uint64_t seed,
                              const char* config_json, btmle_result** out) {
  if (auto rc = require(outcome_kind, "outcome kind"); rc != BTMLE_OK) return rc;
  if (auto rc = require(out, "output handle"); rc != BTMLE_OK) return rc;
  try {
    const auto kind = btmle::outcome_kind_from_string(outcome_kind);
    const FitConfig cfg = parse_fit_config(config_json);
    btmle::CaseStudyOptions opts;
    opts.sampler = cfg.bayes.sampler;
    opts.ss_row_cap = cfg.bayes.ss_row_cap;
    const auto report = btmle::run_case_study(kind, seed, opts);
    *out = new btmle_result{btmle::case_study_json(report)};
    return BTMLE_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

btmle_status btmle_sweep(const char* sweep_spec_json, const char* out_dir, int resume,
                         btmle_result** out) {
  if (auto rc = require(sweep_spec_json, "sweep spec"); rc != BTMLE_OK) return rc;
  if (auto rc = require(out_dir, "output directory"); rc != BTMLE_OK) return rc;
  try {
    const auto spec = btmle::sweep_spec_from_json(sweep_spec_json);
    const auto rows = btmle::run_sweep(spec, out_dir, resume != 0);
    if (out) {
      json doc{{"out_dir", out_dir}, {"rows", rows.size()}};
      *out = new btmle_result{doc.dump(2)};
    }
    return BTMLE_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

btmle_status btmle_report(const char* in_dir, const char* format, int plot_data,
                          const char* out_dir, btmle_result** out) {
  if (auto rc = require(in_dir, "input directory"); rc != BTMLE_OK) return rc;
  if (auto rc = require(format, "format"); rc != BTMLE_OK) return rc;
  if (auto rc = require(out_dir, "output directory"); rc != BTMLE_OK) return rc;
  try {
    const auto result = btmle::emit_report(in_dir, format, plot_data != 0, out_dir);
    if (out) {
      json doc{{"rows", result.rows.size()},
               {"audit_checked", result.audit_checked},
               {"audit_max_abs_diff", result.audit_max_abs_diff},
               {"files_written", result.files_written}};
      *out = new btmle_result{doc.dump(2)};
    }
    return BTMLE_OK;
  } catch (const std::exception& e) {
    return classify(e);
  }
}

const char* btmle_result_json(const btmle_result* r) {
  return r ? r->json_text.c_str() : nullptr;
}

void btmle_result_free(btmle_result* r) { delete r; }

}  // extern "C"
