/* C interface to the btmle causal-effect estimation core.
 *
 * All functions return BTMLE_OK on success; on failure the return code
 * classifies the error and btmle_last_error() carries a message (thread
 * local, valid until the next failing call on the same thread). Handles are
 * opaque and must be released with the matching _free function.
 */
#ifndef BTMLE_H
#define BTMLE_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct btmle_dataset btmle_dataset;
typedef struct btmle_result btmle_result;

typedef enum btmle_status {
  BTMLE_OK = 0,
  BTMLE_ERR_CONFIG = 1,     /* malformed spec/schema/argument */
  BTMLE_ERR_IO = 2,         /* file not readable/writable */
  BTMLE_ERR_ESTIMATION = 3, /* fit or sweep failure */
} btmle_status;

const char* btmle_version(void);
const char* btmle_last_error(void);

/* Dataset handles ------------------------------------------------------- */

btmle_status btmle_dataset_simulate(const char* dgp_spec_json, btmle_dataset** out);
btmle_status btmle_dataset_load_csv(const char* csv_path, const char* schema_path,
                                    btmle_dataset** out);
btmle_status btmle_dataset_save_csv(const btmle_dataset* ds, const char* csv_path,
                                    const char* schema_path);
int64_t btmle_dataset_rows(const btmle_dataset* ds);
void btmle_dataset_free(btmle_dataset* ds);

/* Estimation ------------------------------------------------------------ */

/* method: "classical" | "btmle_m" | "btmle_ss" | "bn_tmle_1p" | "bn_tmle_2p".
 * config_json: optional (NULL or "") JSON object; recognized keys include
 * n_chains, n_warmup, n_draws, target_accept, max_tree_depth, seed,
 * fluctuation ("one_param"|"two_param"), outcome_order, propensity_order
 * ("first"|"second"), clip_propensity, ss_row_cap. */
btmle_status btmle_fit(const btmle_dataset* ds, const char* method,
                       const char* config_json, btmle_result** out);

/* outcome_kind: "binary" | "continuous". */
btmle_status btmle_case_study(const char* outcome_kind, uint64_t seed,
                              const char* config_json, btmle_result** out);

/* Runs the replication sweep described by sweep_spec_json, persisting
 * per-replication and aggregate CSVs under out_dir. */
btmle_status btmle_sweep(const char* sweep_spec_json, const char* out_dir,
                         int resume, btmle_result** out);

/* format: "csv" | "json". Reads a sweep output directory, recomputes the
 * aggregate table, audits coverage.csv when present, and writes report
 * files (plus plot-ready series when plot_data != 0) under out_dir. */
btmle_status btmle_report(const char* in_dir, const char* format, int plot_data,
                          const char* out_dir, btmle_result** out);

/* Result handles: a UTF-8 JSON document owned by the handle. */
const char* btmle_result_json(const btmle_result* r);
void btmle_result_free(btmle_result* r);

#ifdef __cplusplus
}
#endif

#endif /* BTMLE_H */
