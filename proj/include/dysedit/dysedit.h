/* dysedit — multi-expert latent-code attribute editor, C API.
 *
 * Every object is an opaque handle owned by the library. Functions return
 * DYS_OK (0) on success; on failure they return an error code and leave a
 * thread-local message readable through dys_last_error(). Strings returned
 * through char** parameters are heap-allocated and must be released with
 * dys_string_free().
 */
#ifndef DYSEDIT_H
#define DYSEDIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dys_status {
  DYS_OK = 0,
  DYS_ERR_USAGE = 1,
  DYS_ERR_CONFIG = 2,
  DYS_ERR_SHAPE = 3,
  DYS_ERR_DOMAIN = 4,
  DYS_ERR_UNKNOWN_ATTRIBUTE = 5,
  DYS_ERR_CAPACITY = 6,
  DYS_ERR_DEGENERATE = 7,
  DYS_ERR_IO = 8,
  DYS_ERR_CHECKSUM = 9,
  DYS_ERR_VERSION = 10,
  DYS_ERR_TRUNCATED = 11,
  DYS_ERR_MANIFEST_MISMATCH = 12,
  DYS_ERR_DIVERGED = 13,
  DYS_ERR_INTERNAL = 14
} dys_status;

typedef struct dys_config dys_config; /* parsed run configuration */
typedef struct dys_world dys_world;   /* frozen synthetic world */

const char* dys_status_name(dys_status status);
const char* dys_last_error(void);
void dys_string_free(char* s);

/* Configuration: defaults, strict `key = value` parsing with [world]/[train]/
 * [loss]/[eval] sections, dotted-key overrides, canonical emission. */
dys_status dys_config_create(dys_config** out);
dys_status dys_config_parse_text(const char* text, dys_config** out);
dys_status dys_config_load_file(const char* path, dys_config** out);
dys_status dys_config_set(dys_config* cfg, const char* dotted_key, const char* value);
dys_status dys_config_emit(const dys_config* cfg, char** text_out);
void dys_config_free(dys_config* cfg);

/* World: built deterministically from the [world] section. */
dys_status dys_world_build(const dys_config* cfg, dys_world** out);
dys_status dys_world_manifest(const dys_world* world, char** text_out);
void dys_world_free(dys_world* world);

/* Two-stage training run. Writes metrics.csv, world_manifest.txt, a config
 * snapshot, and checkpoints under out_dir. resume_checkpoint may be NULL. */
dys_status dys_train_run(const dys_config* cfg, const dys_world* world, const char* out_dir,
                         const char* resume_checkpoint, char** summary_out);

/* Held-out evaluation of a checkpoint; writes control_accuracy.csv and
 * identity.csv under out_dir. */
dys_status dys_eval_run(const dys_config* cfg, const dys_world* world,
                        const char* checkpoint_path, const char* out_dir, char** summary_out);

/* Trains and evaluates every ablation variant under paired seeds; writes
 * per-variant directories plus ablation_summary.csv under out_dir. */
dys_status dys_ablate_run(const dys_config* cfg, const dys_world* world, const char* out_dir,
                          char** summary_out);

/* Finite-difference gradient suite. all_pass_out receives 1 when every item
 * passed at rel_tol 1e-4. */
dys_status dys_gradcheck_run(uint64_t seed, int configs_per_item, char** report_out,
                             int* all_pass_out);

/* Applies one edit to a latent sampled from latent_seed and reports targets,
 * measurements, and identity similarity as key=value lines. Numeric
 * attributes take relative deltas; binary attributes take 0 or 1. */
dys_status dys_edit_run(const dys_config* cfg, const dys_world* world,
                        const char* checkpoint_path, const char* const* attr_names,
                        const double* values, size_t n_attrs, uint64_t latent_seed,
                        char** report_out);

/* Analytic multiply-add cost table over all activation masks. */
dys_status dys_cost_report(const dys_config* cfg, char** table_out);

#ifdef __cplusplus
}
#endif

#endif /* DYSEDIT_H */
