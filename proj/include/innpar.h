/* C interface to the invertible PPG-to-ABP reconstruction library.
 *
 * All functions are synchronous and single-threaded. Handles are opaque and
 * owned by the caller via the matching *_free. On any failure the function
 * returns a non-OK status (or NULL for constructors) and innpar_last_error()
 * holds a human-readable message until the next call on the same thread.
 *
 * Element precision is selected per model at creation time from the
 * INNPAR_PRECISION environment variable ("f32", default, or "f64").
 * Checkpoints always store 32-bit payloads regardless of precision.
 */
#ifndef INNPAR_H
#define INNPAR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum innpar_status {
    INNPAR_OK = 0,
    INNPAR_AUDIT_FAIL = 1, /* an invertibility/gradient audit exceeded tolerance */
    INNPAR_EINVAL = 2,     /* bad input, config, file format, or I/O */
    INNPAR_ENUMERIC = 3    /* numeric abort (NaN loss, singular matrix, ...) */
} innpar_status;

/* Message for the most recent failure on this thread; never NULL. */
const char* innpar_last_error(void);

/* Free a string returned by one of the *_json functions. NULL is a no-op. */
void innpar_string_free(char* s);

/* ---- model ---------------------------------------------------------- */

typedef struct innpar_model innpar_model;

/* Seeded random initialization. config_json may be NULL or "{}" for the
 * default architecture; unknown keys are rejected. */
innpar_model* innpar_model_create(const char* config_json, uint64_t seed);

/* All couplings zeroed and 1x1 convolutions set to the identity: the model
 * maps inputs to themselves exactly. */
innpar_model* innpar_model_create_identity(const char* config_json);

innpar_model* innpar_model_load(const char* checkpoint_path);
innpar_status innpar_model_save(innpar_model* m, const char* checkpoint_path);
void innpar_model_free(innpar_model* m);

/* Malloc'd JSON echo of the model's architecture; free with
 * innpar_string_free. Returns NULL on failure. */
char* innpar_model_config_json(const innpar_model* m);

size_t innpar_model_param_count(const innpar_model* m);
/* Multiply-accumulate count of one forward pass at the configured length. */
uint64_t innpar_model_mac_count(const innpar_model* m);
size_t innpar_model_signal_length(const innpar_model* m);
size_t innpar_model_channels(const innpar_model* m);

/* Exact bidirectional mapping of one segment. Buffers hold channels*length
 * values, channel-major (all of channel 1, then all of channel 2, ...).
 * length must equal innpar_model_signal_length. */
innpar_status innpar_model_forward(innpar_model* m, const float* in,
                                   size_t channels, size_t length, float* out);
innpar_status innpar_model_inverse(innpar_model* m, const float* in,
                                   size_t channels, size_t length, float* out);

/* ---- datasets ------------------------------------------------------- */

typedef struct innpar_dataset innpar_dataset;

/* Deterministic synthetic (PPG, ABP) corpus; same (n, seed, length) always
 * yields the same bytes. */
innpar_dataset* innpar_dataset_synth(size_t n, uint64_t seed, size_t length);

/* Binary segment file ("INNSIG01"). */
innpar_dataset* innpar_dataset_read(const char* path);
/* CSV with one segment per row: length PPG values then length ABP values
 * in mmHg. Lines starting with '#' are skipped. */
innpar_dataset* innpar_dataset_read_csv(const char* path, size_t length);
innpar_status innpar_dataset_write(const innpar_dataset* d, const char* path);

size_t innpar_dataset_size(const innpar_dataset* d);
size_t innpar_dataset_length(const innpar_dataset* d);
double innpar_dataset_sample_rate(const innpar_dataset* d);

/* Contiguous subset [from, from+count); handles are independent copies. */
innpar_dataset* innpar_dataset_slice(const innpar_dataset* d, size_t from,
                                     size_t count);
/* Copy one segment out; either destination may be NULL to skip it. abp is
 * written in normalized units. */
innpar_status innpar_dataset_get(const innpar_dataset* d, size_t index,
                                 float* ppg, float* abp_norm);
void innpar_dataset_free(innpar_dataset* d);

/* ---- signal helpers -------------------------------------------------- */

/* Forward difference with the final value replicated; out may not alias x. */
innpar_status innpar_grad_channel(const float* x, size_t n, float* out);

double innpar_normalize_abp(double mmhg);
double innpar_denormalize_abp(double normalized);

/* Cycle-averaged systolic/diastolic pressure from an ABP trace in mmHg. */
innpar_status innpar_extract_sbp_dbp(const float* abp_mmhg, size_t n,
                                     double sample_rate_hz, double* sbp,
                                     double* dbp);

/* ---- training and evaluation ---------------------------------------- */

/* Runs seeded mini-batch training. train_config_json may be NULL/"{}" for
 * defaults (500 epochs, batch 128, lr 1e-4, alpha 1). Writes cadence and
 * final checkpoints into checkpoint_dir (optional, NULL to skip) and the
 * per-epoch loss log as line-delimited JSON to runlog_path (optional). */
innpar_status innpar_fit(innpar_model* m, const innpar_dataset* train,
                         const innpar_dataset* val,
                         const char* train_config_json,
                         const char* checkpoint_dir, const char* runlog_path);

/* Waveform and blood-pressure metrics over a test set, as a malloc'd JSON
 * string: {waveform:{mae,nrmse,mae_mmhg,nrmse_mmhg}, sbp_mae, dbp_mae,
 * n_segments}. Free with innpar_string_free. ae1_duplicate mirrors the
 * training-time ablation that feeds the signal into both input channels. */
char* innpar_evaluate_json(innpar_model* m, const innpar_dataset* test,
                           int ae1_duplicate);

/* ---- audits ---------------------------------------------------------- */

/* Round-trip audit: trials fresh models (seeded from seed, seed+1, ...) and
 * random inputs; worst max|x - inverse(forward(x))| is written to *worst.
 * Returns INNPAR_AUDIT_FAIL if it exceeds tolerance. */
innpar_status innpar_audit_roundtrip(const char* config_json, uint64_t seed,
                                     int trials, double tolerance,
                                     double* worst);

/* 64-bit central-difference audit of every parameter against the recorded
 * analytic gradients; worst relative error to *max_rel_err. Returns
 * INNPAR_AUDIT_FAIL above tolerance. Intended for small configurations. */
innpar_status innpar_audit_gradcheck(const char* config_json, uint64_t seed,
                                     double tolerance, double* max_rel_err);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* INNPAR_H */
