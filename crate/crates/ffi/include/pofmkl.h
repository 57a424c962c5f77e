/* C interface for the pofmkl engine.
 *
 * Link against the pofmkl_ffi cdylib or staticlib built from this
 * workspace (`cargo build -p pofmkl-ffi --release`).
 *
 * Conventions:
 *  - Every fallible call returns a PofmklStatus; POFMKL_OK is 0.
 *  - Run handles returned through out-parameters are owned by the caller
 *    and must be released with pofmkl_run_free().
 *  - pofmkl_last_error_message() describes the most recent failure on the
 *    calling thread; the pointer stays valid until the next failing call
 *    on that thread.
 */

#ifndef POFMKL_H
#define POFMKL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum PofmklStatus {
  POFMKL_OK = 0,
  POFMKL_NULL_ARGUMENT = 1,
  POFMKL_INVALID_UTF8 = 2,
  POFMKL_CONFIG_ERROR = 3,
  POFMKL_RUNTIME_ERROR = 4,
  POFMKL_INDEX_OUT_OF_RANGE = 5,
  POFMKL_PANIC = 6,
} PofmklStatus;

/* One executed experiment seed; opaque. */
typedef struct PofmklRun PofmklRun;

/* Parse TOML config text, run one seed, return an owned handle. */
PofmklStatus pofmkl_run_config_text(const char *config_text,
                                    uint64_t seed,
                                    PofmklRun **out);

/* Same, reading the config from a file path. */
PofmklStatus pofmkl_run_config_file(const char *config_path,
                                    uint64_t seed,
                                    PofmklRun **out);

/* Schema and invariant check only; no run. */
PofmklStatus pofmkl_validate_config_file(const char *config_path);

/* Mean squared prediction error of the run (normalized labels). */
double pofmkl_run_mse(const PofmklRun *run);

/* Number of clients / rounds in the run. */
size_t pofmkl_run_clients(const PofmklRun *run);
size_t pofmkl_run_rounds(const PofmklRun *run);

/* Final clamped regret of one client (0-based). */
PofmklStatus pofmkl_run_client_regret(const PofmklRun *run,
                                      size_t client,
                                      double *regret_out);

/* Per-client regret guarantee: ln(N)/eta_k + eta_k*T/2. */
double pofmkl_run_regret_bound(const PofmklRun *run);

/* Largest uplink message of the run, in scalar parameters (<= 2*M*D). */
size_t pofmkl_run_max_uplink(const PofmklRun *run);

/* Downlink parameters broadcast to each client per round (2*N*D). */
size_t pofmkl_run_downlink_per_round(const PofmklRun *run);

/* Release a run handle; null is a no-op. */
void pofmkl_run_free(PofmklRun *run);

/* Thread-local message for the most recent failure on this thread. */
const char *pofmkl_last_error_message(void);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* POFMKL_H */
