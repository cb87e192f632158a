#ifndef EMBEDDED_JC_H
#define EMBEDDED_JC_H

/* Generated from the embedded-jc-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every FFI call. `Ok` is zero; the error codes match the CLI
 * exit codes where one exists.
 */
typedef enum EjcStatus {
  EJC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  EJC_STATUS_NULL_POINTER = 1,
  /**
   * Malformed JSON, unknown fields, or physically invalid parameters.
   */
  EJC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The request exceeds a documented size cap.
   */
  EJC_STATUS_CAP_EXCEEDED = 3,
  /**
   * A numerical contract failed during the computation.
   */
  EJC_STATUS_NUMERICAL_FAILURE = 4,
} EjcStatus;

/**
 * Opaque system handle: validated parameters plus the truncation every
 * query uses.
 */
typedef struct EjcSystem EjcSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a system handle from parameter JSON (same schema as the CLI
 * `params` section) and optional truncation JSON (null selects the default
 * truncation). On success `*out_system` owns the handle; release it with
 * [`ejc_system_free`].
 *
 * # Safety
 * `params_json` and `truncation_json` must be null or NUL-terminated;
 * `out_system` must point to writable storage for one pointer.
 */
enum EjcStatus ejc_system_create(const char *params_json,
                                 const char *truncation_json,
                                 struct EjcSystem **out_system);

/**
 * Releases a handle from [`ejc_system_create`]. Null is a no-op.
 *
 * # Safety
 * `system` must be null or a pointer previously returned by
 * [`ejc_system_create`] that has not been freed yet.
 */
void ejc_system_free(struct EjcSystem *system);

/**
 * Eigenvalues of every excitation block as
 * `{"block_tags": [...], "eigenvalues": [...]}`, ascending within blocks.
 *
 * # Safety
 * `system` must be a live handle; `out_json` must point to writable
 * storage for one pointer. The returned string is released with
 * [`ejc_string_free`].
 */
enum EjcStatus ejc_spectrum_json(const struct EjcSystem *system, char **out_json);

/**
 * Hybrid-qubit report: splitting, eigenstate coefficient magnitudes,
 * anharmonicity metrics and truncation leakage.
 *
 * # Safety
 * Same contract as [`ejc_spectrum_json`].
 */
enum EjcStatus ejc_embedded_report_json(const struct EjcSystem *system, char **out_json);

/**
 * Operating-regime flags and margin ratios for the stored parameters.
 *
 * # Safety
 * Same contract as [`ejc_spectrum_json`].
 */
enum EjcStatus ejc_regime_report_json(const struct EjcSystem *system, char **out_json);

/**
 * Full-model vs dispersive-effective-model deviation over `[0, t_end]`:
 * exchange frequencies, relative error and validity ratios.
 *
 * # Safety
 * Same contract as [`ejc_spectrum_json`].
 */
enum EjcStatus ejc_deviation_report_json(const struct EjcSystem *system,
                                         double t_end,
                                         char **out_json);

/**
 * Releases a string returned by any `*_json` call. Null is a no-op.
 *
 * # Safety
 * `s` must be null or a pointer previously returned through an `out_json`
 * argument that has not been freed yet.
 */
void ejc_string_free(char *s);

/**
 * Message describing this thread's most recent failure, empty after a
 * success. The pointer stays valid until the next FFI call on the same
 * thread; do not free it.
 */
const char *ejc_last_error(void);

/**
 * Static library identification string; do not free it.
 */
const char *ejc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMBEDDED_JC_H */
