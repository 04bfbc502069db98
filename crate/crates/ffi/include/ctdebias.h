#ifndef CTDEBIAS_H
#define CTDEBIAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtdMethod {
  CTD_METHOD_LS = 0,
  CTD_METHOD_BC = 1,
  CTD_METHOD_IV = 2,
} CtdMethod;

/**
 * Result code of every fallible call.
 */
typedef enum CtdStatus {
  CTD_STATUS_OK = 0,
  CTD_STATUS_NULL_POINTER = 1,
  CTD_STATUS_INVALID_ARGUMENT = 2,
  CTD_STATUS_NUMERICAL = 3,
  CTD_STATUS_IO = 4,
  CTD_STATUS_BUFFER_TOO_SMALL = 5,
  CTD_STATUS_PANIC = 6,
} CtdStatus;

/**
 * Designed derivative filter bank.
 */
typedef struct CtdFilterBank CtdFilterBank;

/**
 * Filtered jet series.
 */
typedef struct CtdJet CtdJet;

/**
 * Feature model.
 */
typedef struct CtdModel CtdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the next call.
 */
const char *ctd_last_error(void);

/**
 * Designs the minimum-norm bank. Pass `i0 = NAN` for the window center.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum CtdStatus ctd_filter_design(size_t window,
                                 size_t p,
                                 size_t m,
                                 double h,
                                 double i0,
                                 struct CtdFilterBank **out);

/**
 * Designs the odd/even staggered pair.
 *
 * # Safety
 * `odd` and `even` must be valid pointers to writable storage for one handle each.
 */
enum CtdStatus ctd_filter_design_staggered(size_t window,
                                           size_t p,
                                           size_t m,
                                           double h,
                                           double i0,
                                           struct CtdFilterBank **odd,
                                           struct CtdFilterBank **even);

/**
 * Coefficient matrix shape: `rows = m + 1`, `cols = N`.
 *
 * # Safety
 * `bank` must be a live handle; `rows` and `cols` must be writable.
 */
enum CtdStatus ctd_filter_shape(const struct CtdFilterBank *bank, size_t *rows, size_t *cols);

/**
 * Copies the coefficients, row-major, into `buf`.
 *
 * # Safety
 * `bank` must be a live handle and `buf` must hold `len` doubles.
 */
enum CtdStatus ctd_filter_coeffs(const struct CtdFilterBank *bank, double *buf, size_t len);

/**
 * Filters `n` samples of `d_x` channels (row-major `n x d_x`).
 *
 * # Safety
 * `bank` must be a live handle, `z` must hold `n * d_x` doubles and `out` must be writable.
 */
enum CtdStatus ctd_filter_apply(const struct CtdFilterBank *bank,
                                const double *z,
                                size_t n,
                                size_t d_x,
                                double t_start,
                                struct CtdJet **out);

/**
 * # Safety
 * `bank` must be a handle from this library or NULL, and not used afterwards.
 */
void ctd_filter_free(struct CtdFilterBank *bank);

/**
 * Jet length and width of one point (`(m + 1) * d_x`).
 *
 * # Safety
 * `jet` must be a live handle; `len` and `width` must be writable.
 */
enum CtdStatus ctd_jet_shape(const struct CtdJet *jet, size_t *len, size_t *width);

/**
 * Copies the jet values; point `j` occupies `buf[j * width ..]` in `[d][l]` order.
 *
 * # Safety
 * `jet` must be a live handle and `buf` must hold `len` doubles.
 */
enum CtdStatus ctd_jet_values(const struct CtdJet *jet, double *buf, size_t len);

/**
 * Copies the evaluation time of every jet point.
 *
 * # Safety
 * `jet` must be a live handle and `buf` must hold `len` doubles.
 */
enum CtdStatus ctd_jet_times(const struct CtdJet *jet, double *buf, size_t len);

/**
 * # Safety
 * `jet` must be a handle from this library or NULL, and not used afterwards.
 */
void ctd_jet_free(struct CtdJet *jet);

/**
 * Built-in model by name (`"vdp"` or `"lorenz"`).
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` must be writable.
 */
enum CtdStatus ctd_model_builtin(const char *name, struct CtdModel **out);

/**
 * Model from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` must be writable.
 */
enum CtdStatus ctd_model_from_json(const char *json, struct CtdModel **out);

/**
 * Feature count, state dimension and model order.
 *
 * # Safety
 * `model` must be a live handle; the outputs must be writable.
 */
enum CtdStatus ctd_model_dims(const struct CtdModel *model, size_t *d_phi, size_t *d_x, size_t *m);

/**
 * # Safety
 * `model` must be a handle from this library or NULL, and not used afterwards.
 */
void ctd_model_free(struct CtdModel *model);

/**
 * One estimate from `n x d_x` row-major samples.
 *
 * `sigma_eps` is the `d_x x d_x` noise covariance (row-major) or NULL for zero.
 * `theta` receives `d_phi x d_x` row-major; `pe_stat` may be NULL.
 *
 * # Safety
 * All non-NULL pointers must be valid for the stated lengths.
 */
enum CtdStatus ctd_estimate(const struct CtdModel *model,
                            const double *z,
                            size_t n,
                            size_t d_x,
                            double t_start,
                            size_t window,
                            size_t p,
                            double h,
                            const double *sigma_eps,
                            enum CtdMethod method,
                            double *theta,
                            size_t theta_len,
                            double *pe_stat);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTDEBIAS_H */
