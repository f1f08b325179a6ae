#ifndef WNTK_H
#define WNTK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum WntkStatus {
  WNTK_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  WNTK_STATUS_NULL_POINTER = 1,
  /**
   * Invalid argument, shape mismatch or other configuration error.
   */
  WNTK_STATUS_CONFIG = 2,
  /**
   * Singular kernel, non positive definite kernel or divergence.
   */
  WNTK_STATUS_NUMERICAL = 3,
  /**
   * File or format error.
   */
  WNTK_STATUS_IO = 4,
  /**
   * The library panicked; the handle arguments should be considered lost.
   */
  WNTK_STATUS_PANIC = 5,
} WntkStatus;

typedef enum WntkActivation {
  WNTK_ACTIVATION_RELU = 0,
  WNTK_ACTIVATION_TANH = 1,
  WNTK_ACTIVATION_IDENTITY = 2,
} WntkActivation;

/**
 * A dense kernel matrix.
 */
typedef struct WntkKernel WntkKernel;

/**
 * Per-layer kernels of an analytic network.
 */
typedef struct WntkLayerStack WntkLayerStack;

/**
 * A fitted kernel ridge regressor.
 */
typedef struct WntkRegressor WntkRegressor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *wntk_last_error(void);

/**
 * Copies a row-major `rows × cols` buffer into a new kernel handle.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles; `out` must be writable.
 */
enum WntkStatus wntk_kernel_new(const double *data,
                                size_t rows,
                                size_t cols,
                                struct WntkKernel **out);

/**
 * # Safety
 * `kernel` must be null or a handle from this library that has not been freed.
 */
void wntk_kernel_free(struct WntkKernel *kernel);

/**
 * # Safety
 * `kernel` must be a live handle; `rows` and `cols` must be writable.
 */
enum WntkStatus wntk_kernel_shape(const struct WntkKernel *kernel, size_t *rows, size_t *cols);

/**
 * Copies the kernel into `buf` in row-major order; `len` must equal `rows * cols`.
 *
 * # Safety
 * `kernel` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum WntkStatus wntk_kernel_copy(const struct WntkKernel *kernel, double *buf, size_t len);

/**
 * Writes the kernel in the WNTK1 binary container.
 *
 * # Safety
 * `kernel` must be a live handle; `path` a NUL-terminated UTF-8 string.
 */
enum WntkStatus wntk_kernel_save(const struct WntkKernel *kernel, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum WntkStatus wntk_kernel_load(const char *path, struct WntkKernel **out);

/**
 * `2 / (λ_min + λ_max)`; fails with `Numerical` unless the kernel is positive definite.
 *
 * # Safety
 * `kernel` must be a live handle; `eta` must be writable.
 */
enum WntkStatus wntk_kernel_eta_critical(const struct WntkKernel *kernel, double *eta);

/**
 * Analytic per-layer kernels between the rows of `x1` (`n1 × dim`) and `x2` (`n2 × dim`).
 *
 * # Safety
 * `x1`, `x2` must point to `n1 * dim` and `n2 * dim` readable doubles; `out` must be writable.
 */
enum WntkStatus wntk_layer_stack_analytic(const double *x1,
                                          size_t n1,
                                          const double *x2,
                                          size_t n2,
                                          size_t dim,
                                          size_t depth,
                                          enum WntkActivation activation,
                                          struct WntkLayerStack **out);

/**
 * # Safety
 * `stack` must be null or a live handle.
 */
void wntk_layer_stack_free(struct WntkLayerStack *stack);

/**
 * # Safety
 * `stack` must be a live handle; `depth` must be writable.
 */
enum WntkStatus wntk_layer_stack_depth(const struct WntkLayerStack *stack, size_t *depth);

/**
 * Copy of the kernel of layer `layer` (1-based).
 *
 * # Safety
 * `stack` must be a live handle; `out` must be writable.
 */
enum WntkStatus wntk_layer_stack_layer(const struct WntkLayerStack *stack,
                                       size_t layer,
                                       struct WntkKernel **out);

/**
 * `Σ_l a_l Θ_l`; a null `weights` with `len == 0` gives the unweighted NTK.
 *
 * # Safety
 * `stack` must be a live handle; `weights` must point to `len` readable doubles; `out` must be writable.
 */
enum WntkStatus wntk_layer_stack_weighted_sum(const struct WntkLayerStack *stack,
                                              const double *weights,
                                              size_t len,
                                              struct WntkKernel **out);

/**
 * Fits `(A + ridge·I) α = Y` for targets `y` (`n × outputs`, row-major).
 *
 * # Safety
 * `kernel` must be a live handle; `y` must point to `n * outputs` readable doubles; `out` must be writable.
 */
enum WntkStatus wntk_regressor_fit(const struct WntkKernel *kernel,
                                   const double *y,
                                   size_t outputs,
                                   double ridge,
                                   struct WntkRegressor **out);

/**
 * # Safety
 * `regressor` must be null or a live handle.
 */
void wntk_regressor_free(struct WntkRegressor *regressor);

/**
 * Scores for a cross kernel (`m × n`), written row-major into `scores`
 * (`m × outputs` values).
 *
 * # Safety
 * Both handles must be live; `scores` must point to `len` writable doubles.
 */
enum WntkStatus wntk_regressor_predict(const struct WntkRegressor *regressor,
                                       const struct WntkKernel *cross,
                                       double *scores,
                                       size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WNTK_H */
