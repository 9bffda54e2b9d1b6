#ifndef SIMRECON_H
#define SIMRECON_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Passed as a budget to mean "no limit".
 */
#define SIMRECON_UNLIMITED UINT64_MAX

typedef enum SimreconStatus {
  SIMRECON_STATUS_OK = 0,
  SIMRECON_STATUS_NULL_POINTER = 1,
  SIMRECON_STATUS_INVALID_ARGUMENT = 2,
  SIMRECON_STATUS_IO = 3,
  SIMRECON_STATUS_FORMAT = 4,
  SIMRECON_STATUS_BUDGET_EXHAUSTED = 5,
  SIMRECON_STATUS_CONNECTION = 6,
  SIMRECON_STATUS_ORACLE = 7,
  SIMRECON_STATUS_INTERNAL = 8,
} SimreconStatus;

typedef struct SimreconBasis SimreconBasis;

typedef struct SimreconEmbedder SimreconEmbedder;

typedef struct SimreconOracle SimreconOracle;

/**
 * Mirrors `OptimizerConfig`. A `learning_rate` of 0 selects the default 1/k.
 */
typedef struct SimreconOptimizerConfig {
  double sigma;
  double learning_rate;
  uint64_t n_restarts;
  uint64_t restart_iters;
  uint64_t main_iters;
  uint64_t seed;
  double init_std;
  bool clamp_probes;
  bool parallel_restarts;
} SimreconOptimizerConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *simrecon_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *simrecon_version(void);

/**
 * Standard normal draw number `index` of `(seed, stream)`.
 */
double simrecon_philox_normal(uint64_t seed, uint64_t stream, uint64_t index);

/**
 * Queries consumed by a run: `n_restarts * (2 * restart_iters + 1) + 2 * main_iters`.
 */
uint64_t simrecon_required_queries(uint64_t n_restarts,
                                   uint64_t restart_iters,
                                   uint64_t main_iters);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SimreconStatus simrecon_basis_load(const char *path, struct SimreconBasis **out);

/**
 * # Safety
 * `basis` must come from [`simrecon_basis_load`] and not be used afterwards.
 */
void simrecon_basis_free(struct SimreconBasis *basis);

/**
 * Writes width, height, channels and rank of `basis`.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SimreconStatus simrecon_basis_shape(const struct SimreconBasis *basis,
                                         uint32_t *width,
                                         uint32_t *height,
                                         uint32_t *channels,
                                         uint64_t *rank);

/**
 * `out_pixels = mean + sum_i coords[i] * s_i * u_i`; `k` must equal the
 * rank and `d` the pixel count.
 *
 * # Safety
 * Buffers must hold `k` and `d` elements.
 */
enum SimreconStatus simrecon_basis_synthesize(const struct SimreconBasis *basis,
                                              const double *coords,
                                              size_t k,
                                              float *out_pixels,
                                              size_t d);

/**
 * Coordinates of `pixels` in `basis`.
 *
 * # Safety
 * Buffers must hold `d` and `k` elements.
 */
enum SimreconStatus simrecon_basis_project(const struct SimreconBasis *basis,
                                           const float *pixels,
                                           size_t d,
                                           double *out_coords,
                                           size_t k);

/**
 * Synthetic embedder over `width x height x channels` images. With
 * `flip_concat` the output is twice `embed_dim` long.
 *
 * # Safety
 * `out` must be valid.
 */
enum SimreconStatus simrecon_embedder_new(uint64_t seed,
                                          size_t embed_dim,
                                          uint32_t width,
                                          uint32_t height,
                                          uint32_t channels,
                                          bool flip_concat,
                                          struct SimreconEmbedder **out);

/**
 * # Safety
 * `embedder` must come from [`simrecon_embedder_new`] and not be used afterwards.
 */
void simrecon_embedder_free(struct SimreconEmbedder *embedder);

/**
 * Length of the vectors written by [`simrecon_embed`], or 0 for NULL.
 *
 * # Safety
 * `embedder` must be a live handle or NULL.
 */
size_t simrecon_embedder_output_dim(const struct SimreconEmbedder *embedder);

/**
 * # Safety
 * `pixels` must hold `d` floats and `out` `out_len` doubles.
 */
enum SimreconStatus simrecon_embed(const struct SimreconEmbedder *embedder,
                                   const float *pixels,
                                   size_t d,
                                   double *out,
                                   size_t out_len);

/**
 * Cosine similarity of two length-`n` vectors.
 *
 * # Safety
 * `a` and `b` must hold `n` doubles; `out` must be valid.
 */
enum SimreconStatus simrecon_cosine(const double *a, const double *b, size_t n, double *out);

/**
 * Cosine oracle with a single enrolled identity `target_id` whose image is
 * `pixels`. `budget` may be [`SIMRECON_UNLIMITED`].
 *
 * # Safety
 * `pixels` must hold `d` floats; strings must be NUL-terminated.
 */
enum SimreconStatus simrecon_oracle_new_cosine(const struct SimreconEmbedder *embedder,
                                               const char *target_id,
                                               const float *pixels,
                                               size_t d,
                                               uint64_t budget,
                                               struct SimreconOracle **out);

/**
 * Oracle answering through a netbox server at `address` (`host:port`).
 *
 * # Safety
 * Strings must be NUL-terminated; `out` must be valid.
 */
enum SimreconStatus simrecon_oracle_connect(const char *address,
                                            const char *target_id,
                                            uint64_t budget,
                                            struct SimreconOracle **out);

/**
 * # Safety
 * `oracle` must come from an oracle constructor and not be used afterwards.
 */
void simrecon_oracle_free(struct SimreconOracle *oracle);

/**
 * Scores one image against the oracle's target, charging one query.
 *
 * # Safety
 * `pixels` must hold `width * height * channels` floats.
 */
enum SimreconStatus simrecon_oracle_query(const struct SimreconOracle *oracle,
                                          uint32_t width,
                                          uint32_t height,
                                          uint32_t channels,
                                          const float *pixels,
                                          double *out_score);

/**
 * Queries charged so far, or 0 for NULL.
 *
 * # Safety
 * `oracle` must be a live handle or NULL.
 */
uint64_t simrecon_oracle_queries_used(const struct SimreconOracle *oracle);

/**
 * Default optimizer settings.
 */
struct SimreconOptimizerConfig simrecon_optimizer_config_default(void);

/**
 * Runs the full multi-start reconstruction of the oracle's target.
 * On success writes the final coordinates (`k` = rank), the unclamped image
 * (`d` = basis dim) and the queries consumed. On a budget or connection
 * failure the best partial result is still written.
 *
 * # Safety
 * Buffers must hold `k` and `d` elements; `queries_used` may be NULL.
 */
enum SimreconStatus simrecon_reconstruct(const struct SimreconBasis *basis,
                                         const struct SimreconOracle *oracle,
                                         const struct SimreconOptimizerConfig *config,
                                         double *out_coords,
                                         size_t k,
                                         float *out_pixels,
                                         size_t d,
                                         uint64_t *queries_used);

/**
 * K-fold verification accuracy over `n` scored pairs; `same[i]` is 1 for a
 * genuine pair and 0 otherwise. Per-fold accuracies are written to
 * `out_fold_accuracies` when it is not NULL (it must then hold `folds`).
 *
 * # Safety
 * `scores` and `same` must hold `n` elements.
 */
enum SimreconStatus simrecon_kfold_accuracy(const double *scores,
                                            const uint8_t *same,
                                            size_t n,
                                            size_t folds,
                                            double *out_mean,
                                            double *out_fold_accuracies);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMRECON_H */
