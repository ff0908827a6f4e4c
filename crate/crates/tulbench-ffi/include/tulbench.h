/* C interface to the trajectory-user linking benchmark core. */

#ifndef TULBENCH_H
#define TULBENCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Sampler selecting the d largest distinct venue IDs.
#define TUL_SAMPLER_MAX 0

// Sampler selecting the d smallest distinct venue IDs.
#define TUL_SAMPLER_MIN 1

// Sampler selecting the d distinct venue IDs closest to the median rank.
#define TUL_SAMPLER_MEDIAN 2

// Status code of every interface call.
typedef enum TulStatus {
  // The call succeeded and every out-pointer was written.
  TUL_STATUS_OK = 0,
  // A required pointer argument was null.
  TUL_STATUS_NULL_ARGUMENT = 1,
  // An argument failed validation; see tul_last_error_message().
  TUL_STATUS_INVALID_ARGUMENT = 2,
  // Encoding dimension outside the supported 1..=3 range.
  TUL_STATUS_INVALID_DIMENSION = 3,
  // A required input collection was empty.
  TUL_STATUS_EMPTY_INPUT = 4,
  // Row or query width does not match the index dimension.
  TUL_STATUS_DIMENSION_MISMATCH = 5,
  // Neighbor count k was zero or exceeded the training size.
  TUL_STATUS_K_OUT_OF_RANGE = 6,
  // A coordinate exceeded the exact-arithmetic bound of 2^63 - 1.
  TUL_STATUS_COORDINATE_OVERFLOW = 7,
  // An operating-system I/O operation failed.
  TUL_STATUS_IO = 8,
  // A stored index failed validation while loading.
  TUL_STATUS_CORRUPT_INDEX = 9,
  // An unexpected internal failure; see tul_last_error_message().
  TUL_STATUS_INTERNAL = 10,
} TulStatus;

// Opaque immutable nearest-neighbor index over encoded trajectories.
typedef struct TulIndex TulIndex;

// One query result row. `dist2_hi`/`dist2_lo` are the high and low 64-bit
// halves of the exact 128-bit squared Euclidean distance.
typedef struct TulNeighbor {
  // User label of the training point.
  uint64_t label;
  // Position in the canonical training order; the tie-break key.
  uint64_t train_index;
  uint64_t dist2_hi;
  uint64_t dist2_lo;
} TulNeighbor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on the calling thread, as a
// NUL-terminated UTF-8 string. The pointer stays valid until the next
// failing call on the same thread. Never null; empty before any failure.
const char *tul_last_error_message(void);

// Crate version as a static NUL-terminated string.
const char *tul_version(void);

// Builds an index from `n_points` rows of `d` coordinates each, with one
// label per row. On `Ok`, `*out_index` owns the new index.
//
// # Safety
// `coords` must point to `n_points * d` readable u64 values, `labels` to
// `n_points` values, and `out_index` to a writable pointer slot.
enum TulStatus tul_index_build(uint32_t d,
                               const uint64_t *coords,
                               const uint64_t *labels,
                               uint64_t n_points,
                               struct TulIndex **out_index);

// Releases an index. A null pointer is a no-op; passing the same handle
// twice is undefined behavior.
//
// # Safety
// `index` must be a handle from `tul_index_build` or `tul_index_load`
// that has not been freed.
void tul_index_free(struct TulIndex *index);

// Writes the index dimension to `*out_d`.
//
// # Safety
// `index` must be a live handle and `out_d` writable.
enum TulStatus tul_index_dimension(const struct TulIndex *index, uint32_t *out_d);

// Writes the number of training points to `*out_len`.
//
// # Safety
// `index` must be a live handle and `out_len` writable.
enum TulStatus tul_index_len(const struct TulIndex *index, uint64_t *out_len);

// Writes the k exact nearest neighbors of `query`, ordered by (distance,
// train index), into `out_neighbors` and their count into `*out_count`.
//
// # Safety
// `query` must point to d readable values (d = index dimension),
// `out_neighbors` to k writable entries, `out_count` to a writable slot.
enum TulStatus tul_index_query(const struct TulIndex *index,
                               const uint64_t *query,
                               uint64_t k,
                               struct TulNeighbor *out_neighbors,
                               uint64_t *out_count);

// Writes the majority-vote label over the k nearest neighbors to
// `*out_label`. Ties break deterministically: smaller summed squared
// distance, then the nearest neighbor's label, then the smallest label.
//
// # Safety
// `query` must point to d readable values and `out_label` be writable.
enum TulStatus tul_index_predict(const struct TulIndex *index,
                                 const uint64_t *query,
                                 uint64_t k,
                                 uint64_t *out_label);

// Writes up to `max_labels` distinct labels ranked for ACC@K evaluation:
// rank 1 is the `tul_index_predict` winner, the rest follow by vote count
// and proximity, extending outward through farther neighbors when the k
// nearest carry too few distinct labels. `*out_count` receives the number
// written, which is below `max_labels` only when the whole training set
// holds fewer distinct labels.
//
// # Safety
// `query` must point to d readable values, `out_labels` to `max_labels`
// writable slots and `out_count` to a writable slot.
enum TulStatus tul_index_rank_labels(const struct TulIndex *index,
                                     const uint64_t *query,
                                     uint64_t k,
                                     uint64_t max_labels,
                                     uint64_t *out_labels,
                                     uint64_t *out_count);

// Serializes the index to a file at the NUL-terminated UTF-8 `path`.
//
// # Safety
// `index` must be a live handle and `path` a NUL-terminated string.
enum TulStatus tul_index_save(const struct TulIndex *index, const char *path);

// Loads an index saved by `tul_index_save`, verifying its integrity. On
// `Ok`, `*out_index` owns the new index.
//
// # Safety
// `path` must be a NUL-terminated string and `out_index` writable.
enum TulStatus tul_index_load(const char *path, struct TulIndex **out_index);

// Reduces a venue-ID multiset to its d-vector in non-increasing order,
// writing exactly d values to `out_vector`. `sampler` is one of the
// `TUL_SAMPLER_*` codes; fewer than d distinct venues repeat the
// sampler's last selected ID.
//
// # Safety
// `venues` must point to `n_venues` readable values and `out_vector` to
// d writable slots.
enum TulStatus tul_encode(const uint64_t *venues,
                          uint64_t n_venues,
                          uint32_t d,
                          uint32_t sampler,
                          uint64_t *out_vector);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TULBENCH_H */
