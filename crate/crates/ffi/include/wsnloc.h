#ifndef WSNLOC_H
#define WSNLOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum WsnStatus {
  WSN_STATUS_OK = 0,
  WSN_STATUS_NULL_POINTER = 1,
  WSN_STATUS_INVALID_ARGUMENT = 2,
  WSN_STATUS_IO = 3,
  WSN_STATUS_PARSE = 4,
  WSN_STATUS_DIMENSION_MISMATCH = 5,
  WSN_STATUS_OUT_OF_RANGE = 6,
  WSN_STATUS_BUFFER_TOO_SMALL = 7,
  WSN_STATUS_INTERNAL = 8,
} WsnStatus;

// Opaque collection of simulated samples.
typedef struct WsnDataset WsnDataset;

// Opaque trained model restored from a checkpoint.
typedef struct WsnModel WsnModel;

// Routing summary of one sample's topology.
typedef struct WsnComplexity {
  uint64_t total_cost;
  size_t unreachable;
  size_t max_hops;
} WsnComplexity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null if none. The pointer
// stays valid until the next failing call on the same thread.
const char *wsn_last_error(void);

// Library version as a static NUL-terminated string.
const char *wsn_version(void);

// Simulates `topologies * draws` samples. `sim_config_json` may be null for
// defaults; otherwise it is a JSON object of simulation fields.
//
// # Safety
// `sim_config_json` must be null or a valid NUL-terminated string, and `out`
// a valid pointer to writable storage for a handle.
enum WsnStatus wsn_dataset_generate(const char *sim_config_json,
                                    size_t topologies,
                                    size_t draws,
                                    uint64_t seed,
                                    struct WsnDataset **out);

// Reads an NDJSON dataset file.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` writable.
enum WsnStatus wsn_dataset_load(const char *path, struct WsnDataset **out);

// Writes the dataset as NDJSON.
//
// # Safety
// `ds` must be a live dataset handle and `path` a valid NUL-terminated string.
enum WsnStatus wsn_dataset_save(const struct WsnDataset *ds, const char *path);

// Number of samples; 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t wsn_dataset_len(const struct WsnDataset *ds);

// Node count of sample `index`.
//
// # Safety
// `ds` must be a live dataset handle and `nodes` writable.
enum WsnStatus wsn_dataset_nodes(const struct WsnDataset *ds, size_t index, size_t *nodes);

// Copies true positions of sample `index` as interleaved `x, y` pairs into
// `buf`, which must hold at least `2 * nodes` values.
//
// # Safety
// `ds` must be a live dataset handle and `buf` valid for `len` writes.
enum WsnStatus wsn_dataset_positions(const struct WsnDataset *ds,
                                     size_t index,
                                     double *buf,
                                     size_t len);

// Routes sample `index` toward the central unit and reports the total unit
// operation cost, unreachable node count and deepest hop count.
//
// # Safety
// `ds` must be a live dataset handle and `out` writable.
enum WsnStatus wsn_dataset_complexity(const struct WsnDataset *ds,
                                      size_t index,
                                      struct WsnComplexity *out);

// Releases a dataset handle. Null is ignored.
//
// # Safety
// `ds` must be null or a handle not yet freed.
void wsn_dataset_free(struct WsnDataset *ds);

// Restores a model from a checkpoint file written by the trainer.
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` writable.
enum WsnStatus wsn_model_load(const char *path, struct WsnModel **out);

// Node count the model was trained for.
//
// # Safety
// `model` must be null or a live model handle.
size_t wsn_model_nodes(const struct WsnModel *model);

// Predicts coordinates for every node of sample `index` in evaluation mode,
// written as interleaved `x, y` pairs (meters).
//
// # Safety
// Handles must be live and `buf` valid for `len` writes.
enum WsnStatus wsn_model_predict(const struct WsnModel *model,
                                 const struct WsnDataset *ds,
                                 size_t index,
                                 double *buf,
                                 size_t len);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void wsn_model_free(struct WsnModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WSNLOC_H */
