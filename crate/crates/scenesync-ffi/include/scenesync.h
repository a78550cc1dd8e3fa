#ifndef SCENESYNC_H
#define SCENESYNC_H

/* Generated by cbindgen from the scenesync-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible API call.
 */
typedef enum SsStatus {
  /**
   * Success.
   */
  SS_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  SS_STATUS_NULL_POINTER = 1,
  /**
   * An argument or parameter value was rejected.
   */
  SS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The referenced asset or track does not exist.
   */
  SS_STATUS_NOT_FOUND = 3,
  /**
   * An asset with the same id is already banked.
   */
  SS_STATUS_DUPLICATE = 4,
  /**
   * A file could not be parsed.
   */
  SS_STATUS_PARSE = 5,
  /**
   * The file system reported an error.
   */
  SS_STATUS_IO = 6,
  /**
   * An input collection was empty where data is required.
   */
  SS_STATUS_EMPTY = 7,
  /**
   * Registration failed or had too few points.
   */
  SS_STATUS_REGISTRATION = 8,
  /**
   * The track exists but is not currently in tracked status.
   */
  SS_STATUS_NOT_TRACKED = 9,
  /**
   * Any other pipeline failure.
   */
  SS_STATUS_PIPELINE = 10,
  /**
   * A string argument was not valid UTF-8.
   */
  SS_STATUS_UTF8 = 11,
  /**
   * An internal panic was caught at the boundary.
   */
  SS_STATUS_PANIC = 12,
} SsStatus;

/**
 * Track status of one object, mirrored across the ABI.
 */
typedef enum SsTrackStatus {
  /**
   * Confidently registered this frame.
   */
  SS_TRACK_STATUS_TRACKED = 0,
  /**
   * Temporarily unobserved; last pose held.
   */
  SS_TRACK_STATUS_OCCLUDED = 1,
  /**
   * Unobserved for too long; no longer contributes geometry.
   */
  SS_TRACK_STATUS_LOST = 2,
} SsTrackStatus;

/**
 * Opaque memory-bank handle (library of canonical object assets).
 */
typedef struct SsBank SsBank;

/**
 * Opaque point cloud handle.
 */
typedef struct SsCloud SsCloud;

/**
 * Opaque tracker handle: sliding-window state plus the updates produced
 * by the most recent step.
 */
typedef struct SsTracker SsTracker;

/**
 * One per-object tracking result, written by `ss_tracker_get_update`.
 */
typedef struct SsTrackUpdate {
  /**
   * Object label the update belongs to.
   */
  int64_t label;
  /**
   * Current track status.
   */
  enum SsTrackStatus status;
  /**
   * Registration inlier fraction in [0, 1].
   */
  double fitness;
  /**
   * World-from-canonical pose, 4×4 row-major.
   */
  double pose[16];
  /**
   * True when the object is backed by a banked asset (completion
   * available), false for hull-only obstacle tracks.
   */
  bool has_asset;
} SsTrackUpdate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ss_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ss_version(void);

/**
 * Creates a cloud from `n` interleaved XYZ points. `rgb` (interleaved
 * RGB in [0,1]) and `labels` may be NULL.
 *
 * # Safety
 * `xyz` must point to `3 * n` doubles; `rgb`, if non-NULL, to `3 * n`
 * doubles; `labels`, if non-NULL, to `n` int64 values.
 */
enum SsStatus ss_cloud_create(const double *xyz,
                              uintptr_t n,
                              const double *rgb,
                              const int64_t *labels,
                              struct SsCloud **out);

/**
 * Reads a cloud from a PLY file (ASCII or binary little-endian).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum SsStatus ss_cloud_read_ply(const char *path, struct SsCloud **out);

/**
 * Writes a cloud as PLY; `binary` selects binary little-endian.
 *
 * # Safety
 * `cloud` must be a live handle; `path` a NUL-terminated string.
 */
enum SsStatus ss_cloud_write_ply(const struct SsCloud *cloud, const char *path, bool binary);

/**
 * Number of points; 0 for NULL.
 *
 * # Safety
 * `cloud` must be NULL or a live handle.
 */
uintptr_t ss_cloud_len(const struct SsCloud *cloud);

/**
 * Copies the interleaved XYZ coordinates into `buf` (`capacity` doubles,
 * must be at least `3 * ss_cloud_len`).
 *
 * # Safety
 * `cloud` must be a live handle; `buf` must point to `capacity` doubles.
 */
enum SsStatus ss_cloud_copy_xyz(const struct SsCloud *cloud, double *buf, uintptr_t capacity);

/**
 * Applies a rigid transform (4×4 row-major) to the cloud in place.
 *
 * # Safety
 * `cloud` must be a live handle; `pose` must point to 16 doubles.
 */
enum SsStatus ss_cloud_transform(struct SsCloud *cloud, const double *pose);

/**
 * Frees a cloud handle; NULL is a no-op.
 *
 * # Safety
 * `cloud` must be NULL or an owned live handle; it is invalid afterwards.
 */
void ss_cloud_free(struct SsCloud *cloud);

/**
 * Registers `source` onto `target` with colored ICP (`use_color`) or
 * geometric point-to-plane ICP. `init` (4×4 row-major) may be NULL for
 * identity. Writes the source-to-target pose and the inlier fitness.
 *
 * # Safety
 * Handles must be live; `out_pose` must point to 16 doubles;
 * `out_fitness` may be NULL.
 */
enum SsStatus ss_register(const struct SsCloud *source,
                          const struct SsCloud *target,
                          const double *init,
                          bool use_color,
                          double *out_pose,
                          double *out_fitness);

/**
 * Creates an empty memory bank.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SsStatus ss_bank_create(struct SsBank **out);

/**
 * Adds an asset: a canonical cloud (centroid at the origin) plus its
 * mesh read from an OBJ file. The cloud is copied.
 *
 * # Safety
 * `bank` and `canonical` must be live handles; `id` and
 * `mesh_obj_path` NUL-terminated strings.
 */
enum SsStatus ss_bank_add(struct SsBank *bank,
                          const char *id,
                          const struct SsCloud *canonical,
                          const char *mesh_obj_path);

/**
 * Number of banked assets; 0 for NULL.
 *
 * # Safety
 * `bank` must be NULL or a live handle.
 */
uintptr_t ss_bank_len(const struct SsBank *bank);

/**
 * Frees a bank handle; NULL is a no-op.
 *
 * # Safety
 * `bank` must be NULL or an owned live handle; it is invalid afterwards.
 */
void ss_bank_free(struct SsBank *bank);

/**
 * Creates a tracker with default parameters.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SsStatus ss_tracker_create(struct SsTracker **out);

/**
 * Ingests one frame: `n` labeled partial clouds observed at `timestamp`
 * (must be non-decreasing). The resulting per-object updates are
 * retrievable until the next step.
 *
 * # Safety
 * `tracker` and `bank` must be live handles; `labels` must point to `n`
 * int64 values and `clouds` to `n` live cloud handles.
 */
enum SsStatus ss_tracker_step(struct SsTracker *tracker,
                              const struct SsBank *bank,
                              double timestamp,
                              const int64_t *labels,
                              const struct SsCloud *const *clouds,
                              uintptr_t n);

/**
 * Number of updates produced by the most recent step; 0 for NULL.
 *
 * # Safety
 * `tracker` must be NULL or a live handle.
 */
uintptr_t ss_tracker_update_count(const struct SsTracker *tracker);

/**
 * Copies update `index` of the most recent step into `out`.
 *
 * # Safety
 * `tracker` must be a live handle; `out` a valid pointer.
 */
enum SsStatus ss_tracker_get_update(const struct SsTracker *tracker,
                                    uintptr_t index,
                                    struct SsTrackUpdate *out);

/**
 * Completes the tracked object `label` from its banked asset: the
 * canonical cloud posed at the current estimate. The returned cloud is a
 * new handle owned by the caller.
 *
 * # Safety
 * `tracker` and `bank` must be live handles; `out` a valid pointer.
 */
enum SsStatus ss_tracker_complete(const struct SsTracker *tracker,
                                  const struct SsBank *bank,
                                  int64_t label,
                                  struct SsCloud **out);

/**
 * Frees a tracker handle; NULL is a no-op.
 *
 * # Safety
 * `tracker` must be NULL or an owned live handle; it is invalid afterwards.
 */
void ss_tracker_free(struct SsTracker *tracker);

/**
 * Weighted success rate in percent: (FA + 0.8 EA) / (FA + EA + CO) × 100.
 * Fails with [`SsStatus::Empty`] when all counts are zero.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SsStatus ss_success_rate(uintptr_t n_fa, uintptr_t n_ea, uintptr_t n_co, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCENESYNC_H */
