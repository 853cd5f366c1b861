#ifndef UERW_H
#define UERW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define UERW_OCTANT_MISSING 255

#define UERW_ANALYZED_OCTANTS 6

/**
 * Result code of every fallible call.
 */
typedef enum UerwStatus {
  UERW_STATUS_OK = 0,
  UERW_STATUS_NULL_POINTER = 1,
  UERW_STATUS_INVALID_ARGUMENT = 2,
  UERW_STATUS_IO = 3,
  UERW_STATUS_DATA = 4,
  UERW_STATUS_NUMERICAL = 5,
  UERW_STATUS_PANIC = 6,
} UerwStatus;

typedef enum UerwLandmarks {
  /**
   * clavicle, backneck, upper_back, radial_wrist, ulnar_wrist
   */
  UERW_LANDMARKS_KEYPOINTS = 0,
  /**
   * STRN, T1, T8, RWRA, RWRB
   */
  UERW_LANDMARKS_MARKERS = 1,
} UerwLandmarks;

/**
 * Target sphere handle.
 */
typedef struct UerwSphere UerwSphere;

/**
 * A loaded 3D keypoint trajectory.
 */
typedef struct UerwTrajectory UerwTrajectory;

typedef struct UerwTorsoFrame {
  double origin[3];
  double ml_axis[3];
  double ap_axis[3];
  double v_axis[3];
} UerwTorsoFrame;

typedef struct UerwOctantScore {
  uint8_t octant;
  size_t available;
  size_t reached;
} UerwOctantScore;

typedef struct UerwWorkspaceReport {
  double peak_reach;
  /**
   * Analyzed octants in reporting order.
   */
  struct UerwOctantScore octants[UERW_ANALYZED_OCTANTS];
} UerwWorkspaceReport;

typedef struct UerwBlandAltman {
  size_t n;
  double mean_difference;
  double sd;
  double lower_limit;
  double upper_limit;
} UerwBlandAltman;

typedef struct UerwOctantAgreement {
  uint8_t octant;
  size_t frames;
  size_t agreements;
  size_t ml_errors;
  size_t ap_errors;
  size_t si_errors;
} UerwOctantAgreement;

typedef struct UerwCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  /**
   * Row-major world→camera rotation.
   */
  double rotation[9];
  /**
   * World→camera translation, meters.
   */
  double translation[3];
} UerwCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *uerw_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length in bytes
 * plus one for the terminator, so callers can size a buffer by calling with
 * `len` 0.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t uerw_last_error_message(char *buf, size_t len);

/**
 * Loads a CSV or JSONL trajectory (chosen by extension).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UerwStatus uerw_trajectory_load(const char *path, struct UerwTrajectory **out);

/**
 * # Safety
 * `traj` must come from `uerw_trajectory_load` and not be used afterwards.
 */
void uerw_trajectory_free(struct UerwTrajectory *traj);

/**
 * Number of frames; 0 for a null handle.
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
size_t uerw_trajectory_frame_count(const struct UerwTrajectory *traj);

/**
 * Number of keypoints; 0 for a null handle.
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
size_t uerw_trajectory_keypoint_count(const struct UerwTrajectory *traj);

/**
 * Builds the torso frame from three landmark positions (each 3 doubles).
 *
 * # Safety
 * Each input must point to 3 doubles; `out` must be writable.
 */
enum UerwStatus uerw_torso_frame_build(const double *sternal_notch,
                                       const double *t1,
                                       const double *t8,
                                       struct UerwTorsoFrame *out);

/**
 * Octant code of a torso-local point (3 doubles). Returns
 * `UERW_OCTANT_MISSING` for a null pointer.
 *
 * # Safety
 * `p` must point to 3 doubles or be null.
 */
uint8_t uerw_octant_classify(const double *p);

/**
 * Scores a loaded trajectory end to end.
 *
 * # Safety
 * `traj` must be a live handle; `out` must be writable.
 */
enum UerwStatus uerw_score_trajectory(const struct UerwTrajectory *traj,
                                      enum UerwLandmarks landmarks,
                                      size_t n_targets,
                                      double capture_radius,
                                      uint64_t seed,
                                      struct UerwWorkspaceReport *out);

/**
 * Scores torso-local wrist positions given as `n` xyz triples. `present`
 * may be null (all present) or hold `n` flags.
 *
 * # Safety
 * `xyz` must hold `3 * n` doubles; `present` null or `n` bytes; `out` writable.
 */
enum UerwStatus uerw_score_wrist(const double *xyz,
                                 const uint8_t *present,
                                 size_t n,
                                 size_t n_targets,
                                 double capture_radius,
                                 uint64_t seed,
                                 struct UerwWorkspaceReport *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum UerwStatus uerw_sphere_generate(double radius,
                                     size_t n,
                                     uint64_t seed,
                                     struct UerwSphere **out);

/**
 * # Safety
 * `sphere` must be a live handle or null.
 */
size_t uerw_sphere_len(const struct UerwSphere *sphere);

/**
 * Position (3 doubles) and octant code of target `i`.
 *
 * # Safety
 * `sphere` must be live; `xyz` writable for 3 doubles; `octant` writable or null.
 */
enum UerwStatus uerw_sphere_target(const struct UerwSphere *sphere,
                                   size_t i,
                                   double *xyz,
                                   uint8_t *octant);

/**
 * # Safety
 * `sphere` must come from `uerw_sphere_generate` and not be used afterwards.
 */
void uerw_sphere_free(struct UerwSphere *sphere);

double uerw_huber(double r, double delta);

/**
 * Bland–Altman statistics of `test[i] - reference[i]`.
 *
 * # Safety
 * `test` and `reference` must hold `n` doubles; `out` writable.
 */
enum UerwStatus uerw_bland_altman(const double *test,
                                  const double *reference,
                                  size_t n,
                                  struct UerwBlandAltman *out);

/**
 * Agreement tallies for all 8 reference octants (order: the 6 analyzed,
 * then Sup. Post. Contra., Inf. Post. Contra.). Labels are octant codes or
 * `UERW_OCTANT_MISSING`.
 *
 * # Safety
 * `reference` and `test` must hold `n` bytes; `out` must hold 8 entries;
 * `excluded` writable or null.
 */
enum UerwStatus uerw_agreement(const uint8_t *reference,
                               const uint8_t *test,
                               size_t n,
                               struct UerwOctantAgreement *out,
                               size_t *excluded);

/**
 * Projects a world point (3 doubles) to pixels (2 doubles).
 *
 * # Safety
 * `camera` must be readable, `p` 3 doubles, `uv` writable for 2 doubles.
 */
enum UerwStatus uerw_camera_project(const struct UerwCamera *camera, const double *p, double *uv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UERW_H */
