#ifndef CONVOI_H
#define CONVOI_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum ConvoiStatus {
  CONVOI_STATUS_OK = 0,
  CONVOI_STATUS_NULL_ARGUMENT = 1,
  CONVOI_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The scenario file failed to parse or validate.
   */
  CONVOI_STATUS_SCENARIO = 3,
  CONVOI_STATUS_IO = 4,
  /**
   * The point or pixel is outside the camera view.
   */
  CONVOI_STATUS_OUT_OF_VIEW = 5,
  CONVOI_STATUS_INTERNAL = 6,
} ConvoiStatus;

/**
 * Opaque simulation handle.
 */
typedef struct ConvoiSim ConvoiSim;

typedef struct ConvoiCamera {
  double focal_px;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double mount_height;
  double mount_pitch;
  double theta_fov;
} ConvoiCamera;

typedef struct ConvoiPose {
  double x;
  double y;
  double theta;
} ConvoiPose;

typedef struct ConvoiStep {
  uint64_t tick;
  struct ConvoiPose pose;
  double v;
  double omega;
  bool collision;
  bool goal_reached;
} ConvoiStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *convoi_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *convoi_version(void);

/**
 * Discrete Fréchet distance between two polylines given as interleaved
 * `x0, y0, x1, y1, ...` arrays of `a_len` and `b_len` points.
 *
 * # Safety
 * `a_xy` and `b_xy` must point to `2 * len` readable doubles, `out` to a writable double.
 */
enum ConvoiStatus convoi_frechet(const double *a_xy,
                                 uintptr_t a_len,
                                 const double *b_xy,
                                 uintptr_t b_len,
                                 double *out);

/**
 * Like [`convoi_frechet`] but both curves are first resampled at 0.1 m arc
 * length, which is how trajectories are compared with ground truth.
 *
 * # Safety
 * Same contract as [`convoi_frechet`].
 */
enum ConvoiStatus convoi_trajectory_frechet(const double *a_xy,
                                            uintptr_t a_len,
                                            const double *b_xy,
                                            uintptr_t b_len,
                                            double *out);

/**
 * Writes the default camera (640x480, f = 160 px, 1 m high, pitched 0.25 rad down).
 *
 * # Safety
 * `out` must be writable or null.
 */
enum ConvoiStatus convoi_camera_default(struct ConvoiCamera *out);

/**
 * Projects a robot-frame ground point to a pixel. Returns `OutOfView` when the
 * point is behind the camera, outside the field of view or off the image.
 *
 * # Safety
 * `cam` must be readable, `u` and `v` writable.
 */
enum ConvoiStatus convoi_project_ground(const struct ConvoiCamera *cam,
                                        double x,
                                        double y,
                                        double *u,
                                        double *v);

/**
 * Intersects the ray through pixel `(u, v)` with the ground plane.
 *
 * # Safety
 * `cam` must be readable, `x` and `y` writable.
 */
enum ConvoiStatus convoi_pixel_to_ground(const struct ConvoiCamera *cam,
                                         double u,
                                         double v,
                                         double *x,
                                         double *y);

/**
 * Loads a scenario file and builds a simulation with the built-in oracle
 * backend. `baseline` non-zero runs the plain planner without any VLM.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` writable. The handle must be
 * released with [`convoi_sim_free`].
 */
enum ConvoiStatus convoi_sim_load(const char *path, bool baseline, struct ConvoiSim **out);

/**
 * Releases a handle from [`convoi_sim_load`]. Null is ignored.
 *
 * # Safety
 * `sim` must come from [`convoi_sim_load`] and not be used afterwards.
 */
void convoi_sim_free(struct ConvoiSim *sim);

/**
 * Advances one tick under the navigator. `out` may be null.
 *
 * # Safety
 * `sim` must be a live handle, `out` writable or null.
 */
enum ConvoiStatus convoi_sim_step(struct ConvoiSim *sim, struct ConvoiStep *out);

/**
 * Advances one tick with an external velocity command (clamped to the robot
 * limits and stopped short of obstacles). `out` may be null.
 *
 * # Safety
 * `sim` must be a live handle, `out` writable or null.
 */
enum ConvoiStatus convoi_sim_step_manual(struct ConvoiSim *sim,
                                         double v,
                                         double omega,
                                         struct ConvoiStep *out);

/**
 * Current odometry pose.
 *
 * # Safety
 * `sim` must be a live handle, `out` writable.
 */
enum ConvoiStatus convoi_sim_pose(const struct ConvoiSim *sim, struct ConvoiPose *out);

/**
 * Whether the robot is within the goal tolerance.
 *
 * # Safety
 * `sim` must be a live handle, `out` writable.
 */
enum ConvoiStatus convoi_sim_goal_reached(const struct ConvoiSim *sim, bool *out);

/**
 * Number of query requests sent to the VLM backend so far.
 *
 * # Safety
 * `sim` must be a live handle, `out` writable.
 */
enum ConvoiStatus convoi_sim_query_count(const struct ConvoiSim *sim, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVOI_H */
