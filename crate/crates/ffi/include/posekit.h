#ifndef POSEKIT_H
#define POSEKIT_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum PosekitStatus {
  POSEKIT_STATUS_OK = 0,
  POSEKIT_STATUS_NULL_POINTER = 1,
  POSEKIT_STATUS_INVALID_ARGUMENT = 2,
  POSEKIT_STATUS_DEGENERATE = 3,
  POSEKIT_STATUS_IO = 4,
  POSEKIT_STATUS_PARSE = 5,
  POSEKIT_STATUS_PANIC = 6,
  POSEKIT_STATUS_OUT_OF_RANGE = 7,
} PosekitStatus;

// Pinhole camera with the depth range of the depth head.
typedef struct PosekitCamera PosekitCamera;

// Result of [`posekit_decode`].
typedef struct PosekitDetections PosekitDetections;

// Object model used by the ADD and ADD-S metrics.
typedef struct PosekitModel PosekitModel;

// One decoded detection.
typedef struct PosekitDetection {
  double score;
  // `(cx, cy, w, h)`, pixels.
  double bbox[4];
  double r[9];
  double t[3];
  // `(u, v, visible)` per keypoint.
  double kps[27];
} PosekitDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Length in bytes of the last error message on this thread, without the
// terminating NUL; 0 when there is none.
size_t posekit_last_error_length(void);

// Copies the last error message (NUL terminated, truncated to `len`) into
// `buf`. Returns the number of bytes written excluding the NUL.
//
// # Safety
// `buf` must be valid for `len` bytes.
size_t posekit_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *posekit_version(void);

// # Safety
// `out` must be valid for one pointer write.
enum PosekitStatus posekit_camera_new(double fx,
                                      double fy,
                                      double cx,
                                      double cy,
                                      double dist_min,
                                      double dist_max,
                                      struct PosekitCamera **out);

// # Safety
// `cam` must come from [`posekit_camera_new`] and not be used afterwards.
void posekit_camera_free(struct PosekitCamera *cam);

// Model from `n` points (`xyz` holds `3n` doubles, meters). A diameter
// `<= 0` is computed from the points.
//
// # Safety
// `xyz` must hold `3 * n` doubles; `out` must be valid for one pointer write.
enum PosekitStatus posekit_model_from_points(const double *xyz,
                                             size_t n,
                                             double diameter,
                                             bool symmetric,
                                             struct PosekitModel **out);

// Loads a PLY model (plus optional `<stem>.json` sidecar).
//
// # Safety
// `path` must be a NUL-terminated string; `out` valid for one pointer write.
enum PosekitStatus posekit_model_load(const char *path, struct PosekitModel **out);

// Model diameter in meters, or a negative value for a null handle.
//
// # Safety
// `model` must be null or a live handle.
double posekit_model_diameter(const struct PosekitModel *model);

// # Safety
// `model` must come from a `posekit_model_*` constructor and not be used afterwards.
void posekit_model_free(struct PosekitModel *model);

// Nearest rotation (Frobenius) to a 3×3 matrix.
//
// # Safety
// `m` must hold 9 doubles and `r_out` have room for 9.
enum PosekitStatus posekit_svd_project(const double *m, double *r_out);

// Geodesic angle between two rotations, radians.
//
// # Safety
// `a` and `b` must hold 9 doubles; `out` must be valid.
enum PosekitStatus posekit_geodesic(const double *a, const double *b, double *out);

// ADD (`symmetric_metric` false) or ADD-S (true) in meters.
//
// # Safety
// `model` must be a live handle; rotations hold 9 doubles, translations 3.
enum PosekitStatus posekit_pose_error(const struct PosekitModel *model,
                                      const double *r_gt,
                                      const double *t_gt,
                                      const double *r_pred,
                                      const double *t_pred,
                                      bool symmetric_metric,
                                      double *out);

// CIoU loss of `(cx, cy, w, h)` boxes and its gradient with respect to `pred`.
//
// # Safety
// `pred` and `gt` hold 4 doubles; `grad_out` may be null or have room for 4.
enum PosekitStatus posekit_ciou_loss(const double *pred,
                                     const double *gt,
                                     double *value_out,
                                     double *grad_out);

// Metric depth from the normalized depth `sigma ∈ [0, 1]`.
//
// # Safety
// `cam` must be a live handle and `out` valid.
enum PosekitStatus posekit_depth_decode(const struct PosekitCamera *cam, double sigma, double *out);

// Number of raw doubles per detection expected by [`posekit_decode`].
size_t posekit_raw_stride(void);

// Decodes `n` raw head outputs (`posekit_raw_stride()` doubles each:
// score logit, box, 9D rotation, depth logit, center, then `(u, v, vis
// logit)` per keypoint), applies the score threshold and NMS.
//
// # Safety
// `raw` must hold `n * posekit_raw_stride()` doubles; `cam` must be live;
// `out` valid for one pointer write.
enum PosekitStatus posekit_decode(const struct PosekitCamera *cam,
                                  const double *raw,
                                  size_t n,
                                  double score_threshold,
                                  double iou_threshold,
                                  struct PosekitDetections **out);

// # Safety
// `dets` must be null or a live handle.
size_t posekit_detections_len(const struct PosekitDetections *dets);

// Candidates that passed the score threshold but failed to decode.
//
// # Safety
// `dets` must be null or a live handle.
size_t posekit_detections_dropped(const struct PosekitDetections *dets);

// # Safety
// `dets` must be a live handle and `out` valid.
enum PosekitStatus posekit_detections_get(const struct PosekitDetections *dets,
                                          size_t index,
                                          struct PosekitDetection *out);

// # Safety
// `dets` must come from [`posekit_decode`] and not be used afterwards.
void posekit_detections_free(struct PosekitDetections *dets);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POSEKIT_H */
