//! C ABI over posekit.
//!
//! Every fallible call returns a [`PosekitStatus`]; on failure the message is
//! kept per thread and read with [`posekit_last_error_message`]. Objects
//! cross the boundary as opaque handles that the caller frees exactly once.
//! Rotations are row-major `double[9]`, translations `double[3]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use posekit::decode::{batch_decode, DecodeConfig, Detection6D, RawDetection, RAW_FLOATS};
use posekit::evalkit::{add_metric, adds_metric, load_model, NnMode, ObjectModel};
use posekit::geometry::{depth_decode, geodesic_distance, svd_project_so3, CameraModel, NineD, Pose, Rot3, Vec3};
use posekit::losses::{ciou_loss, Box2D};
use posekit::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosekitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Degenerate = 3,
    Io = 4,
    Parse = 5,
    Panic = 6,
    OutOfRange = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> PosekitStatus {
    match e {
        Error::DegenerateMatrix(_) | Error::DegenerateInput(_) | Error::NearDegenerateSvd { .. } => {
            PosekitStatus::Degenerate
        }
        Error::Io { .. } => PosekitStatus::Io,
        Error::Parse { .. } => PosekitStatus::Parse,
        Error::Range { .. } | Error::BehindCamera { .. } | Error::InvalidDepth(_) => PosekitStatus::OutOfRange,
        _ => PosekitStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), PosekitStatus>) -> PosekitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PosekitStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            PosekitStatus::Panic
        }
    }
}

fn fail(e: Error) -> PosekitStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> PosekitStatus {
    set_error(format!("{what} is null"));
    PosekitStatus::NullPointer
}

unsafe fn read<const N: usize>(p: *const f64, what: &str) -> Result<[f64; N], PosekitStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    let mut out = [0.0; N];
    out.copy_from_slice(std::slice::from_raw_parts(p, N));
    Ok(out)
}

unsafe fn write<const N: usize>(p: *mut f64, v: &[f64; N], what: &str) -> Result<(), PosekitStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    std::slice::from_raw_parts_mut(p, N).copy_from_slice(v);
    Ok(())
}

unsafe fn pose_from(r: *const f64, t: *const f64, what: &str) -> Result<Pose, PosekitStatus> {
    let r = Rot3::from_row_major(&read::<9>(r, what)?).map_err(fail)?;
    let t = read::<3>(t, what)?;
    Ok(Pose::new(r, Vec3::new(t[0], t[1], t[2])))
}

/// Length in bytes of the last error message on this thread, without the
/// terminating NUL; 0 when there is none.
#[no_mangle]
pub extern "C" fn posekit_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |s| s.as_bytes().len()))
}

/// Copies the last error message (NUL terminated, truncated to `len`) into
/// `buf`. Returns the number of bytes written excluding the NUL.
///
/// # Safety
/// `buf` must be valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn posekit_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |s| s.as_bytes());
        let n = bytes.len().min(len - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn posekit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Pinhole camera with the depth range of the depth head.
pub struct PosekitCamera {
    inner: CameraModel,
}

/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn posekit_camera_new(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    dist_min: f64,
    dist_max: f64,
    out: *mut *mut PosekitCamera,
) -> PosekitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = CameraModel::new(fx, fy, cx, cy, dist_min, dist_max).map_err(fail)?;
        *out = Box::into_raw(Box::new(PosekitCamera { inner }));
        Ok(())
    })
}

/// # Safety
/// `cam` must come from [`posekit_camera_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn posekit_camera_free(cam: *mut PosekitCamera) {
    if !cam.is_null() {
        drop(Box::from_raw(cam));
    }
}

/// Object model used by the ADD and ADD-S metrics.
pub struct PosekitModel {
    inner: ObjectModel,
}

/// Model from `n` points (`xyz` holds `3n` doubles, meters). A diameter
/// `<= 0` is computed from the points.
///
/// # Safety
/// `xyz` must hold `3 * n` doubles; `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn posekit_model_from_points(
    xyz: *const f64,
    n: usize,
    diameter: f64,
    symmetric: bool,
    out: *mut *mut PosekitModel,
) -> PosekitStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let flat = std::slice::from_raw_parts(xyz, 3 * n);
        let points = flat.chunks_exact(3).map(|p| Vec3::new(p[0], p[1], p[2])).collect();
        let d = (diameter > 0.0).then_some(diameter);
        let inner = ObjectModel::new("model", points, d, symmetric).map_err(fail)?;
        *out = Box::into_raw(Box::new(PosekitModel { inner }));
        Ok(())
    })
}

/// Loads a PLY model (plus optional `<stem>.json` sidecar).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn posekit_model_load(path: *const c_char, out: *mut *mut PosekitModel) -> PosekitStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| {
            set_error("path is not UTF-8");
            PosekitStatus::InvalidArgument
        })?;
        let inner = load_model(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(PosekitModel { inner }));
        Ok(())
    })
}

/// Model diameter in meters, or a negative value for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn posekit_model_diameter(model: *const PosekitModel) -> f64 {
    model.as_ref().map_or(-1.0, |m| m.inner.diameter)
}

/// # Safety
/// `model` must come from a `posekit_model_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn posekit_model_free(model: *mut PosekitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Nearest rotation (Frobenius) to a 3×3 matrix.
///
/// # Safety
/// `m` must hold 9 doubles and `r_out` have room for 9.
#[no_mangle]
pub unsafe extern "C" fn posekit_svd_project(m: *const f64, r_out: *mut f64) -> PosekitStatus {
    guard(|| {
        let m = read::<9>(m, "m")?;
        let r = svd_project_so3(&NineD(m)).map_err(fail)?;
        write(r_out, &r.to_row_major(), "r_out")
    })
}

/// Geodesic angle between two rotations, radians.
///
/// # Safety
/// `a` and `b` must hold 9 doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn posekit_geodesic(a: *const f64, b: *const f64, out: *mut f64) -> PosekitStatus {
    guard(|| {
        let a = Rot3::from_row_major(&read::<9>(a, "a")?).map_err(fail)?;
        let b = Rot3::from_row_major(&read::<9>(b, "b")?).map_err(fail)?;
        write(out, &[geodesic_distance(&a, &b)], "out")
    })
}

/// ADD (`symmetric_metric` false) or ADD-S (true) in meters.
///
/// # Safety
/// `model` must be a live handle; rotations hold 9 doubles, translations 3.
#[no_mangle]
pub unsafe extern "C" fn posekit_pose_error(
    model: *const PosekitModel,
    r_gt: *const f64,
    t_gt: *const f64,
    r_pred: *const f64,
    t_pred: *const f64,
    symmetric_metric: bool,
    out: *mut f64,
) -> PosekitStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let gt = pose_from(r_gt, t_gt, "ground truth")?;
        let pred = pose_from(r_pred, t_pred, "prediction")?;
        let e = if symmetric_metric {
            adds_metric(model, &gt, &pred, NnMode::Accelerated)
        } else {
            add_metric(model, &gt, &pred)
        };
        write(out, &[e], "out")
    })
}

/// CIoU loss of `(cx, cy, w, h)` boxes and its gradient with respect to `pred`.
///
/// # Safety
/// `pred` and `gt` hold 4 doubles; `grad_out` may be null or have room for 4.
#[no_mangle]
pub unsafe extern "C" fn posekit_ciou_loss(
    pred: *const f64,
    gt: *const f64,
    value_out: *mut f64,
    grad_out: *mut f64,
) -> PosekitStatus {
    guard(|| {
        let p = read::<4>(pred, "pred")?;
        let g = read::<4>(gt, "gt")?;
        let l = ciou_loss(&Box2D::new(p[0], p[1], p[2], p[3]), &Box2D::new(g[0], g[1], g[2], g[3])).map_err(fail)?;
        write(value_out, &[l.value], "value_out")?;
        if !grad_out.is_null() {
            write(grad_out, &l.grad, "grad_out")?;
        }
        Ok(())
    })
}

/// Metric depth from the normalized depth `sigma ∈ [0, 1]`.
///
/// # Safety
/// `cam` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn posekit_depth_decode(cam: *const PosekitCamera, sigma: f64, out: *mut f64) -> PosekitStatus {
    guard(|| {
        let cam = &cam.as_ref().ok_or_else(|| null("cam"))?.inner;
        write(out, &[depth_decode(sigma, cam).map_err(fail)?], "out")
    })
}

/// One decoded detection.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PosekitDetection {
    pub score: f64,
    /// `(cx, cy, w, h)`, pixels.
    pub bbox: [f64; 4],
    pub r: [f64; 9],
    pub t: [f64; 3],
    /// `(u, v, visible)` per keypoint.
    pub kps: [f64; 27],
}

impl From<&Detection6D> for PosekitDetection {
    fn from(d: &Detection6D) -> Self {
        let mut kps = [0.0; 27];
        for (i, k) in d.kps.iter().enumerate() {
            kps[3 * i] = k.u;
            kps[3 * i + 1] = k.v;
            kps[3 * i + 2] = if k.visible { 1.0 } else { 0.0 };
        }
        PosekitDetection {
            score: d.score,
            bbox: [d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h],
            r: d.pose.r.to_row_major(),
            t: [d.pose.t.x, d.pose.t.y, d.pose.t.z],
            kps,
        }
    }
}

/// Result of [`posekit_decode`].
pub struct PosekitDetections {
    items: Vec<PosekitDetection>,
    dropped: usize,
}

/// Number of raw doubles per detection expected by [`posekit_decode`].
#[no_mangle]
pub extern "C" fn posekit_raw_stride() -> usize {
    RAW_FLOATS
}

/// Decodes `n` raw head outputs (`posekit_raw_stride()` doubles each:
/// score logit, box, 9D rotation, depth logit, center, then `(u, v, vis
/// logit)` per keypoint), applies the score threshold and NMS.
///
/// # Safety
/// `raw` must hold `n * posekit_raw_stride()` doubles; `cam` must be live;
/// `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn posekit_decode(
    cam: *const PosekitCamera,
    raw: *const f64,
    n: usize,
    score_threshold: f64,
    iou_threshold: f64,
    out: *mut *mut PosekitDetections,
) -> PosekitStatus {
    guard(|| {
        let cam = &cam.as_ref().ok_or_else(|| null("cam"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let raws: Vec<RawDetection> = if n == 0 {
            Vec::new()
        } else {
            if raw.is_null() {
                return Err(null("raw"));
            }
            std::slice::from_raw_parts(raw, n * RAW_FLOATS)
                .chunks_exact(RAW_FLOATS)
                .map(RawDetection::from_floats)
                .collect::<Result<_, _>>()
                .map_err(fail)?
        };
        let cfg = DecodeConfig {
            score_threshold,
            iou_threshold,
            ..DecodeConfig::default()
        };
        let res = batch_decode(&raws, cam, &cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(PosekitDetections {
            items: res.detections.iter().map(PosekitDetection::from).collect(),
            dropped: res.dropped,
        }));
        Ok(())
    })
}

/// # Safety
/// `dets` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn posekit_detections_len(dets: *const PosekitDetections) -> usize {
    dets.as_ref().map_or(0, |d| d.items.len())
}

/// Candidates that passed the score threshold but failed to decode.
///
/// # Safety
/// `dets` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn posekit_detections_dropped(dets: *const PosekitDetections) -> usize {
    dets.as_ref().map_or(0, |d| d.dropped)
}

/// # Safety
/// `dets` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn posekit_detections_get(
    dets: *const PosekitDetections,
    index: usize,
    out: *mut PosekitDetection,
) -> PosekitStatus {
    guard(|| {
        let d = dets.as_ref().ok_or_else(|| null("dets"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let item = d.items.get(index).ok_or_else(|| {
            set_error(format!("index {index} out of range for {} detections", d.items.len()));
            PosekitStatus::OutOfRange
        })?;
        *out = *item;
        Ok(())
    })
}

/// # Safety
/// `dets` must come from [`posekit_decode`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn posekit_detections_free(dets: *mut PosekitDetections) {
    if !dets.is_null() {
        drop(Box::from_raw(dets));
    }
}
