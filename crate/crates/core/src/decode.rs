//! Raw detection-head outputs to final 6-DoF detections.

use std::cmp::Ordering;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diff::sigmoid;
use crate::error::{Error, Result};
use crate::evalkit::StageTimes;
use crate::geometry::{
    backproject_center, depth_decode, depth_encode, project_camera_point, svd_project_so3, CameraModel, Keypoint2D,
    NineD, Pose, PoseJson,
};
use crate::losses::{iou, Box2D};

/// Floats per detection in the binary layout.
pub const RAW_FLOATS: usize = 1 + 4 + 9 + 1 + 2 + 27;

/// One detection as emitted by the network head, before any activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDetection {
    /// Objectness logit.
    pub score: f64,
    /// `(cx, cy, w, h)` in pixels.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub rot9: [f64; 9],
    pub depth_logit: f64,
    /// Projected object center `(o_x, o_y)` in pixels.
    pub center: [f64; 2],
    /// `(u, v, visibility logit)` per keypoint.
    pub kps: [[f64; 3]; 9],
}

impl RawDetection {
    pub fn to_floats(&self) -> [f64; RAW_FLOATS] {
        let mut out = [0.0; RAW_FLOATS];
        out[0] = self.score;
        out[1..5].copy_from_slice(&self.bbox);
        out[5..14].copy_from_slice(&self.rot9);
        out[14] = self.depth_logit;
        out[15..17].copy_from_slice(&self.center);
        out[17..].copy_from_slice(self.kps.as_flattened());
        out
    }

    pub fn from_floats(f: &[f64]) -> Result<Self> {
        if f.len() != RAW_FLOATS {
            return Err(Error::Shape(format!(
                "raw detection needs {RAW_FLOATS} floats, got {}",
                f.len()
            )));
        }
        Ok(RawDetection {
            score: f[0],
            bbox: f[1..5].try_into().unwrap(),
            rot9: f[5..14].try_into().unwrap(),
            depth_logit: f[14],
            center: f[15..17].try_into().unwrap(),
            kps: std::array::from_fn(|i| f[17 + 3 * i..20 + 3 * i].try_into().unwrap()),
        })
    }

    fn is_finite(&self) -> bool {
        self.to_floats().iter().all(|x| x.is_finite())
    }
}

/// A decoded detection.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection6D {
    pub pose: Pose,
    pub score: f64,
    pub bbox: Box2D,
    pub kps: [Keypoint2D; 9],
}

#[derive(Serialize)]
struct DetectionJson<'a> {
    score: f64,
    #[serde(flatten)]
    pose: PoseJson,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    kps: &'a [Keypoint2D; 9],
}

impl Detection6D {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&DetectionJson {
            score: self.score,
            pose: PoseJson::from(&self.pose),
            bbox: [self.bbox.cx, self.bbox.cy, self.bbox.w, self.bbox.h],
            kps: &self.kps,
        })
        .expect("detections serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub visibility_threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            score_threshold: 0.25,
            iou_threshold: 0.65,
            visibility_threshold: 0.5,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64, lo_open: bool| {
            if x.is_finite() && (if lo_open { x > 0.0 } else { x >= 0.0 }) && x <= 1.0 {
                Ok(())
            } else {
                Err(Error::Range {
                    value: x,
                    lo: 0.0,
                    hi: 1.0,
                })
            }
        };
        unit(self.score_threshold, false)?;
        unit(self.visibility_threshold, false)?;
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Range {
                value: self.iou_threshold,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(())
    }
}

/// Activations, depth decoding, backprojection and SVD projection of one raw
/// detection. Keypoints are visible when their sigmoid exceeds 0.5.
pub fn decode_one(raw: &RawDetection, cam: &CameraModel) -> Result<Detection6D> {
    decode_one_with(raw, cam, DecodeConfig::default().visibility_threshold)
}

pub fn decode_one_with(raw: &RawDetection, cam: &CameraModel, visibility_threshold: f64) -> Result<Detection6D> {
    if !raw.is_finite() {
        return Err(Error::Invalid("raw detection has non-finite fields".into()));
    }
    let r = svd_project_so3(&NineD(raw.rot9))?;
    let tz = depth_decode(sigmoid(raw.depth_logit), cam)?;
    let t = backproject_center(cam, raw.center[0], raw.center[1], tz)?;
    let [cx, cy, w, h] = raw.bbox;
    Ok(Detection6D {
        pose: Pose::new(r, t),
        score: sigmoid(raw.score),
        bbox: Box2D::new(cx, cy, w, h),
        kps: raw
            .kps
            .map(|[u, v, l]| Keypoint2D::new(u, v, sigmoid(l) > visibility_threshold)),
    })
}

/// Builds the raw detection whose decoding is `pose`.
pub fn encode(pose: &Pose, cam: &CameraModel, score: f64, bbox: &Box2D, kps: &[Keypoint2D; 9]) -> Result<RawDetection> {
    let sigma = depth_encode(pose.t.z, cam)?;
    let c = project_camera_point(cam, &pose.t)?;
    Ok(RawDetection {
        score: logit(score),
        bbox: [bbox.cx, bbox.cy, bbox.w, bbox.h],
        rot9: pose.r.to_row_major(),
        depth_logit: logit(sigma),
        center: [c.u, c.v],
        kps: kps.map(|k| [k.u, k.v, if k.visible { 4.0 } else { -4.0 }]),
    })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn rank(a: &Detection6D, b: &Detection6D) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.cx.total_cmp(&b.bbox.cx))
        .then(a.bbox.cy.total_cmp(&b.bbox.cy))
}

/// Greedy non-maximum suppression. Candidates are visited by descending
/// score, ties broken by ascending box `cx` then `cy`; a candidate survives
/// when its IoU with every kept box is at most the threshold.
pub fn nms(dets: &[Detection6D], iou_threshold: f64) -> Vec<Detection6D> {
    let mut order: Vec<&Detection6D> = dets.iter().collect();
    order.sort_by(|a, b| rank(a, b));
    let mut kept: Vec<Detection6D> = Vec::new();
    for d in order {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d.clone());
        }
    }
    kept
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecodeOutput {
    pub detections: Vec<Detection6D>,
    /// Above the score threshold but undecodable (degenerate rotation etc.).
    pub dropped: usize,
}

/// Score filter, decode, then NMS; output ordered by descending score.
pub fn batch_decode(raws: &[RawDetection], cam: &CameraModel, cfg: &DecodeConfig) -> Result<DecodeOutput> {
    let mut stages = [StageTimes::new(""), StageTimes::new(""), StageTimes::new("")];
    batch_decode_timed(raws, cam, cfg, &mut stages)
}

/// [`batch_decode`] that appends the duration of the filter, decode and NMS
/// stages to `stages`.
pub fn batch_decode_timed(
    raws: &[RawDetection],
    cam: &CameraModel,
    cfg: &DecodeConfig,
    stages: &mut [StageTimes; 3],
) -> Result<DecodeOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let candidates: Vec<&RawDetection> = raws
        .iter()
        .filter(|r| sigmoid(r.score) >= cfg.score_threshold)
        .collect();
    let t1 = Instant::now();
    let mut decoded = Vec::with_capacity(candidates.len());
    let mut dropped = 0;
    for r in candidates {
        match decode_one_with(r, cam, cfg.visibility_threshold) {
            Ok(d) => decoded.push(d),
            Err(_) => dropped += 1,
        }
    }
    let t2 = Instant::now();
    let detections = nms(&decoded, cfg.iou_threshold);
    let t3 = Instant::now();
    stages[0].record(t1 - t0);
    stages[1].record(t2 - t1);
    stages[2].record(t3 - t2);
    Ok(DecodeOutput { detections, dropped })
}

/// Little-endian `f32` records, [`RAW_FLOATS`] per detection.
pub fn parse_raw_binary(bytes: &[u8]) -> std::result::Result<Vec<RawDetection>, String> {
    let stride = RAW_FLOATS * 4;
    if !bytes.len().is_multiple_of(stride) {
        return Err(format!(
            "binary detections must be a multiple of {stride} bytes, got {}",
            bytes.len()
        ));
    }
    bytes
        .chunks_exact(stride)
        .map(|rec| {
            let floats: Vec<f64> = rec
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            RawDetection::from_floats(&floats).map_err(|e| e.to_string())
        })
        .collect()
}

pub fn write_raw_binary(raws: &[RawDetection]) -> Vec<u8> {
    raws.iter()
        .flat_map(|r| r.to_floats())
        .flat_map(|x| (x as f32).to_le_bytes())
        .collect()
}

/// Reads JSON-lines, or the binary layout when the extension is `.bin`.
pub fn read_raw_detections(path: &Path) -> Result<Vec<RawDetection>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bin")) {
        return parse_raw_binary(&bytes).map_err(|m| Error::parse(path, m));
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::parse(path, "not UTF-8"))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1))))
        .collect()
}
