//! Rotation, translation, keypoint and box losses and their weighted total.
//!
//! Each loss exists twice: a plain `*_value` function computed directly in
//! `f64`, and a tape builder (`*_on_tape`) whose reverse sweep yields the
//! gradient. The value functions serve as the finite-difference reference for
//! the tape gradients.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diff::{smooth_l1_value, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, svd_project_so3, NineD, Rot3};

/// Keypoints per instance: 8 box corners and the center.
pub const N_KP: usize = 9;

/// Smooth-L1 threshold for the normalized depth.
pub const SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_t: f64,
    pub lambda_kp: f64,
    pub lambda_bb: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r: 1.0,
            lambda_t: 1.0,
            lambda_kp: 0.1,
            lambda_bb: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_r: f64, lambda_t: f64, lambda_kp: f64, lambda_bb: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_r,
            lambda_t,
            lambda_kp,
            lambda_bb,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_r, self.lambda_t, self.lambda_kp, self.lambda_bb];
        if all.iter().all(|x| x.is_finite() && *x >= 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "loss weights must be finite and >= 0, got {all:?}"
            )))
        }
    }
}

/// Axis-aligned 2D box in center/size form (pixels).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Box2D {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Box2D { cx, cy, w, h }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.cx, self.cy, self.w, self.h].iter().all(|x| x.is_finite());
        if !ok || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "need finite center and positive size, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `(x1, y1, x2, y2)`
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    /// Smallest box containing every point.
    pub fn hull(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Box2D> {
        let mut it = points.into_iter();
        let (u0, v0) = it.next()?;
        let (mut x1, mut y1, mut x2, mut y2) = (u0, v0, u0, v0);
        for (u, v) in it {
            x1 = x1.min(u);
            y1 = y1.min(v);
            x2 = x2.max(u);
            y2 = y2.max(v);
        }
        Some(Box2D::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1))
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Predicted and ground-truth keypoints for a batch, with visibility flags.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointBatch {
    pub pred: Vec<[[f64; 2]; N_KP]>,
    pub gt: Vec<[[f64; 2]; N_KP]>,
    pub vis: Vec<[bool; N_KP]>,
}

impl KeypointBatch {
    pub fn new(pred: Vec<[[f64; 2]; N_KP]>, gt: Vec<[[f64; 2]; N_KP]>, vis: Vec<[bool; N_KP]>) -> Result<Self> {
        if pred.len() != gt.len() || gt.len() != vis.len() {
            return Err(Error::Shape(format!(
                "keypoint batch sizes differ: pred {}, gt {}, vis {}",
                pred.len(),
                gt.len(),
                vis.len()
            )));
        }
        Ok(KeypointBatch { pred, gt, vis })
    }

    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }
}

/// A loss value with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<G> {
    pub value: f64,
    pub grad: G,
}

// ---------------------------------------------------------------------------
// Plain values

/// Geodesic angle between the projected prediction and the ground truth.
pub fn rotation_loss_value(pred: &NineD, gt: &Rot3) -> Result<f64> {
    Ok(geodesic_distance(&svd_project_so3(pred)?, gt))
}

/// Smooth-L1 (β = 1) on the normalized depth scale.
pub fn translation_loss_value(pred_sigma: f64, gt_sigma: f64) -> f64 {
    smooth_l1_value(pred_sigma - gt_sigma, SMOOTH_L1_BETA)
}

/// Visibility-masked keypoint distance, renormalized per instance by
/// `N_KP / Σ vis` and averaged over instances with at least one visible
/// keypoint.
pub fn keypoint_loss_value(batch: &KeypointBatch) -> f64 {
    let mut total = 0.0;
    let mut counted = 0usize;
    for j in 0..batch.len() {
        let nvis = batch.vis[j].iter().filter(|&&v| v).count();
        if nvis == 0 {
            continue;
        }
        let mut s = 0.0;
        for i in 0..N_KP {
            if batch.vis[j][i] {
                let du = batch.pred[j][i][0] - batch.gt[j][i][0];
                let dv = batch.pred[j][i][1] - batch.gt[j][i][1];
                s += (du * du + dv * dv).sqrt();
            }
        }
        total += N_KP as f64 / nvis as f64 * s;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

fn aspect_term(pred: &Box2D, gt: &Box2D) -> f64 {
    let d = (gt.w / gt.h).atan() - (pred.w / pred.h).atan();
    4.0 / (PI * PI) * d * d
}

/// The aspect-ratio weight `α = v / ((1 − IoU) + v)`, zero when undefined.
pub fn ciou_alpha(pred: &Box2D, gt: &Box2D) -> Result<f64> {
    pred.validate()?;
    gt.validate()?;
    let v = aspect_term(pred, gt);
    let denom = (1.0 - iou(pred, gt)) + v;
    Ok(if denom > 0.0 { v / denom } else { 0.0 })
}

/// CIoU loss with a caller-supplied `α`.
pub fn ciou_value_with_alpha(pred: &Box2D, gt: &Box2D, alpha: f64) -> Result<f64> {
    pred.validate()?;
    gt.validate()?;
    let (px1, py1, px2, py2) = pred.corners();
    let (gx1, gy1, gx2, gy2) = gt.corners();
    let cw = px2.max(gx2) - px1.min(gx1);
    let ch = py2.max(gy2) - py1.min(gy1);
    let c2 = cw * cw + ch * ch;
    let rho2 = (pred.cx - gt.cx).powi(2) + (pred.cy - gt.cy).powi(2);
    Ok(1.0 - iou(pred, gt) + rho2 / c2 + alpha * aspect_term(pred, gt))
}

/// `1 − IoU + ρ²/c² + αv`.
pub fn ciou_loss_value(pred: &Box2D, gt: &Box2D) -> Result<f64> {
    ciou_value_with_alpha(pred, gt, ciou_alpha(pred, gt)?)
}

// ---------------------------------------------------------------------------
// Tape builders

/// Geodesic angle between a 3×3 rotation node and a fixed rotation.
pub fn geodesic_on_tape(tape: &mut Tape, r: Var, gt: &Rot3) -> Result<Var> {
    let rt = tape.transpose(r);
    let g = tape.constant(Tensor::from_mat3(gt.matrix()));
    let prod = tape.matmul(rt, g)?;
    let tr = tape.trace(prod)?;
    let c = tape.affine(tr, 0.5, -0.5);
    Ok(tape.acos_clamped(c))
}

/// Rotation loss of a raw 9-value node: SVD projection then geodesic angle.
pub fn rotation_loss_on_tape(tape: &mut Tape, m: Var, gt: &Rot3) -> Result<Var> {
    let r = tape.svd_project(m)?;
    geodesic_on_tape(tape, r, gt)
}

pub fn translation_loss_on_tape(tape: &mut Tape, pred_sigma: Var, gt_sigma: f64) -> Result<Var> {
    let g = tape.constant_scalar(gt_sigma);
    tape.smooth_l1(pred_sigma, g, SMOOTH_L1_BETA)
}

/// One instance's renormalized keypoint term from an 18-element node of
/// `(u, v)` pairs. `None` when nothing is visible.
pub fn keypoint_instance_on_tape(
    tape: &mut Tape,
    pred: Var,
    gt: &[[f64; 2]; N_KP],
    vis: &[bool; N_KP],
) -> Result<Option<Var>> {
    let nvis = vis.iter().filter(|&&v| v).count();
    if nvis == 0 {
        return Ok(None);
    }
    let mut acc: Option<Var> = None;
    for i in (0..N_KP).filter(|&i| vis[i]) {
        let p = tape.slice(pred, 2 * i, 2)?;
        let g = tape.constant(Tensor::vector(&gt[i]));
        let d2 = tape.squared_distance(p, g)?;
        let d = tape.sqrt(d2);
        acc = Some(match acc {
            Some(a) => tape.add(a, d)?,
            None => d,
        });
    }
    let s = acc.expect("at least one visible keypoint");
    Ok(Some(tape.scale(s, N_KP as f64 / nvis as f64)))
}

/// Batch keypoint loss over per-instance 18-element prediction nodes.
pub fn keypoint_loss_on_tape(
    tape: &mut Tape,
    preds: &[Var],
    gt: &[[[f64; 2]; N_KP]],
    vis: &[[bool; N_KP]],
) -> Result<Var> {
    if preds.len() != gt.len() || gt.len() != vis.len() {
        return Err(Error::Shape("keypoint batch sizes differ".into()));
    }
    let mut terms = Vec::new();
    for ((p, g), v) in preds.iter().zip(gt).zip(vis) {
        if let Some(t) = keypoint_instance_on_tape(tape, *p, g, v)? {
            terms.push(t);
        }
    }
    let Some((&first, rest)) = terms.split_first() else {
        return Ok(tape.constant_scalar(0.0));
    };
    let mut acc = first;
    for &t in rest {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64))
}

/// CIoU loss of a predicted box given as four scalar nodes `(cx, cy, w, h)`.
/// `α` is evaluated from the current values and held constant.
pub fn ciou_on_tape(tape: &mut Tape, pred: [Var; 4], gt: &Box2D) -> Result<Var> {
    let pb = Box2D::new(
        tape.scalar(pred[0]),
        tape.scalar(pred[1]),
        tape.scalar(pred[2]),
        tape.scalar(pred[3]),
    );
    let alpha = ciou_alpha(&pb, gt)?;
    let [cx, cy, w, h] = pred;
    let hw = tape.scale(w, 0.5);
    let hh = tape.scale(h, 0.5);
    let x1 = tape.sub(cx, hw)?;
    let x2 = tape.add(cx, hw)?;
    let y1 = tape.sub(cy, hh)?;
    let y2 = tape.add(cy, hh)?;
    let (gx1, gy1, gx2, gy2) = gt.corners();
    let gx1 = tape.constant_scalar(gx1);
    let gx2 = tape.constant_scalar(gx2);
    let gy1 = tape.constant_scalar(gy1);
    let gy2 = tape.constant_scalar(gy2);
    let zero = tape.constant_scalar(0.0);

    let ix2 = tape.min(x2, gx2)?;
    let ix1 = tape.max(x1, gx1)?;
    let iw = tape.sub(ix2, ix1)?;
    let iw = tape.max(iw, zero)?;
    let iy2 = tape.min(y2, gy2)?;
    let iy1 = tape.max(y1, gy1)?;
    let ih = tape.sub(iy2, iy1)?;
    let ih = tape.max(ih, zero)?;
    let inter = tape.mul(iw, ih)?;
    let area = tape.mul(w, h)?;
    let union = tape.affine(area, 1.0, gt.area());
    let union = tape.sub(union, inter)?;
    let iou = tape.div(inter, union)?;

    let ex2 = tape.max(x2, gx2)?;
    let ex1 = tape.min(x1, gx1)?;
    let cw = tape.sub(ex2, ex1)?;
    let ey2 = tape.max(y2, gy2)?;
    let ey1 = tape.min(y1, gy1)?;
    let ch = tape.sub(ey2, ey1)?;
    let cw2 = tape.mul(cw, cw)?;
    let ch2 = tape.mul(ch, ch)?;
    let c2 = tape.add(cw2, ch2)?;
    let dx = tape.affine(cx, 1.0, -gt.cx);
    let dy = tape.affine(cy, 1.0, -gt.cy);
    let dx2 = tape.mul(dx, dx)?;
    let dy2 = tape.mul(dy, dy)?;
    let rho2 = tape.add(dx2, dy2)?;
    let dist = tape.div(rho2, c2)?;

    let ratio = tape.div(w, h)?;
    let at = tape.atan(ratio);
    let diff = tape.affine(at, -1.0, (gt.w / gt.h).atan());
    let diff2 = tape.mul(diff, diff)?;
    let av = tape.scale(diff2, alpha * 4.0 / (PI * PI));

    let one_minus = tape.affine(iou, -1.0, 1.0);
    let s = tape.add(one_minus, dist)?;
    tape.add(s, av)
}

// ---------------------------------------------------------------------------
// Value + gradient

pub fn rotation_loss(pred: &NineD, gt: &Rot3) -> Result<LossGrad<[f64; 9]>> {
    let mut tape = Tape::new();
    let m = tape.leaf(Tensor::new(3, 3, pred.0.to_vec()));
    let l = rotation_loss_on_tape(&mut tape, m, gt)?;
    let g = tape.backward(l)?.wrt(m);
    Ok(LossGrad {
        value: tape.scalar(l),
        grad: g.data.try_into().expect("9 entries"),
    })
}

/// Value and derivative with respect to the predicted scale.
pub fn translation_loss(pred_sigma: f64, gt_sigma: f64) -> LossGrad<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf_scalar(pred_sigma);
    let l = translation_loss_on_tape(&mut tape, p, gt_sigma).expect("scalar shapes");
    let g = tape.backward(l).expect("scalar output").wrt(p).data[0];
    LossGrad {
        value: tape.scalar(l),
        grad: g,
    }
}

/// Value and gradient with respect to every predicted keypoint coordinate.
pub fn keypoint_loss(batch: &KeypointBatch) -> Result<LossGrad<Vec<[[f64; 2]; N_KP]>>> {
    let mut tape = Tape::new();
    let preds: Vec<Var> = batch
        .pred
        .iter()
        .map(|p| tape.leaf(Tensor::vector(p.as_flattened())))
        .collect();
    let l = keypoint_loss_on_tape(&mut tape, &preds, &batch.gt, &batch.vis)?;
    let grads = tape.backward(l)?;
    let grad = preds
        .iter()
        .map(|&p| {
            let g = grads.wrt(p).data;
            std::array::from_fn(|i| [g[2 * i], g[2 * i + 1]])
        })
        .collect();
    Ok(LossGrad {
        value: tape.scalar(l),
        grad,
    })
}

/// Value and gradient with respect to `(cx, cy, w, h)` of the prediction.
pub fn ciou_loss(pred: &Box2D, gt: &Box2D) -> Result<LossGrad<[f64; 4]>> {
    pred.validate()?;
    gt.validate()?;
    let mut tape = Tape::new();
    let vars = [pred.cx, pred.cy, pred.w, pred.h].map(|x| tape.leaf_scalar(x));
    let l = ciou_on_tape(&mut tape, vars, gt)?;
    let grads = tape.backward(l)?;
    Ok(LossGrad {
        value: tape.scalar(l),
        grad: vars.map(|v| grads.wrt(v).data[0]),
    })
}

/// Per-component loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossComponents {
    pub rotation: f64,
    pub translation: f64,
    pub keypoint: f64,
    pub bbox: f64,
}

/// `λ_R·L_R + λ_t·L_t + λ_kp·L_kp + λ_bb·L_bb`
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.lambda_r * c.rotation + w.lambda_t * c.translation + w.lambda_kp * c.keypoint + w.lambda_bb * c.bbox
}

/// Component values, the weighted total and its gradient with respect to
/// each prediction group.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub components: LossComponents,
    pub total: f64,
    pub grad_rotation: [f64; 9],
    pub grad_sigma: f64,
    pub grad_keypoints: Vec<[[f64; 2]; N_KP]>,
    pub grad_box: [f64; 4],
}

pub fn total_loss_report(
    rotation: &LossGrad<[f64; 9]>,
    translation: &LossGrad<f64>,
    keypoint: &LossGrad<Vec<[[f64; 2]; N_KP]>>,
    bbox: &LossGrad<[f64; 4]>,
    w: &LossWeights,
) -> LossReport {
    let components = LossComponents {
        rotation: rotation.value,
        translation: translation.value,
        keypoint: keypoint.value,
        bbox: bbox.value,
    };
    LossReport {
        components,
        total: total_loss(&components, w),
        grad_rotation: rotation.grad.map(|g| w.lambda_r * g),
        grad_sigma: w.lambda_t * translation.grad,
        grad_keypoints: keypoint
            .grad
            .iter()
            .map(|k| k.map(|[u, v]| [w.lambda_kp * u, w.lambda_kp * v]))
            .collect(),
        grad_box: bbox.grad.map(|g| w.lambda_bb * g),
    }
}
