//! Central finite-difference checks of the tape gradients.
//!
//! The reference derivative of every op is taken from the plain `f64`
//! implementation (geometry and `losses::*_value`), never from the tape.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geometry::{euler_to_rot, gso_to_rot, quat_to_rot, svd_project_so3, Mat3, NineD, Quat, Rot3, SixD, Vec3};
use crate::losses::{
    ciou_alpha, ciou_on_tape, ciou_value_with_alpha, keypoint_loss_on_tape, keypoint_loss_value, rotation_loss_on_tape,
    rotation_loss_value, translation_loss_on_tape, translation_loss_value, Box2D, KeypointBatch, N_KP,
};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Pass threshold on the maximum relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckOp {
    /// Geodesic angle of the SVD projection against a fixed rotation.
    Rotation,
    /// Smooth-L1 on the depth scale, away from the kink.
    Translation,
    Keypoint,
    /// CIoU with `α` held at its base-point value.
    Ciou,
    /// A random linear functional of the SVD projection.
    SvdProject,
    Gso,
    Quat,
    Euler,
}

impl CheckOp {
    pub const ALL: [CheckOp; 8] = [
        CheckOp::Rotation,
        CheckOp::Translation,
        CheckOp::Keypoint,
        CheckOp::Ciou,
        CheckOp::SvdProject,
        CheckOp::Gso,
        CheckOp::Quat,
        CheckOp::Euler,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckOp::Rotation => "rotation",
            CheckOp::Translation => "translation",
            CheckOp::Keypoint => "keypoint",
            CheckOp::Ciou => "ciou",
            CheckOp::SvdProject => "svd_project",
            CheckOp::Gso => "gso6",
            CheckOp::Quat => "quat",
            CheckOp::Euler => "euler",
        }
    }
}

impl fmt::Display for CheckOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown gradient-check op '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub op: CheckOp,
    pub max_rel_err: f64,
    pub trials: usize,
    pub seed: u64,
}

impl GradCheckReport {
    pub const CSV_HEADER: &'static str = "op,max_rel_err,trials,seed";

    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_CHECK_TOL
    }

    pub fn csv_row(&self) -> String {
        format!("{},{:e},{},{}", self.op, self.max_rel_err, self.trials, self.seed)
    }
}

/// `‖a − n‖ / max(1e-8, ‖a‖, ‖n‖)` over the whole gradient vector.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let na = norm(&mut analytic.iter().copied());
    let nn = norm(&mut numeric.iter().copied());
    diff / na.max(nn).max(1e-8)
}

/// Central differences of `f` at `x` with step [`FD_STEP`].
pub fn numeric_gradient(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_STEP;
            let hi = f(&p);
            p[i] = x[i] - FD_STEP;
            let lo = f(&p);
            p[i] = x[i];
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Compares tape and finite-difference gradients of `op` on `trials` random
/// well-conditioned inputs.
pub fn grad_check(op: CheckOp, trials: usize, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let e = trial(op, &mut rng).expect("well-conditioned sample");
        worst = worst.max(e);
    }
    GradCheckReport {
        op,
        max_rel_err: worst,
        trials,
        seed,
    }
}

/// Runs every op; one report per op.
pub fn grad_check_all(trials: usize, seed: u64) -> Vec<GradCheckReport> {
    CheckOp::ALL.iter().map(|&op| grad_check(op, trials, seed)).collect()
}

fn trial(op: CheckOp, rng: &mut ChaCha8Rng) -> Result<f64> {
    match op {
        CheckOp::Rotation => {
            let m = well_conditioned_matrix(rng);
            let r = svd_project_so3(&NineD::from_matrix(&m))?;
            let angle = rng.random_range(0.2..2.8);
            let gt = r.compose(&axis_angle(&random_unit(rng), angle));
            let x: Vec<f64> = NineD::from_matrix(&m).0.to_vec();
            let mut tape = Tape::new();
            let leaf = tape.leaf(Tensor::new(3, 3, x.clone()));
            let l = rotation_loss_on_tape(&mut tape, leaf, &gt)?;
            let a = tape.backward(l)?.wrt(leaf).data;
            let n = numeric_gradient(&x, |p| rotation_loss_value(&NineD(p.try_into().unwrap()), &gt).unwrap());
            Ok(relative_error(&a, &n))
        }
        CheckOp::Translation => {
            let gt: f64 = rng.random_range(0.0..1.0);
            let mag = if rng.random_bool(0.5) {
                rng.random_range(0.01..0.99)
            } else {
                rng.random_range(1.01..3.0)
            };
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let x = [gt + sign * mag];
            let mut tape = Tape::new();
            let leaf = tape.leaf_scalar(x[0]);
            let l = translation_loss_on_tape(&mut tape, leaf, gt)?;
            let a = tape.backward(l)?.wrt(leaf).data;
            let n = numeric_gradient(&x, |p| translation_loss_value(p[0], gt));
            Ok(relative_error(&a, &n))
        }
        CheckOp::Keypoint => {
            let b = rng.random_range(1..=3usize);
            let mut gt = Vec::new();
            let mut pred = Vec::new();
            let mut vis = Vec::new();
            for _ in 0..b {
                let g: [[f64; 2]; N_KP] =
                    std::array::from_fn(|_| [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)]);
                let p: [[f64; 2]; N_KP] = std::array::from_fn(|i| {
                    let r = rng.random_range(0.5..20.0);
                    let phi = rng.random_range(0.0..std::f64::consts::TAU);
                    [g[i][0] + r * phi.cos(), g[i][1] + r * phi.sin()]
                });
                let mut v: [bool; N_KP] = std::array::from_fn(|_| rng.random_bool(0.7));
                v[rng.random_range(0..N_KP)] = true;
                gt.push(g);
                pred.push(p);
                vis.push(v);
            }
            let x: Vec<f64> = pred.iter().flat_map(|p| p.as_flattened().to_vec()).collect();
            let mut tape = Tape::new();
            let leaves: Vec<_> = pred
                .iter()
                .map(|p| tape.leaf(Tensor::vector(p.as_flattened())))
                .collect();
            let l = keypoint_loss_on_tape(&mut tape, &leaves, &gt, &vis)?;
            let grads = tape.backward(l)?;
            let a: Vec<f64> = leaves.iter().flat_map(|&v| grads.wrt(v).data).collect();
            let n = numeric_gradient(&x, |p| {
                let pred = p
                    .chunks(2 * N_KP)
                    .map(|c| std::array::from_fn(|i| [c[2 * i], c[2 * i + 1]]))
                    .collect();
                keypoint_loss_value(&KeypointBatch::new(pred, gt.clone(), vis.clone()).unwrap())
            });
            Ok(relative_error(&a, &n))
        }
        CheckOp::Ciou => {
            let (pred, gt) = smooth_box_pair(rng);
            let alpha = ciou_alpha(&pred, &gt)?;
            let x = [pred.cx, pred.cy, pred.w, pred.h];
            let mut tape = Tape::new();
            let leaves = x.map(|v| tape.leaf_scalar(v));
            let l = ciou_on_tape(&mut tape, leaves, &gt)?;
            let grads = tape.backward(l)?;
            let a: Vec<f64> = leaves.iter().map(|&v| grads.wrt(v).data[0]).collect();
            let n = numeric_gradient(&x, |p| {
                ciou_value_with_alpha(&Box2D::new(p[0], p[1], p[2], p[3]), &gt, alpha).unwrap()
            });
            Ok(relative_error(&a, &n))
        }
        CheckOp::SvdProject => {
            let m = well_conditioned_matrix(rng);
            let x = NineD::from_matrix(&m).0.to_vec();
            functional_check(
                rng,
                &x,
                |t, v| t.svd_project(v),
                |p| Ok(*svd_project_so3(&NineD(p.try_into().unwrap()))?.matrix()),
            )
        }
        CheckOp::Gso => {
            let a = random_unit(rng) * rng.random_range(0.5..2.0);
            let mut b = random_unit(rng) * rng.random_range(0.5..2.0);
            while a.cross(&b).norm() < 0.3 * a.norm() * b.norm() {
                b = random_unit(rng) * rng.random_range(0.5..2.0);
            }
            let x = vec![a.x, a.y, a.z, b.x, b.y, b.z];
            functional_check(
                rng,
                &x,
                |t, v| t.gso_to_rot(v),
                |p| {
                    let r = gso_to_rot(&SixD {
                        a: Vec3::new(p[0], p[1], p[2]),
                        b: Vec3::new(p[3], p[4], p[5]),
                    })?;
                    Ok(*r.matrix())
                },
            )
        }
        CheckOp::Quat => {
            let u = random_unit(rng);
            let w: f64 = rng.sample(StandardNormal);
            let s = rng.random_range(0.5..2.0) / (1.0 + w * w).sqrt();
            let x = vec![w * s, u.x * s, u.y * s, u.z * s];
            functional_check(
                rng,
                &x,
                |t, v| t.quat_to_rot(v),
                |p| Ok(*quat_to_rot(&Quat::new(p[0], p[1], p[2], p[3]))?.matrix()),
            )
        }
        CheckOp::Euler => {
            let pi = std::f64::consts::PI;
            let x = vec![
                rng.random_range(-pi..pi),
                rng.random_range(-pi / 2.0..pi / 2.0),
                rng.random_range(-pi..pi),
            ];
            functional_check(
                rng,
                &x,
                |t, v| t.euler_to_rot(v),
                |p| Ok(*euler_to_rot(p[0], p[1], p[2]).matrix()),
            )
        }
    }
}

/// Checks `x ↦ Σ W ⊙ f(x)` for a random 3×3 weight `W`.
fn functional_check(
    rng: &mut ChaCha8Rng,
    x: &[f64],
    on_tape: impl Fn(&mut Tape, super::Var) -> Result<super::Var>,
    plain: impl Fn(&[f64]) -> Result<Mat3>,
) -> Result<f64> {
    let w = Mat3::from_fn(|_, _| rng.sample(StandardNormal));
    let mut tape = Tape::new();
    let leaf = tape.leaf(Tensor::vector(x));
    let r = on_tape(&mut tape, leaf)?;
    let wc = tape.constant(Tensor::from_mat3(&w));
    let prod = tape.mul(r, wc)?;
    let l = tape.sum(prod);
    let a = tape.backward(l)?.wrt(leaf).data;
    let n = numeric_gradient(x, |p| plain(p).unwrap().component_mul(&w).sum());
    Ok(relative_error(&a, &n))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

fn axis_angle(axis: &Vec3, angle: f64) -> Rot3 {
    let h = angle / 2.0;
    let s = h.sin();
    quat_to_rot(&Quat::new(h.cos(), axis.x * s, axis.y * s, axis.z * s)).expect("unit quaternion")
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    *axis_angle(&random_unit(rng), rng.random_range(0.0..std::f64::consts::PI)).matrix()
}

/// `Q₁ diag(s) Q₂` with separated singular values; a third of the samples
/// have negative determinant so the reflection branch is covered.
fn well_conditioned_matrix(rng: &mut ChaCha8Rng) -> Mat3 {
    let s1 = rng.random_range(1.4..2.0);
    let s2 = rng.random_range(0.9..1.3);
    let s3 = rng.random_range(0.3..0.6);
    let sign = if rng.random_range(0..3) == 0 { -1.0 } else { 1.0 };
    let d = Mat3::from_diagonal(&Vec3::new(s1, s2, sign * s3));
    random_rotation(rng) * d * random_rotation(rng)
}

/// Overlapping box pairs whose min/max comparisons are all separated by
/// much more than the FD step, so the loss is smooth around the sample.
fn smooth_box_pair(rng: &mut ChaCha8Rng) -> (Box2D, Box2D) {
    loop {
        let g = Box2D::new(
            rng.random_range(100.0..500.0),
            rng.random_range(100.0..400.0),
            rng.random_range(20.0..120.0),
            rng.random_range(20.0..120.0),
        );
        let p = Box2D::new(
            g.cx + rng.random_range(-40.0..40.0),
            g.cy + rng.random_range(-40.0..40.0),
            g.w * rng.random_range(0.5..1.8),
            g.h * rng.random_range(0.5..1.8),
        );
        let (px1, py1, px2, py2) = p.corners();
        let (gx1, gy1, gx2, gy2) = g.corners();
        let gaps = [
            px1 - gx1,
            px2 - gx2,
            py1 - gy1,
            py2 - gy2,
            px2.min(gx2) - px1.max(gx1),
            py2.min(gy2) - py1.max(gy1),
        ];
        if gaps.iter().all(|d| d.abs() > 1e-2) {
            return (p, g);
        }
    }
}
