use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{euler_to_rot, gso_to_rot, quat_to_rot, svd_project_so3, NineD, Quat, Rot3, SixD, Vec3};
use crate::losses::N_KP;

/// Rotation parameterization of the network's rotation head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotMode {
    Svd9,
    Gso6,
    Quat,
    Euler,
}

impl RotMode {
    pub const ALL: [RotMode; 4] = [RotMode::Svd9, RotMode::Gso6, RotMode::Quat, RotMode::Euler];

    pub fn width(self) -> usize {
        match self {
            RotMode::Svd9 => 9,
            RotMode::Gso6 => 6,
            RotMode::Quat => 4,
            RotMode::Euler => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RotMode::Svd9 => "svd9",
            RotMode::Gso6 => "gso6",
            RotMode::Quat => "quat",
            RotMode::Euler => "euler",
        }
    }

    /// Rotation from the head's raw outputs.
    pub fn rotation(self, raw: &[f64]) -> Result<Rot3> {
        match self {
            RotMode::Svd9 => svd_project_so3(&NineD(raw[..9].try_into().unwrap())),
            RotMode::Gso6 => gso_to_rot(&SixD {
                a: Vec3::new(raw[0], raw[1], raw[2]),
                b: Vec3::new(raw[3], raw[4], raw[5]),
            }),
            RotMode::Quat => quat_to_rot(&Quat::new(raw[0], raw[1], raw[2], raw[3])),
            RotMode::Euler => Ok(euler_to_rot(raw[0], raw[1], raw[2])),
        }
    }

    /// Same as [`rotation`](Self::rotation) on a tape node holding the head.
    pub fn rotation_on_tape(self, tape: &mut Tape, head: Var) -> Result<Var> {
        match self {
            RotMode::Svd9 => tape.svd_project(head),
            RotMode::Gso6 => tape.gso_to_rot(head),
            RotMode::Quat => tape.quat_to_rot(head),
            RotMode::Euler => tape.euler_to_rot(head),
        }
    }
}

impl fmt::Display for RotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RotMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RotMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown rotation mode '{s}' (svd9, gso6, quat, euler)")))
    }
}

/// Width of the network input built by [`embed`].
pub const EMBED_DIM: usize = 3 + 3 * N_KP;

/// Fixed input embedding of the keypoint features: visible centroid, log of
/// the RMS spread about it, the visible keypoints in centroid-relative units
/// of that spread (zero when hidden), and the visibility flags. With fewer
/// than two visible keypoints everything but the flags is zero.
pub fn embed(features: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; EMBED_DIM];
    let vis: Vec<usize> = (0..N_KP).filter(|&i| features[2 * N_KP + i] > 0.5).collect();
    for &i in &vis {
        e[3 + 2 * N_KP + i] = 1.0;
    }
    if vis.len() < 2 {
        return e;
    }
    let n = vis.len() as f64;
    let cu = vis.iter().map(|&i| features[2 * i]).sum::<f64>() / n;
    let cv = vis.iter().map(|&i| features[2 * i + 1]).sum::<f64>() / n;
    let spread = (vis
        .iter()
        .map(|&i| (features[2 * i] - cu).powi(2) + (features[2 * i + 1] - cv).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        .max(1e-9);
    e[0] = cu;
    e[1] = cv;
    e[2] = spread.ln();
    for &i in &vis {
        e[3 + 2 * i] = (features[2 * i] - cu) / spread;
        e[3 + 2 * i + 1] = (features[2 * i + 1] - cv) / spread;
    }
    e
}

/// Index ranges of the output vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutputLayout {
    pub rot: usize,
    pub sigma: usize,
    pub center: usize,
    /// Start of the keypoint block (18 coordinates `u₀ v₀ … u₈ v₈`, then 9
    /// visibility logits), when the head exists.
    pub keypoints: Option<usize>,
    pub width: usize,
}

impl OutputLayout {
    pub fn new(mode: RotMode, keypoint_head: bool) -> Self {
        let sigma = mode.width();
        let center = sigma + 1;
        let kp_start = center + 2;
        OutputLayout {
            rot: 0,
            sigma,
            center,
            keypoints: keypoint_head.then_some(kp_start),
            width: kp_start + if keypoint_head { 3 * N_KP } else { 0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out × n_in`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn init(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = 1.0 / (n_in as f64).sqrt();
        let w = (0..n_in * n_out).map(|_| rng.random_range(-k..=k)).collect();
        let b = (0..n_out).map(|_| rng.random_range(-k..=k)).collect();
        Dense { n_in, n_out, w, b }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }
}

/// Fully connected regressor: tanh hidden layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet {
    pub mode: RotMode,
    pub layout: OutputLayout,
    layers: Vec<Dense>,
}

/// Activations kept for the backward pass.
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Parameter gradient with the same shape as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrad {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl NetGrad {
    pub fn scale(&mut self, k: f64) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn add(&mut self, other: &NetGrad) {
        for (a, b) in self.w.iter_mut().zip(&other.w).chain(self.b.iter_mut().zip(&other.b)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn norm(&self) -> f64 {
        self.w
            .iter()
            .chain(&self.b)
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

impl ToyNet {
    pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

    /// Hidden layers are drawn before the output layer, so nets that differ
    /// only in mode or head share their hidden initialization.
    pub fn new(mode: RotMode, keypoint_head: bool, hidden: &[usize], seed: u64) -> Self {
        let layout = OutputLayout::new(mode, keypoint_head);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![EMBED_DIM];
        sizes.extend_from_slice(hidden);
        let mut layers: Vec<Dense> = sizes.windows(2).map(|p| Dense::init(p[0], p[1], &mut rng)).collect();
        layers.push(Dense::init(*sizes.last().unwrap(), layout.width, &mut rng));
        ToyNet { mode, layout, layers }
    }

    pub fn has_keypoint_head(&self) -> bool {
        self.layout.keypoints.is_some()
    }

    pub fn forward(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = embed(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a);
            inputs.push(std::mem::take(&mut a));
            a = if i + 1 < self.layers.len() {
                z.into_iter().map(f64::tanh).collect()
            } else {
                z
            };
        }
        Trace { inputs, output: a }
    }

    /// Parameter gradient given `∂L/∂output`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64]) -> NetGrad {
        let n = self.layers.len();
        let mut gw = vec![Vec::new(); n];
        let mut gb = vec![Vec::new(); n];
        let mut delta = grad_out.to_vec();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let input = &trace.inputs[i];
            let mut w = vec![0.0; layer.w.len()];
            for o in 0..layer.n_out {
                for j in 0..layer.n_in {
                    w[o * layer.n_in + j] = delta[o] * input[j];
                }
            }
            gw[i] = w;
            gb[i] = delta.clone();
            if i > 0 {
                // input[j] = tanh(z_j) of the previous layer.
                delta = (0..layer.n_in)
                    .map(|j| {
                        let s: f64 = (0..layer.n_out).map(|o| layer.w[o * layer.n_in + j] * delta[o]).sum();
                        s * (1.0 - input[j] * input[j])
                    })
                    .collect();
            }
        }
        NetGrad { w: gw, b: gb }
    }

    pub fn zero_grad(&self) -> NetGrad {
        NetGrad {
            w: self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    /// `params += k · g`
    pub fn apply(&mut self, g: &NetGrad, k: f64) {
        for (l, (gw, gb)) in self.layers.iter_mut().zip(g.w.iter().zip(&g.b)) {
            l.w.iter_mut().zip(gw).for_each(|(p, d)| *p += k * d);
            l.b.iter_mut().zip(gb).for_each(|(p, d)| *p += k * d);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|x| x.is_finite()))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthtrain::FEATURE_DIM;

    #[test]
    fn output_widths() {
        for (mode, w) in [
            (RotMode::Svd9, 9),
            (RotMode::Gso6, 6),
            (RotMode::Quat, 4),
            (RotMode::Euler, 3),
        ] {
            assert_eq!(OutputLayout::new(mode, false).width, w + 3);
            assert_eq!(OutputLayout::new(mode, true).width, w + 3 + 27);
            assert_eq!(
                ToyNet::new(mode, true, &[8], 0)
                    .forward(&[0.0; FEATURE_DIM])
                    .output
                    .len(),
                w + 30
            );
        }
        assert_eq!("gso6".parse::<RotMode>().unwrap(), RotMode::Gso6);
        assert!("rodrigues".parse::<RotMode>().is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut net = ToyNet::new(RotMode::Quat, true, &[7, 5], 3);
        let x: Vec<f64> = (0..FEATURE_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..net.layout.width).map(|i| (i as f64 * 0.11).cos()).collect();
        let loss = |n: &ToyNet| n.forward(&x).output.iter().zip(&c).map(|(o, c)| o * c).sum::<f64>();
        let trace = net.forward(&x);
        let g = net.backward(&trace, &c);
        let h = 1e-6;
        for (li, idx) in [(0usize, 3usize), (1, 10), (2, 0), (2, 30)] {
            let orig = net.layers[li].w[idx];
            net.layers[li].w[idx] = orig + h;
            let hi = loss(&net);
            net.layers[li].w[idx] = orig - h;
            let lo = loss(&net);
            net.layers[li].w[idx] = orig;
            let fd = (hi - lo) / (2.0 * h);
            assert!(
                (fd - g.w[li][idx]).abs() < 1e-7,
                "layer {li} idx {idx}: {fd} vs {}",
                g.w[li][idx]
            );
        }
    }

    #[test]
    fn embedding_separates_position_scale_and_shape() {
        let mut f = [0.0; FEATURE_DIM];
        for i in 0..N_KP {
            f[2 * i] = 0.1 * (i as f64).cos();
            f[2 * i + 1] = 0.05 * (i as f64).sin();
            f[2 * N_KP + i] = if i == 4 { 0.0 } else { 1.0 };
        }
        let e = embed(&f);
        assert_eq!(e.len(), EMBED_DIM);
        assert_eq!(&e[3 + 8..3 + 10], &[0.0, 0.0]);
        let mut g = f;
        for i in 0..N_KP {
            g[2 * i] = 2.0 * f[2 * i] + 0.3;
            g[2 * i + 1] = 2.0 * f[2 * i + 1] - 0.1;
        }
        let eg = embed(&g);
        assert!((eg[2] - e[2] - 2f64.ln()).abs() < 1e-12);
        for j in 3..EMBED_DIM {
            assert!((eg[j] - e[j]).abs() < 1e-12);
        }
        let mut lone = [0.0; FEATURE_DIM];
        lone[2 * N_KP] = 1.0;
        let el = embed(&lone);
        assert_eq!(el.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn shared_hidden_initialization() {
        let a = ToyNet::new(RotMode::Svd9, true, &ToyNet::DEFAULT_HIDDEN, 9);
        let b = ToyNet::new(RotMode::Euler, false, &ToyNet::DEFAULT_HIDDEN, 9);
        assert_eq!(a.layers[0], b.layers[0]);
        assert_eq!(a.layers[1], b.layers[1]);
        let k = 1.0 / (FEATURE_DIM as f64).sqrt();
        assert!(a.layers[0].w.iter().all(|w| w.abs() <= k));
    }
}
