use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{sigmoid, Tape, Tensor};
use crate::error::{Error, Result};
use crate::evalkit::{add_metric, ObjectModel, DEFAULT_THRESHOLD_FACTOR};
use crate::geometry::{backproject_center, depth_decode, geodesic_distance, CameraModel, Pose};
use crate::losses::{
    ciou_on_tape, geodesic_on_tape, keypoint_instance_on_tape, translation_loss_on_tape, Box2D, LossComponents,
    LossWeights, N_KP,
};

use super::data::Sample;
use super::net::ToyNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to 0 over all steps.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub val_fraction: f64,
    pub schedule: LrSchedule,
    pub hidden: Vec<usize>,
    #[serde(skip)]
    pub weights: LossWeights,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 16,
            clip_norm: 10.0,
            val_fraction: 0.2,
            schedule: LrSchedule::Cosine,
            hidden: ToyNet::DEFAULT_HIDDEN.to_vec(),
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm must be positive, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!(
                "validation fraction must be in [0, 1), got {}",
                self.val_fraction
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden layer sizes must be positive, got {:?}", self.hidden));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => 0.5 * self.lr * (1.0 + (PI * step as f64 / total.max(1) as f64).cos()),
        }
    }
}

/// Camera and object shared by every sample.
#[derive(Clone, Copy, Debug)]
pub struct Scene<'a> {
    pub cam: &'a CameraModel,
    pub model: &'a ObjectModel,
}

/// Metrics of one evaluation pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub geodesic_deg: f64,
    pub trans_m: f64,
    pub loss: LossComponents,
    pub total: f64,
    /// Auxiliary visibility loss, outside the total.
    pub visibility: f64,
    /// Share of samples with ADD below 0.1 × diameter, percent.
    pub accuracy_percent: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub metrics: EvalMetrics,
    /// Mean pre-update total loss over the epoch's training batches.
    pub train_total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    /// Entry 0 evaluates the initial weights.
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
    /// Samples skipped because their SVD gradient was ill-conditioned.
    pub skipped: usize,
    /// Steps whose gradient norm was clipped.
    pub clipped: usize,
    pub n_train: usize,
    pub n_eval: usize,
}

impl TrainLog {
    pub fn last(&self) -> &EpochLog {
        self.epochs.last().expect("log has the initial evaluation")
    }

    /// Trailing `window`-epoch moving average of the mean training loss,
    /// starting once `window` trained epochs exist.
    pub fn train_moving_average(&self, window: usize) -> Vec<f64> {
        let totals: Vec<f64> = self.epochs.iter().skip(1).map(|e| e.train_total).collect();
        totals
            .windows(window.max(1))
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epoch,geodesic_deg,trans_m,loss_r,loss_t,loss_kp,loss_bb,total,visibility,accuracy_percent,train_total\n",
        );
        for e in &self.epochs {
            let m = &e.metrics;
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.2},{:.6}",
                e.epoch,
                m.geodesic_deg,
                m.trans_m,
                m.loss.rotation,
                m.loss.translation,
                m.loss.keypoint,
                m.loss.bbox,
                m.total,
                m.visibility,
                m.accuracy_percent,
                e.train_total
            );
        }
        s
    }
}

/// Losses of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLoss {
    pub components: LossComponents,
    /// Squared error of the visibility probabilities; trained with weight
    /// `λ_kp` but not part of the total.
    pub visibility: f64,
    /// Gradient of the trained objective with respect to the network output.
    pub grad: Option<Vec<f64>>,
}

/// Evaluates one sample's losses and, when `need_grad`, the gradient of the
/// total plus the visibility term.
pub fn sample_loss(
    net: &ToyNet,
    output: &[f64],
    sample: &Sample,
    scene: Scene<'_>,
    weights: &LossWeights,
    need_grad: bool,
) -> Result<SampleLoss> {
    let cam = scene.cam;
    let lay = net.layout;
    let mut tape = Tape::new();
    let out = tape.leaf(Tensor::vector(output));

    let head = tape.slice(out, lay.rot, net.mode.width())?;
    let r = net.mode.rotation_on_tape(&mut tape, head)?;
    let l_r = geodesic_on_tape(&mut tape, r, &sample.pose.r)?;

    let s_logit = tape.index(out, lay.sigma)?;
    let sigma = tape.sigmoid(s_logit);
    let l_t = translation_loss_on_tape(&mut tape, sigma, sample.sigma)?;

    let c0 = tape.index(out, lay.center)?;
    let c1 = tape.index(out, lay.center + 1)?;
    let ox = tape.affine(c0, cam.fx, cam.cx);
    let oy = tape.affine(c1, cam.fy, cam.cy);
    let bw = tape.constant_scalar(sample.bbox.w);
    let bh = tape.constant_scalar(sample.bbox.h);
    let gt_box = Box2D::new(sample.center[0], sample.center[1], sample.bbox.w, sample.bbox.h);
    let l_bb = ciou_on_tape(&mut tape, [ox, oy, bw, bh], &gt_box)?;

    let (l_kp, l_vis) = match lay.keypoints {
        Some(k) => {
            let uv = tape.slice(out, k, 2 * N_KP)?;
            let gt: [[f64; 2]; N_KP] = std::array::from_fn(|i| {
                let kp = &sample.keypoints[i];
                [(kp.u - cam.cx) / cam.fx, (kp.v - cam.cy) / cam.fy]
            });
            let vis: [bool; N_KP] = std::array::from_fn(|i| sample.keypoints[i].visible);
            let logits = tape.slice(out, k + 2 * N_KP, N_KP)?;
            let p = tape.sigmoid(logits);
            let labels = tape.constant(Tensor::vector(&vis.map(|v| if v { 1.0 } else { 0.0 })));
            let d = tape.squared_distance(p, labels)?;
            (keypoint_instance_on_tape(&mut tape, uv, &gt, &vis)?, Some(d))
        }
        None => (None, None),
    };

    let components = LossComponents {
        rotation: tape.scalar(l_r),
        translation: tape.scalar(l_t),
        keypoint: l_kp.map_or(0.0, |v| tape.scalar(v)),
        bbox: tape.scalar(l_bb),
    };
    let visibility = l_vis.map_or(0.0, |v| tape.scalar(v));
    if !need_grad {
        return Ok(SampleLoss {
            components,
            visibility,
            grad: None,
        });
    }
    let mut total = tape.scale(l_r, weights.lambda_r);
    let t = tape.scale(l_t, weights.lambda_t);
    total = tape.add(total, t)?;
    let b = tape.scale(l_bb, weights.lambda_bb);
    total = tape.add(total, b)?;
    for k in [l_kp, l_vis].into_iter().flatten() {
        let k = tape.scale(k, weights.lambda_kp);
        total = tape.add(total, k)?;
    }
    let g = tape.backward(total)?.wrt(out).data;
    Ok(SampleLoss {
        components,
        visibility,
        grad: Some(g),
    })
}

/// Pose implied by a network output.
pub fn predicted_pose(net: &ToyNet, output: &[f64], cam: &CameraModel) -> Result<Pose> {
    let lay = net.layout;
    let r = net.mode.rotation(&output[lay.rot..lay.rot + net.mode.width()])?;
    let tz = depth_decode(sigmoid(output[lay.sigma]), cam)?;
    let ox = cam.cx + cam.fx * output[lay.center];
    let oy = cam.cy + cam.fy * output[lay.center + 1];
    Ok(Pose::new(r, backproject_center(cam, ox, oy, tz)?))
}

/// Mean errors, losses and 0.1d accuracy over `data`.
pub fn evaluate(net: &ToyNet, data: &[&Sample], scene: Scene<'_>, weights: &LossWeights) -> EvalMetrics {
    let mut m = EvalMetrics {
        n: data.len(),
        ..EvalMetrics::default()
    };
    if data.is_empty() {
        return m;
    }
    let threshold = DEFAULT_THRESHOLD_FACTOR * scene.model.diameter;
    let mut correct = 0usize;
    for s in data {
        let out = net.forward(&s.features).output;
        match predicted_pose(net, &out, scene.cam) {
            Ok(p) => {
                m.geodesic_deg += geodesic_distance(&p.r, &s.pose.r).to_degrees();
                m.trans_m += (p.t - s.pose.t).norm();
                if add_metric(scene.model, &s.pose, &p) < threshold {
                    correct += 1;
                }
            }
            Err(_) => {
                m.geodesic_deg += 180.0;
                m.trans_m += s.pose.t.norm();
            }
        }
        if let Ok(SampleLoss {
            components: c,
            visibility,
            ..
        }) = sample_loss(net, &out, s, scene, weights, false)
        {
            m.visibility += visibility;
            m.loss.rotation += c.rotation;
            m.loss.translation += c.translation;
            m.loss.keypoint += c.keypoint;
            m.loss.bbox += c.bbox;
        }
    }
    let n = data.len() as f64;
    m.geodesic_deg /= n;
    m.trans_m /= n;
    m.loss.rotation /= n;
    m.loss.translation /= n;
    m.loss.keypoint /= n;
    m.loss.bbox /= n;
    m.visibility /= n;
    m.total = crate::losses::total_loss(&m.loss, weights);
    m.accuracy_percent = 100.0 * correct as f64 / n;
    m
}

const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Deterministic train / evaluation split. With fewer than two samples the
/// whole set is used for both.
pub fn split(data: &[Sample], val_fraction: f64, seed: u64) -> (Vec<&Sample>, Vec<&Sample>) {
    if data.len() < 2 {
        return (data.iter().collect(), data.iter().collect());
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_val = ((data.len() as f64 * val_fraction).round() as usize)
        .clamp(if val_fraction > 0.0 { 1 } else { 0 }, data.len() - 1);
    let (val, train) = idx.split_at(n_val);
    let pick = |ix: &[usize]| {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        ix.into_iter().map(|i| &data[i]).collect::<Vec<_>>()
    };
    let train = pick(train);
    let val = if n_val == 0 { train.clone() } else { pick(val) };
    (train, val)
}

/// Mini-batch gradient descent with momentum on the weighted total loss.
pub fn train(net: &mut ToyNet, data: &[Sample], scene: Scene<'_>, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training needs at least one sample".into()));
    }
    if cfg.weights.lambda_kp > 0.0 && !net.has_keypoint_head() {
        return Err(Error::Invalid(
            "lambda_kp > 0 needs a network with a keypoint head".into(),
        ));
    }
    let (train_set, eval_set) = split(data, cfg.val_fraction, cfg.seed);
    let mut log = TrainLog {
        n_train: train_set.len(),
        n_eval: eval_set.len(),
        ..TrainLog::default()
    };
    log.epochs.push(EpochLog {
        epoch: 0,
        metrics: evaluate(net, &eval_set, scene, &cfg.weights),
        train_total: f64::NAN,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut velocity = net.zero_grad();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = net.zero_grad();
            let mut used = 0usize;
            for &i in batch {
                let s = train_set[i];
                let trace = net.forward(&s.features);
                match sample_loss(net, &trace.output, s, scene, &cfg.weights, true) {
                    Ok(SampleLoss {
                        components: c,
                        grad: Some(g),
                        ..
                    }) => {
                        loss_sum += crate::losses::total_loss(&c, &cfg.weights);
                        loss_n += 1;
                        grad.add(&net.backward(&trace, &g));
                        used += 1;
                    }
                    Ok(_) => unreachable!("gradient requested"),
                    Err(Error::NearDegenerateSvd { .. })
                    | Err(Error::DegenerateMatrix(_))
                    | Err(Error::DegenerateInput(_)) => log.skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if used > 0 {
                grad.scale(1.0 / used as f64);
                let norm = grad.norm();
                if norm > cfg.clip_norm {
                    grad.scale(cfg.clip_norm / norm);
                    log.clipped += 1;
                }
                velocity.scale(cfg.momentum);
                velocity.add(&grad);
                net.apply(&velocity, -cfg.lr_at(log.steps, total_steps));
            }
            log.steps += 1;
        }
        if !net.is_finite() {
            return Err(Error::Invalid(format!("weights became non-finite at epoch {epoch}")));
        }
        log.epochs.push(EpochLog {
            epoch,
            metrics: evaluate(net, &eval_set, scene, &cfg.weights),
            train_total: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthtrain::{generate_dataset, RotMode, SynthConfig};

    fn scene(c: &SynthConfig) -> Scene<'_> {
        Scene {
            cam: &c.cam,
            model: &c.model,
        }
    }

    #[test]
    fn zero_epochs_only_evaluates() {
        let synth = SynthConfig {
            n_frames: 10,
            ..SynthConfig::default()
        };
        let data = generate_dataset(&synth).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let mut net = ToyNet::new(RotMode::Svd9, true, &cfg.hidden, 0);
        let before = net.clone();
        let log = train(&mut net, &data, scene(&synth), &cfg).unwrap();
        assert_eq!(log.epochs.len(), 1);
        assert_eq!(log.steps, 0);
        assert_eq!(net, before);
        assert!(log.last().metrics.total.is_finite());
        assert_eq!((log.n_train, log.n_eval), (8, 2));
    }

    #[test]
    fn single_sample_overfits() {
        let synth = SynthConfig {
            n_frames: 1,
            ..SynthConfig::default()
        };
        for seed in 0..3 {
            let data = generate_dataset(&SynthConfig { seed, ..synth.clone() }).unwrap();
            let cfg = TrainConfig {
                epochs: 2000,
                batch_size: 1,
                seed,
                ..TrainConfig::default()
            };
            let mut net = ToyNet::new(RotMode::Svd9, true, &cfg.hidden, seed);
            let log = train(&mut net, &data, scene(&synth), &cfg).unwrap();
            assert_eq!(log.steps, 2000);
            let total = log.last().metrics.total;
            assert!(total < 1e-3, "seed {seed}: total {total}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let synth = SynthConfig {
            n_frames: 40,
            noise_px: 1.0,
            occlusion: 0.1,
            ..SynthConfig::default()
        };
        let data = generate_dataset(&synth).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let go = || {
            let mut net = ToyNet::new(RotMode::Gso6, true, &cfg.hidden, 3);
            let log = train(&mut net, &data, scene(&synth), &cfg).unwrap();
            (net, log)
        };
        let (na, la) = go();
        let (nb, lb) = go();
        assert_eq!(na, nb);
        assert_eq!(la.to_csv(), lb.to_csv());
    }

    #[test]
    fn loss_trend_is_downward() {
        let synth = SynthConfig::default();
        let data = generate_dataset(&synth).unwrap();
        let cfg = TrainConfig::default();
        let mut net = ToyNet::new(RotMode::Svd9, true, &cfg.hidden, 0);
        let log = train(&mut net, &data, scene(&synth), &cfg).unwrap();
        let ma = log.train_moving_average(5);
        let n = ma.len() as f64;
        let mx = (n - 1.0) / 2.0;
        let my = ma.iter().sum::<f64>() / n;
        let slope = ma
            .iter()
            .enumerate()
            .map(|(i, y)| (i as f64 - mx) * (y - my))
            .sum::<f64>()
            / ma.iter().enumerate().map(|(i, _)| (i as f64 - mx).powi(2)).sum::<f64>();
        assert!(slope < 0.0, "slope {slope}");
        let mut low = f64::INFINITY;
        for (i, &m) in ma.iter().enumerate() {
            assert!(
                m <= 1.1 * low || low.is_infinite(),
                "epoch {}: {m} after minimum {low}",
                i + 5
            );
            low = low.min(m);
        }
        assert!(ma[ma.len() - 1] < 0.5 * ma[0], "{} vs {}", ma[ma.len() - 1], ma[0]);
        assert_eq!(log.skipped, 0);
    }

    #[test]
    fn missing_head_is_rejected() {
        let synth = SynthConfig {
            n_frames: 4,
            ..SynthConfig::default()
        };
        let data = generate_dataset(&synth).unwrap();
        let mut net = ToyNet::new(RotMode::Svd9, false, &[8], 0);
        assert!(matches!(
            train(&mut net, &data, scene(&synth), &TrainConfig::default()),
            Err(Error::Invalid(_))
        ));
        assert!(train(&mut net, &[], scene(&synth), &TrainConfig::default()).is_err());
    }

    #[test]
    fn sample_loss_gradient_matches_finite_differences() {
        let synth = SynthConfig {
            n_frames: 3,
            ..SynthConfig::default()
        };
        let data = generate_dataset(&synth).unwrap();
        let scene = Scene {
            cam: &synth.cam,
            model: &synth.model,
        };
        let w = LossWeights::new(1.0, 1.0, 0.7, 1.0).unwrap();
        for mode in RotMode::ALL {
            let net = ToyNet::new(mode, true, &[16], 1);
            for s in &data {
                let out = net.forward(&s.features).output;
                let g = sample_loss(&net, &out, s, scene, &w, true).unwrap().grad.unwrap();
                let f = |o: &[f64]| {
                    let l = sample_loss(&net, o, s, scene, &w, false).unwrap();
                    crate::losses::total_loss(&l.components, &w) + w.lambda_kp * l.visibility
                };
                let n = crate::diff::gradcheck::numeric_gradient(&out, f);
                let e = crate::diff::gradcheck::relative_error(&g, &n);
                assert!(e < 1e-6, "{mode}: {e}\n{g:?}\n{n:?}");
            }
        }
    }
}
