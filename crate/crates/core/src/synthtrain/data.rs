use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::ObjectModel;
use crate::geometry::{
    backproject_center, bbox9_keypoints, depth_encode, quat_to_rot, CameraModel, Keypoint2D, Pose, PoseJson, Quat, Vec3,
};
use crate::losses::{Box2D, N_KP};

/// Feature width: normalized `(u, v)` per keypoint, then 9 visibility flags.
pub const FEATURE_DIM: usize = 3 * N_KP;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub cam: CameraModel,
    pub model: ObjectModel,
    pub n_frames: usize,
    /// Keypoint feature noise, pixels.
    pub noise_px: f64,
    /// Probability that a feature keypoint is dropped.
    pub occlusion: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cam: CameraModel::new(572.0, 572.0, 320.0, 240.0, 0.4, 1.2).expect("valid camera"),
            model: default_model(),
            n_frames: 1000,
            noise_px: 0.0,
            occlusion: 0.0,
            seed: 0,
        }
    }
}

/// Box of 10 × 7 × 5 cm sampled on its surface.
pub fn default_model() -> ObjectModel {
    ObjectModel::box_surface("synthbox", Vec3::new(0.05, 0.035, 0.025), 5)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_px.is_finite() && self.noise_px >= 0.0) {
            return Err(Error::Invalid(format!("noise must be >= 0, got {}", self.noise_px)));
        }
        if !(0.0..=1.0).contains(&self.occlusion) {
            return Err(Error::Range {
                value: self.occlusion,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(())
    }
}

/// One synthetic frame: network input features and all labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: [f64; FEATURE_DIM],
    pub pose: Pose,
    /// Normalized depth label.
    pub sigma: f64,
    /// Projected object center, pixels.
    pub center: [f64; 2],
    /// Exact projected keypoints; visible when inside the image.
    pub keypoints: [Keypoint2D; 9],
    pub bbox: Box2D,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleJson {
    features: Vec<f64>,
    #[serde(flatten)]
    pose: PoseJson,
    sigma: f64,
    center: [f64; 2],
    keypoints: [Keypoint2D; 9],
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

impl Sample {
    pub fn to_json(&self) -> String {
        let b = &self.bbox;
        serde_json::to_string(&SampleJson {
            features: self.features.to_vec(),
            pose: PoseJson::from(&self.pose),
            sigma: self.sigma,
            center: self.center,
            keypoints: self.keypoints,
            bbox: [b.cx, b.cy, b.w, b.h],
        })
        .expect("samples serialize")
    }

    pub fn from_json(line: &str) -> std::result::Result<Self, String> {
        let s: SampleJson = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let features = s
            .features
            .try_into()
            .map_err(|v: Vec<f64>| format!("expected {FEATURE_DIM} features, got {}", v.len()))?;
        Ok(Sample {
            features,
            pose: Pose::try_from(s.pose).map_err(|e| e.to_string())?,
            sigma: s.sigma,
            center: s.center,
            keypoints: s.keypoints,
            bbox: Box2D::new(s.bbox[0], s.bbox[1], s.bbox[2], s.bbox[3]),
        })
    }
}

fn frame_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Generates `n_frames` samples; frame `i` depends only on `(seed, i)`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..cfg.n_frames).map(|i| generate_frame(cfg, i)).collect()
}

pub fn generate_frame(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    let mut rng = frame_rng(cfg.seed, index);
    let cam = &cfg.cam;
    let q = loop {
        let q = Quat::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.norm() > 1e-6 {
            break q;
        }
    };
    let r = quat_to_rot(&q)?;
    let (w, h) = cam.image_size();
    let tz = rng.random_range(cam.dist_min..=cam.dist_max);
    let ox = rng.random_range(0.1 * w as f64..=0.9 * w as f64);
    let oy = rng.random_range(0.1 * h as f64..=0.9 * h as f64);
    let pose = Pose::new(r, backproject_center(cam, ox, oy, tz)?);

    let mut keypoints = bbox9_keypoints(&cfg.model, &pose, cam)?;
    for k in keypoints.iter_mut() {
        k.visible = k.u >= 0.0 && k.v >= 0.0 && k.u < w as f64 && k.v < h as f64;
    }
    let noise = Normal::new(0.0, cfg.noise_px).expect("noise validated");
    let mut features = [0.0; FEATURE_DIM];
    for (i, k) in keypoints.iter().enumerate() {
        let du = noise.sample(&mut rng);
        let dv = noise.sample(&mut rng);
        let dropped = rng.random_bool(cfg.occlusion);
        if k.visible && !dropped {
            features[2 * i] = (k.u + du - cam.cx) / cam.fx;
            features[2 * i + 1] = (k.v + dv - cam.cy) / cam.fy;
            features[2 * N_KP + i] = 1.0;
        }
    }
    Ok(Sample {
        features,
        sigma: depth_encode(tz, cam)?,
        center: [ox, oy],
        bbox: Box2D::hull(keypoints.iter().map(|k| (k.u, k.v))).expect("nine keypoints"),
        keypoints,
        pose,
    })
}

pub fn write_dataset(path: &Path, data: &[Sample]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for s in data {
        writeln!(f, "{}", s.to_json()).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| Sample::from_json(l).map_err(|m| Error::parse(path, format!("line {}: {m}", i + 1))))
        .collect()
}
