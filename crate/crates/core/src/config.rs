//! File-based settings (TOML or JSON) that command-line flags override.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::evalkit::{ObjectModel, DEFAULT_THRESHOLD_FACTOR};
use crate::geometry::{CameraModel, Vec3};
use crate::losses::LossWeights;
use crate::synthtrain::{RotMode, SynthConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_frames: usize,
    pub noise_px: f64,
    pub occlusion: f64,
    /// Half extents of the synthetic box, meters.
    pub half_extents: [f64; 3],
    /// Surface samples per box edge.
    pub per_edge: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            n_frames: d.n_frames,
            noise_px: d.noise_px,
            occlusion: d.occlusion,
            half_extents: [0.05, 0.035, 0.025],
            per_edge: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold_factor: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            threshold_factor: DEFAULT_THRESHOLD_FACTOR,
        }
    }
}

/// Everything a run can be configured with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub mode: RotMode,
    pub camera: Option<CameraModel>,
    pub weights: LossWeights,
    pub train: TrainConfig,
    pub synth: SynthSection,
    pub decode: DecodeConfig,
    pub augment: AugmentConfig,
    pub eval: EvalSection,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            mode: RotMode::Svd9,
            camera: None,
            weights: LossWeights::default(),
            train: TrainConfig::default(),
            synth: SynthSection::default(),
            decode: DecodeConfig::default(),
            augment: AugmentConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl Settings {
    pub fn camera_or_default(&self) -> CameraModel {
        self.camera.unwrap_or(SynthConfig::default().cam)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let s = &self.synth;
        if s.half_extents.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::Invalid(format!(
                "synthetic half extents must be positive, got {:?}",
                s.half_extents
            )));
        }
        let [x, y, z] = s.half_extents;
        let cfg = SynthConfig {
            cam: self.camera_or_default(),
            model: ObjectModel::box_surface("synthbox", Vec3::new(x, y, z), s.per_edge),
            n_frames: s.n_frames,
            noise_px: s.noise_px,
            occlusion: s.occlusion,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training settings with the top-level seed and loss weights applied.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            seed: self.seed,
            weights: self.weights,
            ..self.train.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.train_config()?;
        self.synth_config()?;
        self.decode.validate()?;
        self.augment.validate()?;
        let f = self.eval.threshold_factor;
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::Invalid(format!("threshold factor must be positive, got {f}")));
        }
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Parses settings text. JSON is assumed when `json` is set, TOML otherwise.
pub fn parse_settings(text: &str, json: bool) -> std::result::Result<Settings, String> {
    if text.trim().is_empty() {
        return Ok(Settings::default());
    }
    if json {
        serde_json::from_str(text).map_err(|e| format!("line {}, column {}: {e}", e.line(), e.column()))
    } else {
        toml::from_str(text).map_err(|e| match e.span() {
            Some(span) => {
                let (l, c) = line_col(text, span.start);
                format!("line {l}, column {c}: {}", e.message())
            }
            None => e.message().to_string(),
        })
    }
}

/// Loads a TOML or JSON settings file (by extension; TOML otherwise).
pub fn config_load(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let settings = parse_settings(&text, json).map_err(|m| Error::parse(path, m))?;
    settings.validate()?;
    Ok(settings)
}
