use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

use super::data::{generate_dataset, SynthConfig};
use super::net::{RotMode, ToyNet};
use super::train::{train, Scene, TrainConfig};

/// Final evaluation of one training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub geodesic_deg: f64,
    pub trans_m: f64,
    pub accuracy_percent: f64,
    pub skipped: usize,
}

/// Per-variant summary across seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub mean_geodesic_deg: f64,
    pub sd_geodesic_deg: f64,
    pub mean_trans_m: f64,
    pub mean_accuracy_percent: f64,
    pub sd_accuracy_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub runs: Vec<RunResult>,
    pub summary: Vec<VariantSummary>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl ExperimentTable {
    fn from_runs(runs: Vec<RunResult>, variants: &[String]) -> Self {
        let summary = variants
            .iter()
            .map(|v| {
                let rs: Vec<&RunResult> = runs.iter().filter(|r| &r.variant == v).collect();
                let geo: Vec<f64> = rs.iter().map(|r| r.geodesic_deg).collect();
                let acc: Vec<f64> = rs.iter().map(|r| r.accuracy_percent).collect();
                let (mg, sg) = mean_sd(&geo);
                let (ma, sa) = mean_sd(&acc);
                VariantSummary {
                    variant: v.clone(),
                    mean_geodesic_deg: mg,
                    sd_geodesic_deg: sg,
                    mean_trans_m: rs.iter().map(|r| r.trans_m).sum::<f64>() / rs.len() as f64,
                    mean_accuracy_percent: ma,
                    sd_accuracy_percent: sa,
                }
            })
            .collect();
        ExperimentTable { runs, summary }
    }

    pub fn summary_for(&self, variant: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == variant)
    }

    pub fn run(&self, variant: &str, seed: u64) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.variant == variant && r.seed == seed)
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("variant,seed,geodesic_deg,trans_m,accuracy_percent,skipped\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.6},{:.2},{}",
                r.variant, r.seed, r.geodesic_deg, r.trans_m, r.accuracy_percent, r.skipped
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "variant,mean_geodesic_deg,sd_geodesic_deg,mean_trans_m,mean_accuracy_percent,sd_accuracy_percent\n",
        );
        for v in &self.summary {
            let _ = writeln!(
                s,
                "{},{:.4},{:.4},{:.6},{:.2},{:.2}",
                v.variant,
                v.mean_geodesic_deg,
                v.sd_geodesic_deg,
                v.mean_trans_m,
                v.mean_accuracy_percent,
                v.sd_accuracy_percent
            );
        }
        s
    }
}

fn run_one(
    synth: &SynthConfig,
    tcfg: &TrainConfig,
    variant: String,
    mode: RotMode,
    keypoint_head: bool,
    seed: u64,
) -> Result<RunResult> {
    let data = generate_dataset(&SynthConfig { seed, ..synth.clone() })?;
    let cfg = TrainConfig { seed, ..tcfg.clone() };
    let mut net = ToyNet::new(mode, keypoint_head, &cfg.hidden, seed);
    let scene = Scene {
        cam: &synth.cam,
        model: &synth.model,
    };
    let log = train(&mut net, &data, scene, &cfg)?;
    let m = &log.last().metrics;
    Ok(RunResult {
        variant,
        seed,
        geodesic_deg: m.geodesic_deg,
        trans_m: m.trans_m,
        accuracy_percent: m.accuracy_percent,
        skipped: log.skipped,
    })
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.len() < 3 {
        return Err(Error::Invalid(format!("need at least 3 seeds, got {}", seeds.len())));
    }
    Ok(())
}

/// Trains one net per rotation mode and seed; data and hidden-layer
/// initialization depend only on the seed.
pub fn compare_representations(synth: &SynthConfig, tcfg: &TrainConfig, seeds: &[u64]) -> Result<ExperimentTable> {
    check_seeds(seeds)?;
    let head = tcfg.weights.lambda_kp > 0.0;
    let jobs: Vec<(RotMode, u64)> = RotMode::ALL
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(m, s)| run_one(synth, tcfg, m.name().to_string(), m, head, s))
        .collect::<Result<Vec<_>>>()?;
    let variants: Vec<String> = RotMode::ALL.iter().map(|m| m.name().to_string()).collect();
    Ok(ExperimentTable::from_runs(runs, &variants))
}

pub const WITH_KP: &str = "with_keypoint_head";
pub const WITHOUT_KP: &str = "without_keypoint_head";

/// Trains each seed with the keypoint head (`λ_kp` from `tcfg`) and without
/// it (`λ_kp = 0`, head removed).
pub fn ablate_keypoint_head(synth: &SynthConfig, tcfg: &TrainConfig, seeds: &[u64]) -> Result<ExperimentTable> {
    check_seeds(seeds)?;
    if !(tcfg.weights.lambda_kp > 0.0) {
        return Err(Error::Invalid("the ablation needs lambda_kp > 0".into()));
    }
    let mut without = tcfg.clone();
    without.weights.lambda_kp = 0.0;
    let jobs: Vec<(bool, u64)> = [true, false]
        .iter()
        .flat_map(|&h| seeds.iter().map(move |&s| (h, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(head, s)| {
            let (name, cfg) = if head { (WITH_KP, tcfg) } else { (WITHOUT_KP, &without) };
            run_one(synth, cfg, name.to_string(), RotMode::Svd9, head, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentTable::from_runs(
        runs,
        &[WITH_KP.to_string(), WITHOUT_KP.to_string()],
    ))
}

/// One row per variant: method and mean accuracy.
pub fn ablation_table_csv(t: &ExperimentTable) -> String {
    let mut s = String::from("method,accuracy_percent\n");
    for (label, key) in [("With keypoint head", WITH_KP), ("Without keypoint head", WITHOUT_KP)] {
        if let Some(v) = t.summary_for(key) {
            let _ = writeln!(s, "{label},{:.2}", v.mean_accuracy_percent);
        }
    }
    s
}
