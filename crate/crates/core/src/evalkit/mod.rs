//! ADD / ADD-S pose metrics, 0.1d accuracy aggregation and report writers.

pub mod kdtree;
pub mod model;
pub mod ply;
pub mod timing;

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseJson, Vec3};
use kdtree::{brute_nearest, point_distance, KdTree};
pub use model::{load_model, load_models_dir, max_pairwise_distance, ObjectModel};
pub use ply::{read_ply_vertices, write_ply_ascii};
pub use timing::{timing_report, StageTimes, TimingReport};

/// Fraction of the diameter below which a pose counts as correct.
pub const DEFAULT_THRESHOLD_FACTOR: f64 = 0.1;

/// Nearest-neighbor strategy for ADD-S.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NnMode {
    /// O(m²) scan, the reference.
    Brute,
    /// Exact kd-tree search.
    Accelerated,
}

fn transform_all(model: &ObjectModel, pose: &Pose) -> Vec<Vec3> {
    model.points.iter().map(|x| pose.transform_point(x)).collect()
}

/// Mean distance between corresponding model points under the two poses.
pub fn add_metric(model: &ObjectModel, gt: &Pose, pred: &Pose) -> f64 {
    let sum: f64 = model
        .points
        .iter()
        .map(|x| point_distance(&gt.transform_point(x), &pred.transform_point(x)))
        .sum();
    sum / model.points.len() as f64
}

/// Mean distance from each ground-truth-posed point to the closest
/// prediction-posed point.
pub fn adds_metric(model: &ObjectModel, gt: &Pose, pred: &Pose, mode: NnMode) -> f64 {
    let target = transform_all(model, pred);
    let queries = transform_all(model, gt);
    let sum: f64 = match mode {
        NnMode::Brute => queries
            .iter()
            .map(|q| brute_nearest(&target, q).expect("model is nonempty").1)
            .sum(),
        NnMode::Accelerated => {
            let tree = KdTree::build(&target);
            queries
                .iter()
                .map(|q| tree.nearest(q).expect("model is nonempty").1)
                .sum()
        }
    };
    sum / queries.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MetricKind {
    #[serde(rename = "ADD")]
    Add,
    #[serde(rename = "ADD-S")]
    AddS,
}

/// ADD-S for symmetric models, ADD otherwise.
pub fn pose_error(model: &ObjectModel, gt: &Pose, pred: &Pose) -> (MetricKind, f64) {
    if model.symmetric {
        (MetricKind::AddS, adds_metric(model, gt, pred, NnMode::Accelerated))
    } else {
        (MetricKind::Add, add_metric(model, gt, pred))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub object: String,
    pub gt: Pose,
    pub pred: Pose,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    object: String,
    #[serde(rename = "R_gt")]
    r_gt: [f64; 9],
    t_gt: [f64; 3],
    #[serde(rename = "R_pred")]
    r_pred: [f64; 9],
    t_pred: [f64; 3],
}

impl EvalRecord {
    /// Parses one JSON-lines record.
    pub fn from_json(line: &str) -> std::result::Result<Self, String> {
        let r: RecordJson = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let gt = Pose::try_from(PoseJson { r: r.r_gt, t: r.t_gt }).map_err(|e| format!("R_gt/t_gt: {e}"))?;
        let pred = Pose::try_from(PoseJson {
            r: r.r_pred,
            t: r.t_pred,
        })
        .map_err(|e| format!("R_pred/t_pred: {e}"))?;
        Ok(EvalRecord {
            object: r.object,
            gt,
            pred,
        })
    }

    pub fn to_json(&self) -> String {
        let g = PoseJson::from(&self.gt);
        let p = PoseJson::from(&self.pred);
        serde_json::to_string(&RecordJson {
            object: self.object.clone(),
            r_gt: g.r,
            t_gt: g.t,
            r_pred: p.r,
            t_pred: p.t,
        })
        .expect("record serializes")
    }
}

/// Reads a JSON-lines record file; blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = EvalRecord::from_json(&line).map_err(|msg| Error::parse(path, format!("line {}: {msg}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObjectScore {
    pub object: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy_percent: f64,
    pub metric: MetricKind,
    pub diameter: f64,
}

/// Per-object accuracy plus the unweighted object average.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub threshold_factor: f64,
    pub rows: Vec<ObjectScore>,
    /// Mean of the per-object accuracies (each object weighs the same).
    pub average_percent: f64,
    pub total: usize,
    /// Objects whose models were subsampled, with their original point count.
    pub subsampled: Vec<(String, usize)>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("object,n,accuracy_percent\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.2}\n", r.object, r.n, r.accuracy_percent));
        }
        s.push_str(&format!("Average,{},{:.2}\n", self.total, self.average_percent));
        s
    }

    pub fn to_pretty(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.object.len())
            .max()
            .unwrap_or(0)
            .max("Average".len());
        let mut s = format!(
            "{:<width$}  {:>8}  {:>6}  {:>6}  {:>9}\n",
            "Object", "Diam (m)", "Metric", "N", "Acc (%)"
        );
        s.push_str(&format!("{}\n", "-".repeat(width + 41)));
        for r in &self.rows {
            let metric = match r.metric {
                MetricKind::Add => "ADD",
                MetricKind::AddS => "ADD-S",
            };
            s.push_str(&format!(
                "{:<width$}  {:>8.3}  {:>6}  {:>6}  {:>9.2}\n",
                r.object, r.diameter, metric, r.n, r.accuracy_percent
            ));
        }
        s.push_str(&format!("{}\n", "-".repeat(width + 41)));
        s.push_str(&format!(
            "{:<width$}  {:>8}  {:>6}  {:>6}  {:>9.2}\n",
            "Average", "", "", self.total, self.average_percent
        ));
        for (name, m) in &self.subsampled {
            s.push_str(&format!("note: {name} subsampled from {m} points\n"));
        }
        s
    }
}

/// Accuracy at the standard 0.1·diameter threshold.
pub fn accuracy_01d(records: &[EvalRecord], models: &BTreeMap<String, ObjectModel>) -> Result<Report> {
    accuracy_at(records, models, DEFAULT_THRESHOLD_FACTOR)
}

/// Fraction of records per object whose pose error is strictly below
/// `factor · diameter`. Objects appear in name order.
pub fn accuracy_at(records: &[EvalRecord], models: &BTreeMap<String, ObjectModel>, factor: f64) -> Result<Report> {
    if let Some(r) = records.iter().find(|r| !models.contains_key(&r.object)) {
        return Err(Error::Lookup(r.object.clone()));
    }
    let scored: Vec<(MetricKind, f64)> = records
        .par_iter()
        .map(|r| pose_error(&models[&r.object], &r.gt, &r.pred))
        .collect();

    let mut per_object: BTreeMap<&str, (usize, usize, MetricKind)> = BTreeMap::new();
    for (rec, (kind, err)) in records.iter().zip(&scored) {
        let model = &models[&rec.object];
        let entry = per_object.entry(&rec.object).or_insert((0, 0, *kind));
        entry.0 += 1;
        if *err < factor * model.diameter {
            entry.1 += 1;
        }
    }
    let rows: Vec<ObjectScore> = per_object
        .into_iter()
        .map(|(name, (n, correct, metric))| ObjectScore {
            object: name.to_string(),
            n,
            correct,
            accuracy_percent: 100.0 * correct as f64 / n as f64,
            metric,
            diameter: models[name].diameter,
        })
        .collect();
    let average_percent = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.accuracy_percent).sum::<f64>() / rows.len() as f64
    };
    let subsampled = rows
        .iter()
        .filter_map(|r| models[&r.object].subsampled_from.map(|m| (r.object.clone(), m)))
        .collect();
    Ok(Report {
        threshold_factor: factor,
        rows,
        average_percent,
        total: records.len(),
        subsampled,
    })
}
