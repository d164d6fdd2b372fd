use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::kdtree::point_distance;
use super::ply::read_ply_vertices;
use crate::error::{Error, Result};
use crate::geometry::{bbox_corner, Vec3};

/// Objects scored with ADD-S unless a sidecar says otherwise.
pub const DEFAULT_SYMMETRIC: &[&str] = &["eggbox", "glue"];

/// Models larger than this are stride-subsampled before scoring.
pub const MAX_METRIC_POINTS: usize = 10_000;

/// A rigid object: model-frame points (meters), diameter and symmetry flag.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    pub name: String,
    pub points: Vec<Vec3>,
    pub diameter: f64,
    pub symmetric: bool,
    /// Point count before subsampling, when subsampling happened.
    pub subsampled_from: Option<usize>,
}

impl ObjectModel {
    /// Builds a model; the diameter is computed from the points when absent.
    pub fn new(name: impl Into<String>, points: Vec<Vec3>, diameter: Option<f64>, symmetric: bool) -> Result<Self> {
        let name = name.into();
        if points.len() < 4 {
            return Err(Error::Invalid(format!(
                "model '{name}' needs at least 4 points, got {}",
                points.len()
            )));
        }
        if !points.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err(Error::Invalid(format!("model '{name}' has non-finite points")));
        }
        let (points, subsampled_from) = subsample(points, MAX_METRIC_POINTS);
        let diameter = match diameter {
            Some(d) if d > 0.0 && d.is_finite() => d,
            Some(d) => {
                return Err(Error::Invalid(format!(
                    "model '{name}' diameter must be positive, got {d}"
                )))
            }
            None => max_pairwise_distance(&points),
        };
        if diameter <= 0.0 {
            return Err(Error::Invalid(format!("model '{name}' has zero extent")));
        }
        Ok(ObjectModel {
            name,
            points,
            diameter,
            symmetric,
            subsampled_from,
        })
    }

    /// The 8 corners of the cube `[-0.5, 0.5]³`.
    pub fn unit_cube(name: &str) -> Self {
        let lo = Vec3::repeat(-0.5);
        let hi = Vec3::repeat(0.5);
        let pts = (0..8).map(|i| bbox_corner(&lo, &hi, i)).collect();
        ObjectModel::new(name, pts, None, false).expect("cube is valid")
    }

    /// Surface samples of an axis-aligned box centered at the origin.
    pub fn box_surface(name: &str, half_extents: Vec3, per_edge: usize) -> Self {
        let n = per_edge.max(2);
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let on_face = [i, j, k].iter().any(|&c| c == 0 || c == n - 1);
                    if on_face {
                        let f = |c: usize, h: f64| -h + 2.0 * h * c as f64 / (n - 1) as f64;
                        pts.push(Vec3::new(
                            f(i, half_extents.x),
                            f(j, half_extents.y),
                            f(k, half_extents.z),
                        ));
                    }
                }
            }
        }
        ObjectModel::new(name, pts, None, false).expect("box is valid")
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Bounding-box corners in sign order followed by the centroid.
    pub fn keypoints_3d(&self) -> [Vec3; 9] {
        let (lo, hi) = self.bbox();
        let mut out = [Vec3::zeros(); 9];
        for (i, p) in out.iter_mut().take(8).enumerate() {
            *p = bbox_corner(&lo, &hi, i);
        }
        out[8] = self.centroid();
        out
    }
}

/// Exact O(m²) diameter.
pub fn max_pairwise_distance(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(point_distance(a, b));
        }
    }
    best
}

fn subsample(points: Vec<Vec3>, cap: usize) -> (Vec<Vec3>, Option<usize>) {
    let m = points.len();
    if m <= cap {
        return (points, None);
    }
    // Evenly spaced indices i·m/cap keep exactly `cap` points.
    let picked = (0..cap).map(|i| points[i * m / cap]).collect();
    (picked, Some(m))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    diameter: Option<f64>,
    symmetric: Option<bool>,
}

/// Loads a PLY model plus its optional `<stem>.json` sidecar.
pub fn load_model(ply_path: &Path) -> Result<ObjectModel> {
    let name = ply_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Invalid(format!("bad model file name {}", ply_path.display())))?
        .to_string();
    let points = read_ply_vertices(ply_path)?;
    let sidecar_path = ply_path.with_extension("json");
    let sidecar = if sidecar_path.exists() {
        let text = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        serde_json::from_str::<Sidecar>(&text).map_err(|e| Error::parse(&sidecar_path, e.to_string()))?
    } else {
        Sidecar::default()
    };
    let symmetric = sidecar
        .symmetric
        .unwrap_or_else(|| DEFAULT_SYMMETRIC.contains(&name.to_lowercase().as_str()));
    ObjectModel::new(name, points, sidecar.diameter, symmetric)
}

/// Loads every `*.ply` in a directory, keyed by file stem.
pub fn load_models_dir(dir: &Path) -> Result<BTreeMap<String, ObjectModel>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let m = load_model(&p)?;
        out.insert(m.name.clone(), m);
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("no .ply models in {}", dir.display())));
    }
    Ok(out)
}
