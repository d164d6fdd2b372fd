//! Command-line front end: argument parsing, settings merge, run manifests.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::augment::{augment_frame, ImageRGB, LabeledFrame};
use crate::config::{config_load, Settings};
use crate::decode::{batch_decode, batch_decode_timed, read_raw_detections, RawDetection};
use crate::diff::gradcheck::{grad_check, CheckOp, GradCheckReport};
use crate::error::{Error, Result};
use crate::evalkit::{accuracy_at, load_models_dir, read_records, timing_report, ObjectModel, StageTimes};
use crate::geometry::{backproject_center, quat_to_rot, CameraModel, Pose, PoseJson, Quat};
use crate::synthtrain::{
    ablate_keypoint_head, ablation_table_csv, compare_representations, generate_dataset, read_dataset, train,
    write_dataset, RotMode, Scene, ToyNet,
};

#[derive(Debug, Parser)]
#[command(
    name = "posekit",
    version,
    about = "6-DoF object pose toolkit",
    disable_help_subcommand = true
)]
pub struct Cli {
    /// TOML or JSON settings file (`.json` selects JSON); flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw [default: 0].
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output file (directory for `augment`); stdout when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Manifest path [default: <out>.manifest.json, else posekit-manifest.json].
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Camera JSON {fx, fy, cx, cy, dist_min, dist_max} [default: 572, 572, 320, 240, 0.4, 1.2].
    #[arg(long, global = true, value_name = "FILE")]
    pub cam: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-object 0.1d accuracy of pose records (ADD, ADD-S for symmetric objects).
    Eval(EvalArgs),
    /// Analytic versus finite-difference gradients; fails unless every op passes.
    Gradcheck(GradcheckArgs),
    /// Renders labeled frames and applies background, HSV and rotation augmentation.
    Augment(AugmentArgs),
    /// Writes a synthetic keypoint-feature dataset as JSON lines.
    SynthGen(SynthArgs),
    /// Trains the toy regressor and writes the per-epoch log as CSV.
    Train(TrainArgs),
    /// Trains one net per rotation representation and seed.
    CompareRot(ExperimentArgs),
    /// Trains with and without the keypoint head.
    AblateKp(ExperimentArgs),
    /// Turns raw head outputs into 6-DoF detections.
    Decode(DecodeArgs),
    /// Per-stage timing report (Preprocess, Prediction, Postprocess, Total).
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of `*.ply` models with optional `<name>.json` sidecars.
    #[arg(long, value_name = "DIR")]
    pub models: PathBuf,
    /// Pose records, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    pub records: PathBuf,
    /// Threshold as a fraction of the diameter [default: 0.1].
    #[arg(long)]
    pub threshold_factor: Option<f64>,
    /// Aligned table instead of CSV.
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Samples per op.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Restrict to these ops (rotation, translation, keypoint, ciou, svd_project, gso6, quat, euler).
    #[arg(long = "op", value_name = "OP")]
    pub ops: Vec<CheckOp>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Number of frames.
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    /// Directory of background images (PNG or PPM), resized to the frame.
    #[arg(long, value_name = "DIR")]
    pub bg_dir: Option<PathBuf>,
    /// Model directory; the first model (or `--object`) is rendered [default: synthetic box].
    #[arg(long, value_name = "DIR")]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub object: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub frames: Option<usize>,
    /// Keypoint noise, pixels.
    #[arg(long)]
    pub noise_px: Option<f64>,
    /// Probability that a feature keypoint is dropped.
    #[arg(long)]
    pub occlusion: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub mode: Option<RotMode>,
    #[arg(long)]
    pub lambda_r: Option<f64>,
    #[arg(long)]
    pub lambda_t: Option<f64>,
    #[arg(long)]
    pub lambda_kp: Option<f64>,
    #[arg(long)]
    pub lambda_bb: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Dataset from `synth-gen`; generated from the settings when omitted.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub flags: TrainFlags,
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Seeds `seed, seed + 1, …`.
    #[arg(long, default_value_t = 5)]
    pub n_seeds: u64,
    /// Per-run CSV.
    #[arg(long, value_name = "FILE")]
    pub runs_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Raw detections: JSON lines, or little-endian f32 records when `.bin`.
    #[arg(long, value_name = "FILE")]
    pub records: PathBuf,
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Replay decoding of `--records`, timing filter, decode and NMS.
    #[arg(long, requires = "records", conflicts_with = "stages_ms")]
    pub stage_sim: bool,
    #[arg(long, value_name = "FILE")]
    pub records: Option<PathBuf>,
    /// Canned stage means in ms, comma separated (Preprocess,Prediction,Postprocess).
    #[arg(long, value_delimiter = ',', value_name = "MS")]
    pub stages_ms: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub decimals: usize,
    #[arg(long)]
    pub pretty: bool,
}

const STAGE_NAMES: [&str; 3] = ["Preprocess", "Prediction", "Postprocess"];

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

/// What a run read and how it was configured.
#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    settings: &'a Settings,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

struct Run {
    settings: Settings,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
}

impl Run {
    fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    fn hash_dir(&mut self, dir: &Path) -> Result<()> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        files.iter().try_for_each(|f| self.hash_input(f))
    }

    fn write_text(&mut self, out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
        match out {
            Some(p) => {
                std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
                self.outputs.push(p.display().to_string());
            }
            None => stdout
                .write_all(text.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))?,
        }
        Ok(())
    }
}

fn manifest_path(cli: &Cli) -> PathBuf {
    match (&cli.manifest, &cli.out) {
        (Some(m), _) => m.clone(),
        (None, Some(o)) => {
            let mut s = o.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        (None, None) => PathBuf::from("posekit-manifest.json"),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Eval(_) => "eval",
        Command::Gradcheck(_) => "gradcheck",
        Command::Augment(_) => "augment",
        Command::SynthGen(_) => "synth-gen",
        Command::Train(_) => "train",
        Command::CompareRot(_) => "compare-rot",
        Command::AblateKp(_) => "ablate-kp",
        Command::Decode(_) => "decode",
        Command::Bench(_) => "bench",
    }
}

fn apply_train_flags(s: &mut Settings, f: &TrainFlags) {
    if let Some(e) = f.epochs {
        s.train.epochs = e;
    }
    if let Some(lr) = f.lr {
        s.train.lr = lr;
    }
    if let Some(m) = f.mode {
        s.mode = m;
    }
    let w = &mut s.weights;
    for (dst, src) in [
        (&mut w.lambda_r, f.lambda_r),
        (&mut w.lambda_t, f.lambda_t),
        (&mut w.lambda_kp, f.lambda_kp),
        (&mut w.lambda_bb, f.lambda_bb),
    ] {
        if let Some(v) = src {
            *dst = v;
        }
    }
}

fn apply_synth_flags(s: &mut Settings, f: &SynthArgs) {
    if let Some(n) = f.frames {
        s.synth.n_frames = n;
    }
    if let Some(x) = f.noise_px {
        s.synth.noise_px = x;
    }
    if let Some(x) = f.occlusion {
        s.synth.occlusion = x;
    }
}

/// File settings (or defaults) with command-line overrides applied.
fn resolve_settings(cli: &Cli, run_inputs: &mut Vec<InputHash>) -> Result<Settings> {
    let mut s = match &cli.config {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            run_inputs.push(InputHash {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
            config_load(p)?
        }
        None => Settings::default(),
    };
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(p) = &cli.cam {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        run_inputs.push(InputHash {
            path: p.display().to_string(),
            sha256: sha256_hex(text.as_bytes()),
        });
        let cam: CameraModel = serde_json::from_str(&text).map_err(|e| Error::parse(p, e.to_string()))?;
        s.camera = Some(cam);
    }
    match &cli.command {
        Command::Train(a) => {
            apply_train_flags(&mut s, &a.flags);
            apply_synth_flags(&mut s, &a.synth);
        }
        Command::CompareRot(a) | Command::AblateKp(a) => {
            apply_train_flags(&mut s, &a.flags);
            apply_synth_flags(&mut s, &a.synth);
        }
        Command::SynthGen(a) => apply_synth_flags(&mut s, a),
        Command::Eval(a) => {
            if let Some(f) = a.threshold_factor {
                s.eval.threshold_factor = f;
            }
        }
        Command::Decode(a) => {
            if let Some(t) = a.score_threshold {
                s.decode.score_threshold = t;
            }
            if let Some(t) = a.iou_threshold {
                s.decode.iou_threshold = t;
            }
        }
        Command::Gradcheck(_) | Command::Augment(_) | Command::Bench(_) => {}
    }
    s.validate()?;
    Ok(s)
}

fn load_backgrounds(dir: &Path, w: usize, h: usize, run: &mut Run) -> Result<Vec<ImageRGB>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    files.sort();
    files
        .iter()
        .map(|f| {
            run.hash_input(f)?;
            let img = ImageRGB::read(f)?;
            Ok(if (img.width, img.height) == (w, h) {
                img
            } else {
                img.resize(w, h)
            })
        })
        .collect()
}

#[derive(Serialize)]
struct FrameLabel<'a> {
    index: usize,
    image: String,
    mask: String,
    #[serde(flatten)]
    pose: PoseJson,
    keypoints: &'a [crate::geometry::Keypoint2D; 9],
    #[serde(rename = "box")]
    bbox: [f64; 4],
    theta: f64,
    background: Option<usize>,
}

fn random_pose(cam: &CameraModel, rng: &mut ChaCha8Rng) -> Result<Pose> {
    let q = Quat::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let (w, h) = cam.image_size();
    let tz = rng.random_range(cam.dist_min..=cam.dist_max);
    let ox = rng.random_range(0.3 * w as f64..=0.7 * w as f64);
    let oy = rng.random_range(0.3 * h as f64..=0.7 * h as f64);
    Ok(Pose::new(quat_to_rot(&q)?, backproject_center(cam, ox, oy, tz)?))
}

fn cmd_augment(cli: &Cli, a: &AugmentArgs, run: &mut Run) -> Result<()> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Error::Invalid("augment needs --out DIR".into()))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let s = run.settings.clone();
    let cam = s.camera_or_default();
    let model = match &a.models {
        Some(dir) => {
            let models = load_models_dir(dir)?;
            run.hash_dir(dir)?;
            match &a.object {
                Some(name) => models.get(name).cloned().ok_or_else(|| Error::Lookup(name.clone()))?,
                None => models.into_values().next().expect("non-empty model map"),
            }
        }
        None => s.synth_config()?.model,
    };
    let (w, h) = cam.image_size();
    let backgrounds = match &a.bg_dir {
        Some(d) => load_backgrounds(d, w, h, run)?,
        None => Vec::new(),
    };
    let seed = s.seed;
    let aug = s.augment.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = String::new();
    for i in 0..a.frames {
        let pose = random_pose(&cam, &mut rng)?;
        let frame = LabeledFrame::render(&model, &pose, &cam)?;
        let (f, draw) = augment_frame(&frame, &cam, &backgrounds, &aug, seed, i as u64)?;
        let image = format!("frame_{i:04}.png");
        let mask = format!("mask_{i:04}.png");
        f.image.write(&out.join(&image))?;
        f.mask.write(&out.join(&mask))?;
        let b = &f.bbox;
        let label = FrameLabel {
            index: i,
            image,
            mask,
            pose: PoseJson::from(&f.pose),
            keypoints: &f.keypoints,
            bbox: [b.cx, b.cy, b.w, b.h],
            theta: draw.theta,
            background: draw.background,
        };
        labels.push_str(&serde_json::to_string(&label).expect("labels serialize"));
        labels.push('\n');
    }
    let p = out.join("labels.jsonl");
    std::fs::write(&p, labels).map_err(|e| Error::io(&p, e))?;
    run.outputs.push(out.display().to_string());
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, run: &mut Run, stdout: &mut dyn Write) -> Result<()> {
    let models: BTreeMap<String, ObjectModel> = load_models_dir(&a.models)?;
    run.hash_dir(&a.models)?;
    let records = read_records(&a.records)?;
    run.hash_input(&a.records)?;
    let report = accuracy_at(&records, &models, run.settings.eval.threshold_factor)?;
    let text = if a.pretty { report.to_pretty() } else { report.to_csv() };
    run.write_text(cli.out.as_deref(), &text, stdout)
}

fn cmd_gradcheck(cli: &Cli, a: &GradcheckArgs, run: &mut Run, stdout: &mut dyn Write) -> Result<()> {
    if a.trials == 0 {
        return Err(Error::Invalid("--trials must be positive".into()));
    }
    let ops = if a.ops.is_empty() {
        CheckOp::ALL.to_vec()
    } else {
        a.ops.clone()
    };
    let reports: Vec<GradCheckReport> = ops
        .iter()
        .map(|&op| grad_check(op, a.trials, run.settings.seed))
        .collect();
    let mut text = format!("{}\n", GradCheckReport::CSV_HEADER);
    for r in &reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    run.write_text(cli.out.as_deref(), &text, stdout)?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.op.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

fn cmd_synth(cli: &Cli, run: &mut Run) -> Result<()> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Error::Invalid("synth-gen needs --out FILE".into()))?;
    let data = generate_dataset(&run.settings.synth_config()?)?;
    write_dataset(out, &data)?;
    run.outputs.push(out.display().to_string());
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs, run: &mut Run, stdout: &mut dyn Write) -> Result<()> {
    let s = &run.settings;
    let synth = s.synth_config()?;
    let tcfg = s.train_config()?;
    let data = match &a.data {
        Some(p) => {
            let d = read_dataset(p)?;
            run.hash_input(p)?;
            d
        }
        None => generate_dataset(&synth)?,
    };
    let s = &run.settings;
    let mut net = ToyNet::new(s.mode, s.weights.lambda_kp > 0.0, &tcfg.hidden, s.seed);
    let scene = Scene {
        cam: &synth.cam,
        model: &synth.model,
    };
    let log = train(&mut net, &data, scene, &tcfg)?;
    run.write_text(cli.out.as_deref(), &log.to_csv(), stdout)
}

fn cmd_experiment(cli: &Cli, a: &ExperimentArgs, ablate: bool, run: &mut Run, stdout: &mut dyn Write) -> Result<()> {
    let s = &run.settings;
    let seeds: Vec<u64> = (s.seed..s.seed + a.n_seeds).collect();
    let synth = s.synth_config()?;
    let tcfg = s.train_config()?;
    let table = if ablate {
        ablate_keypoint_head(&synth, &tcfg, &seeds)?
    } else {
        compare_representations(&synth, &tcfg, &seeds)?
    };
    if let Some(p) = &a.runs_out {
        std::fs::write(p, table.runs_csv()).map_err(|e| Error::io(p, e))?;
        run.outputs.push(p.display().to_string());
    }
    let text = if ablate {
        ablation_table_csv(&table)
    } else {
        table.summary_csv()
    };
    run.write_text(cli.out.as_deref(), &text, stdout)
}

fn cmd_decode(cli: &Cli, a: &DecodeArgs, run: &mut Run, stdout: &mut dyn Write) -> Result<()> {
    let raws = read_raw_detections(&a.records)?;
    run.hash_input(&a.records)?;
    let s = &run.settings;
    let out = batch_decode(&raws, &s.camera_or_default(), &s.decode)?;
    let mut text = String::new();
    for d in &out.detections {
        text.push_str(&d.to_json());
        text.push('\n');
    }
    run.write_text(cli.out.as_deref(), &text, stdout)
}

fn cmd_bench(cli: &Cli, a: &BenchArgs, run: &mut Run, stdout: &mut dyn Write) -> Result<()> {
    let stages: Vec<StageTimes> = if a.stage_sim {
        let path = a.records.as_deref().expect("clap requires --records");
        let raws: Vec<RawDetection> = read_raw_detections(path)?;
        run.hash_input(path)?;
        if a.runs == 0 {
            return Err(Error::Invalid("--runs must be positive".into()));
        }
        let s = &run.settings;
        let cam = s.camera_or_default();
        let mut st = STAGE_NAMES.map(StageTimes::new);
        for _ in 0..a.runs {
            batch_decode_timed(&raws, &cam, &s.decode, &mut st)?;
        }
        st.to_vec()
    } else if let Some(ms) = &a.stages_ms {
        if ms.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Invalid(format!("stage times must be >= 0, got {ms:?}")));
        }
        ms.iter()
            .enumerate()
            .map(|(i, &t)| {
                let name = STAGE_NAMES
                    .get(i)
                    .map_or_else(|| format!("Stage {}", i + 1), |n| n.to_string());
                StageTimes::with_samples(name, vec![t])
            })
            .collect()
    } else {
        return Err(Error::Invalid("bench needs --stage-sim or --stages-ms".into()));
    };
    let report = timing_report(&stages);
    let text = if a.pretty {
        report.to_pretty(a.decimals)
    } else {
        report.to_csv(a.decimals)
    };
    run.write_text(cli.out.as_deref(), &text, stdout)
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let mut inputs = Vec::new();
    let settings = resolve_settings(cli, &mut inputs)?;
    let mut run = Run {
        settings,
        inputs,
        outputs: Vec::new(),
    };
    match &cli.command {
        Command::Eval(a) => cmd_eval(cli, a, &mut run, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(cli, a, &mut run, stdout),
        Command::Augment(a) => cmd_augment(cli, a, &mut run),
        Command::SynthGen(_) => cmd_synth(cli, &mut run),
        Command::Train(a) => cmd_train(cli, a, &mut run, stdout),
        Command::CompareRot(a) => cmd_experiment(cli, a, false, &mut run, stdout),
        Command::AblateKp(a) => cmd_experiment(cli, a, true, &mut run, stdout),
        Command::Decode(a) => cmd_decode(cli, a, &mut run, stdout),
        Command::Bench(a) => cmd_bench(cli, a, &mut run, stdout),
    }?;
    let settings_json = serde_json::to_string(&run.settings).expect("settings serialize");
    let manifest = Manifest {
        tool: "posekit",
        version: env!("CARGO_PKG_VERSION"),
        command: command_name(&cli.command),
        seed: run.settings.seed,
        config_sha256: sha256_hex(settings_json.as_bytes()),
        settings: &run.settings,
        inputs: run.inputs,
        outputs: run.outputs,
    };
    let path = manifest_path(cli);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code: 0 success, 1 validation or usage error, 2 I/O error.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "posekit {}: {e}", command_name(&cli.command));
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("posekit").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_lists_every_command() {
        let (code, out, _) = run_capture(&["--help"]);
        assert_eq!(code, 0);
        for c in [
            "eval",
            "gradcheck",
            "augment",
            "synth-gen",
            "train",
            "compare-rot",
            "ablate-kp",
            "decode",
            "bench",
        ] {
            assert!(out.contains(c), "{c} missing from help");
        }
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let (code, _, err) = run_capture(&["bench", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn canned_bench_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.csv");
        let (code, _, err) = run_capture(&["bench", "--stages-ms", "0.8,13.1,2.1", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(
            std::fs::read_to_string(&out).unwrap(),
            "operation,time_ms\nPreprocess,0.8\nPrediction,13.1\nPostprocess,2.1\nTotal,16.0\n"
        );
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.csv.manifest.json")).unwrap()).unwrap();
        assert_eq!(m["command"], "bench");
        assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn io_and_validation_codes() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.json");
        let missing = dir.path().join("none.jsonl");
        let (code, _, _) = run_capture(&[
            "decode",
            "--records",
            missing.to_str().unwrap(),
            "--manifest",
            m.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
        let (code, _, _) = run_capture(&["bench", "--stages-ms", "-1", "--manifest", m.to_str().unwrap()]);
        assert_eq!(code, 1);
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "[train]\nepochs = \"x\"\n").unwrap();
        let (code, _, err) = run_capture(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--manifest",
            m.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("line 2, column"), "{err}");
    }
}
