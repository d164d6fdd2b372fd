//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a hard criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use posekit::augment::{rotate_augment, LabeledFrame};
use posekit::decode::{decode_one, encode};
use posekit::diff::{grad_check, CheckOp};
use posekit::evalkit::{add_metric, adds_metric, timing_report, write_ply_ascii, NnMode, ObjectModel, StageTimes};
use posekit::geometry::{
    apply_homography, backproject_center, bbox9_keypoints, geodesic_distance, homography_principal_rotation,
    orthonormality_error, project_camera_point, quat_to_rot, rot_z, svd_project_so3, CameraModel, Keypoint2D, Mat3,
    NineD, Pose, Quat, Rot3, Vec3,
};
use posekit::losses::Box2D;
use posekit::synthtrain::{
    ablate_keypoint_head, ablation_table_csv, compare_representations, generate_dataset, train, RotMode, Scene,
    SynthConfig, ToyNet, TrainConfig, WITHOUT_KP, WITH_KP,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome, bool);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_rot(rng: &mut ChaCha8Rng) -> Rot3 {
    loop {
        let q = Quat::new(normal(rng), normal(rng), normal(rng), normal(rng));
        if q.norm() > 1e-3 {
            return quat_to_rot(&q).unwrap();
        }
    }
}

fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
    let f = rng.random_range(300.0..900.0);
    CameraModel::new(
        f,
        f * rng.random_range(0.9..1.1),
        rng.random_range(200.0..400.0),
        rng.random_range(150.0..300.0),
        0.4,
        1.2,
    )
    .unwrap()
}

fn svd_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ms: Vec<[f64; 9]> = (0..10_000).map(|_| std::array::from_fn(|_| normal(&mut rng))).collect();
    let start = Instant::now();
    let mut worst_orth: f64 = 0.0;
    let mut worst_det: f64 = 0.0;
    let mut failures = 0;
    for m in &ms {
        match svd_project_so3(&NineD(*m)) {
            Ok(r) => {
                worst_orth = worst_orth.max(orthonormality_error(r.matrix()));
                worst_det = worst_det.max((r.matrix().determinant() - 1.0).abs());
            }
            Err(_) => failures += 1,
        }
    }
    let took = start.elapsed();
    outcome(
        failures == 0 && worst_orth < 1e-9 && worst_det < 1e-9 && took < Duration::from_secs(1),
        format!(
            "10000 matrices, max |RtR-I|_F {worst_orth:.2e}, max |det-1| {worst_det:.2e}, errors {failures}, {}",
            secs(took)
        ),
    )
}

fn procrustes_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut beaten = 0;
    let mut margin = f64::INFINITY;
    for _ in 0..200 {
        let m = Mat3::from_fn(|_, _| normal(&mut rng));
        let best = svd_project_so3(&NineD::from_matrix(&m)).unwrap();
        let d_best = (m - best.matrix()).norm();
        for k in 0..10_000 {
            // Half uniform samples, half small perturbations of the optimum.
            let r = if k % 2 == 0 {
                random_rot(&mut rng)
            } else {
                let eps = 1e-3 * rng.random::<f64>();
                let q = Quat::new(
                    1.0,
                    eps * normal(&mut rng),
                    eps * normal(&mut rng),
                    eps * normal(&mut rng),
                );
                best.compose(&quat_to_rot(&q).unwrap())
            };
            let d = (m - r.matrix()).norm();
            margin = margin.min(d - d_best);
            if d < d_best - 1e-9 {
                beaten += 1;
            }
        }
    }
    let took = start.elapsed();
    outcome(
        beaten == 0 && took < Duration::from_secs(30),
        format!(
            "200 matrices x 10000 rotations, beaten {beaten}, min margin {margin:.2e}, {}",
            secs(took)
        ),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let ops = [
        CheckOp::Rotation,
        CheckOp::Translation,
        CheckOp::Keypoint,
        CheckOp::Ciou,
        CheckOp::SvdProject,
    ];
    let reports: Vec<_> = ops.iter().map(|&op| grad_check(op, 100, 7)).collect();
    let took = start.elapsed();
    let pass = reports.iter().all(|r| r.passed() && r.trials >= 100) && took < Duration::from_secs(10);
    let parts: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.1e}", r.op, r.max_rel_err))
        .collect();
    outcome(
        pass,
        format!("100 trials each, max rel err: {}, {}", parts.join(", "), secs(took)),
    )
}

fn equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases: Vec<(CameraModel, f64, Vec3)> = (0..1000)
        .map(|_| {
            let cam = random_camera(&mut rng);
            let theta = rng.random_range(-PI..PI);
            let z = rng.random_range(0.3..3.0);
            let x = Vec3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.5..0.5) * z, z);
            (cam, theta, x)
        })
        .collect();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (cam, theta, x) in &cases {
        let p = project_camera_point(cam, x).unwrap();
        let (u, v) = apply_homography(&homography_principal_rotation(cam, *theta), p.u, p.v);
        let q = project_camera_point(cam, &rot_z(*theta).apply(x)).unwrap();
        worst = worst.max((u - q.u).hypot(v - q.v));
    }
    let took = start.elapsed();
    outcome(
        worst < 1e-6 && took < Duration::from_secs(1),
        format!("1000 cases, max error {worst:.2e} px, {}", secs(took)),
    )
}

fn random_pose_in_view(rng: &mut ChaCha8Rng, cam: &CameraModel, margin: f64) -> Pose {
    let (w, h) = cam.image_size();
    let tz = rng.random_range(cam.dist_min..cam.dist_max);
    let u = rng.random_range(margin * w as f64..(1.0 - margin) * w as f64);
    let v = rng.random_range(margin * h as f64..(1.0 - margin) * h as f64);
    Pose::new(random_rot(rng), backproject_center(cam, u, v, tz).unwrap())
}

fn rotate_augment_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let synth = SynthConfig::default();
    let cam = synth.cam;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pose = random_pose_in_view(&mut rng, &cam, 0.25);
        let frame = LabeledFrame::render(&synth.model, &pose, &cam).unwrap();
        let theta = rng.random_range(-PI..PI);
        let aug = rotate_augment(&frame, theta, &cam);
        let expected = bbox9_keypoints(&synth.model, &aug.pose, &cam).unwrap();
        for (a, e) in aug.keypoints.iter().zip(&expected) {
            worst = worst.max((a.u - e.u).hypot(a.v - e.v));
        }
    }
    outcome(
        worst < 1e-3,
        format!("100 frames, max reprojection error {worst:.2e} px"),
    )
}

fn adds_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(4..=2000);
        let pts: Vec<Vec3> = (0..m)
            .map(|_| Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * 0.05)
            .collect();
        let model = ObjectModel::new("cloud", pts, Some(0.2), true).unwrap();
        let t = |rng: &mut ChaCha8Rng| Vec3::new(normal(rng) * 0.1, normal(rng) * 0.1, 1.0 + normal(rng) * 0.1);
        let gt = Pose::new(random_rot(&mut rng), t(&mut rng));
        let pred = Pose::new(random_rot(&mut rng), t(&mut rng));
        let brute = adds_metric(&model, &gt, &pred, NnMode::Brute);
        let fast = adds_metric(&model, &gt, &pred, NnMode::Accelerated);
        worst = worst.max((brute - fast).abs());
    }
    let took = start.elapsed();

    // 96 ring points at 3.75 degree spacing plus 4 on-axis points: exactly
    // invariant under a 30 degree turn about z.
    let radius = 0.1;
    let mut ring: Vec<Vec3> = (0..96)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 96.0;
            Vec3::new(radius * a.cos(), radius * a.sin(), 0.0)
        })
        .collect();
    ring.extend([-0.03, -0.01, 0.01, 0.03].map(|z| Vec3::new(0.0, 0.0, z)));
    let model = ObjectModel::new("ring", ring, None, true).unwrap();
    let gt = Pose::new(Rot3::identity(), Vec3::new(0.0, 0.0, 1.0));
    let pred = Pose::new(rot_z(PI / 6.0), gt.t);
    let adds = adds_metric(&model, &gt, &pred, NnMode::Accelerated);
    let add = add_metric(&model, &gt, &pred);
    outcome(
        worst <= 1e-12 && adds < 1e-6 && add > 0.05 * radius,
        format!(
            "1000 clouds max |kd-brute| {worst:.1e} ({}); 100-point ring at 30 deg: ADD-S {adds:.1e} m, ADD {add:.4} m",
            secs(took)
        ),
    )
}

fn decode_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cam = SynthConfig::default().cam;
    let mut worst_r: f64 = 0.0;
    let mut worst_t: f64 = 0.0;
    let kps = [Keypoint2D::new(0.0, 0.0, true); 9];
    for _ in 0..1000 {
        let pose = random_pose_in_view(&mut rng, &cam, 0.0);
        let raw = encode(&pose, &cam, 0.9, &Box2D::new(320.0, 240.0, 50.0, 40.0), &kps).unwrap();
        let det = decode_one(&raw, &cam).unwrap();
        worst_r = worst_r.max(geodesic_distance(&pose.r, &det.pose.r));
        worst_t = worst_t.max((pose.t - det.pose.t).norm());
    }
    outcome(
        worst_r < 1e-9 && worst_t < 1e-9,
        format!("1000 poses, max rotation error {worst_r:.1e} rad, max translation error {worst_t:.1e} m"),
    )
}

fn toy_overfit() -> Outcome {
    let synth = SynthConfig {
        n_frames: 1,
        ..SynthConfig::default()
    };
    let scene = Scene {
        cam: &synth.cam,
        model: &synth.model,
    };
    let run = |seed: u64| {
        let data = generate_dataset(&SynthConfig { seed, ..synth.clone() }).unwrap();
        let cfg = TrainConfig {
            epochs: 2000,
            batch_size: 1,
            seed,
            ..TrainConfig::default()
        };
        let mut net = ToyNet::new(RotMode::Svd9, true, &cfg.hidden, seed);
        train(&mut net, &data, scene, &cfg).unwrap()
    };
    let mut worst: f64 = 0.0;
    let mut steps_ok = true;
    for seed in 0..3 {
        let log = run(seed);
        steps_ok &= log.steps <= 2000;
        worst = worst.max(log.last().metrics.total);
    }
    let deterministic = format!("{:?}", run(0)) == format!("{:?}", run(0));
    outcome(
        worst < 1e-3 && steps_ok && deterministic,
        format!("seeds 0-2, 2000 steps, max final total {worst:.2e}, reruns identical: {deterministic}"),
    )
}

fn ablation() -> Outcome {
    let synth = SynthConfig {
        noise_px: 2.0,
        occlusion: 0.2,
        ..SynthConfig::default()
    };
    let start = Instant::now();
    let t = ablate_keypoint_head(&synth, &TrainConfig::default(), &[0, 1, 2, 3, 4]).unwrap();
    let took = start.elapsed();
    let with = t.summary_for(WITH_KP).unwrap().mean_accuracy_percent;
    let without = t.summary_for(WITHOUT_KP).unwrap().mean_accuracy_percent;
    print!("{}", ablation_table_csv(&t));
    outcome(
        with > without && took < Duration::from_secs(600),
        format!("5 seeds, with head {with:.2}% vs without {without:.2}%, {}", secs(took)),
    )
}

fn representation_comparison() -> Outcome {
    let start = Instant::now();
    let t = compare_representations(&SynthConfig::default(), &TrainConfig::default(), &[0, 1, 2, 3, 4]).unwrap();
    let took = start.elapsed();
    let svd9 = t.summary_for("svd9").unwrap().mean_geodesic_deg;
    let euler = t.summary_for("euler").unwrap().mean_geodesic_deg;
    print!("{}", t.summary_csv());
    outcome(
        svd9 <= euler && took < Duration::from_secs(600),
        format!("5 seeds, svd9 {svd9:.3} deg vs euler {euler:.3} deg, {}", secs(took)),
    )
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = posekit::cli::run(
        std::iter::once("posekit").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn record_line(object: &str, gt: &Pose, pred: &Pose) -> String {
    let r = |p: &Pose| p.r.to_row_major().map(|x| x.to_string()).join(",");
    let t = |p: &Pose| [p.t.x, p.t.y, p.t.z].map(|x| x.to_string()).join(",");
    format!(
        "{{\"object\":\"{object}\",\"R_gt\":[{}],\"t_gt\":[{}],\"R_pred\":[{}],\"t_pred\":[{}]}}\n",
        r(gt),
        t(gt),
        r(pred),
        t(pred)
    )
}

fn reporting_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models");
    std::fs::create_dir(&models).unwrap();
    let ape: Vec<Vec3> = (0..8)
        .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64) * 0.05)
        .collect();
    std::fs::write(models.join("ape.ply"), write_ply_ascii(&ape)).unwrap();
    std::fs::write(models.join("ape.json"), r#"{"diameter": 0.1}"#).unwrap();
    let ring: Vec<Vec3> = (0..120)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 120.0;
            Vec3::new(0.1 * a.cos(), 0.1 * a.sin(), 0.0)
        })
        .collect();
    std::fs::write(models.join("eggbox.ply"), write_ply_ascii(&ring)).unwrap();
    std::fs::write(models.join("eggbox.json"), r#"{"diameter": 0.2, "symmetric": true}"#).unwrap();

    // ape: threshold 0.01 m, errors 0.005 / 0.02 / 0.009 give 2 of 3.
    // eggbox: threshold 0.02 m, a 30 degree axial turn is correct, a 5 cm
    // offset along the axis is not, giving 1 of 2.
    let gt = Pose::new(Rot3::identity(), Vec3::new(0.0, 0.0, 1.0));
    let shifted = |dx: f64, dz: f64| Pose::new(gt.r, gt.t + Vec3::new(dx, 0.0, dz));
    let mut records = String::new();
    for dx in [0.005, 0.02, 0.009] {
        records += &record_line("ape", &gt, &shifted(dx, 0.0));
    }
    records += &record_line("eggbox", &gt, &Pose::new(rot_z(PI / 6.0), gt.t));
    records += &record_line("eggbox", &gt, &shifted(0.0, 0.05));
    let rec_path = dir.path().join("records.jsonl");
    std::fs::write(&rec_path, records).unwrap();
    let manifest = dir.path().join("eval.manifest.json");
    let (code, eval_csv, err) = run_cli(&[
        "--manifest",
        manifest.to_str().unwrap(),
        "eval",
        "--models",
        models.to_str().unwrap(),
        "--records",
        rec_path.to_str().unwrap(),
    ]);
    let expected_eval = "object,n,accuracy_percent\nape,3,66.67\neggbox,2,50.00\nAverage,5,58.33\n";

    let canned = timing_report(&[
        StageTimes::with_samples("Preprocess", vec![0.8]),
        StageTimes::with_samples("Prediction", vec![13.1]),
        StageTimes::with_samples("Postprocess", vec![2.1]),
    ])
    .to_csv(1);
    let bench_manifest = dir.path().join("bench.manifest.json");
    let (bench_code, bench_csv, _) = run_cli(&[
        "--manifest",
        bench_manifest.to_str().unwrap(),
        "bench",
        "--stages-ms",
        "0.8,13.1,2.1",
    ]);
    let expected_timing = "operation,time_ms\nPreprocess,0.8\nPrediction,13.1\nPostprocess,2.1\nTotal,16.0\n";

    let eval_ok = code == 0 && eval_csv == expected_eval;
    let timing_ok = bench_code == 0 && bench_csv == expected_timing && canned == expected_timing;
    if !eval_ok {
        println!("eval exit {code}, stderr {err:?}, output:\n{eval_csv}");
    }
    if !timing_ok {
        println!("bench exit {bench_code}, output:\n{bench_csv}library:\n{canned}");
    }
    outcome(
        eval_ok && timing_ok && manifest.exists(),
        format!(
            "eval CSV exact: {eval_ok} (Average 58.33 over ape 66.67, eggbox 50.00); timing CSV exact with Total 16.0: {timing_ok}"
        ),
    )
}

fn main() {
    // Hard criteria fail the run; the representation comparison is reported only.
    let criteria: [Criterion; 11] = [
        ("svd projection validity", svd_validity, true),
        ("procrustes optimality oracle", procrustes_oracle, true),
        ("gradient suite", gradient_suite, true),
        ("equivariance", equivariance, true),
        ("rotate_augment label consistency", rotate_augment_consistency, true),
        ("ADD-S oracle equivalence", adds_oracle, true),
        ("decode round trip", decode_round_trip, true),
        ("toy overfit", toy_overfit, true),
        ("ablation direction", ablation, true),
        ("representation comparison", representation_comparison, false),
        ("reporting fidelity", reporting_fidelity, true),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut hard_failures = 0;
    for (name, check, hard) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let soft = if hard { "" } else { " (reported, not enforced)" };
        println!("{tag} {name}{soft}: {}", o.detail);
        if hard && !o.pass {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
