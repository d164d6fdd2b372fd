use std::ffi::{c_char, CStr};
use std::path::Path;
use std::ptr;

use posekit::decode::{encode, RAW_FLOATS};
use posekit::evalkit::ObjectModel;
use posekit::geometry::{bbox9_keypoints, quat_to_rot, CameraModel, Keypoint2D, Pose, Quat, Vec3};
use posekit_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { posekit_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, posekit_last_error_length().min(255));
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn camera() -> *mut PosekitCamera {
    let mut cam = ptr::null_mut();
    let s = unsafe { posekit_camera_new(572.0, 572.0, 320.0, 240.0, 0.4, 1.2, &mut cam) };
    assert_eq!(s, PosekitStatus::Ok);
    cam
}

#[test]
fn svd_project_and_geodesic() {
    let m = [2.0, 0.1, 0.0, -0.1, 1.5, 0.2, 0.3, 0.0, 1.0];
    let mut r = [0.0; 9];
    assert_eq!(
        unsafe { posekit_svd_project(m.as_ptr(), r.as_mut_ptr()) },
        PosekitStatus::Ok
    );
    let mut angle = -1.0;
    assert_eq!(
        unsafe { posekit_geodesic(r.as_ptr(), r.as_ptr(), &mut angle) },
        PosekitStatus::Ok
    );
    assert!(angle.abs() < 1e-7);

    let rank1 = [1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 3.0, 6.0, 9.0];
    let s = unsafe { posekit_svd_project(rank1.as_ptr(), r.as_mut_ptr()) };
    assert_eq!(s, PosekitStatus::Degenerate);
    assert!(last_error().contains("degenerate"), "{}", last_error());
    assert_eq!(
        unsafe { posekit_svd_project(ptr::null(), r.as_mut_ptr()) },
        PosekitStatus::NullPointer
    );
    assert_eq!(last_error(), "m is null");
}

#[test]
fn camera_validation_and_depth() {
    let mut cam = ptr::null_mut();
    let s = unsafe { posekit_camera_new(-1.0, 572.0, 320.0, 240.0, 0.4, 1.2, &mut cam) };
    assert_ne!(s, PosekitStatus::Ok);
    assert!(cam.is_null());
    let cam = camera();
    let mut z = 0.0;
    assert_eq!(unsafe { posekit_depth_decode(cam, 0.5, &mut z) }, PosekitStatus::Ok);
    assert!((z - 0.8).abs() < 1e-12);
    assert_eq!(
        unsafe { posekit_depth_decode(cam, 1.5, &mut z) },
        PosekitStatus::OutOfRange
    );
    unsafe { posekit_camera_free(cam) };
    unsafe { posekit_camera_free(ptr::null_mut()) };
}

#[test]
fn add_and_adds_through_handles() {
    let pts: Vec<f64> = (0..120)
        .flat_map(|i| {
            let a = i as f64 * std::f64::consts::TAU / 120.0;
            [0.1 * a.cos(), 0.1 * a.sin(), 0.0]
        })
        .collect();
    let mut model = ptr::null_mut();
    let s = unsafe { posekit_model_from_points(pts.as_ptr(), 120, 0.0, true, &mut model) };
    assert_eq!(s, PosekitStatus::Ok);
    assert!((unsafe { posekit_model_diameter(model) } - 0.2).abs() < 1e-9);
    let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let (c, s30) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
    let rz = [c, -s30, 0.0, s30, c, 0.0, 0.0, 0.0, 1.0];
    let t = [0.0, 0.0, 1.0];
    let (mut add, mut adds) = (0.0, 0.0);
    unsafe {
        assert_eq!(
            posekit_pose_error(model, id.as_ptr(), t.as_ptr(), rz.as_ptr(), t.as_ptr(), false, &mut add),
            PosekitStatus::Ok
        );
        assert_eq!(
            posekit_pose_error(model, id.as_ptr(), t.as_ptr(), rz.as_ptr(), t.as_ptr(), true, &mut adds),
            PosekitStatus::Ok
        );
    }
    assert!(adds < 1e-6 && add > 0.05 * 0.1, "{add} {adds}");
    let bad = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
    let s = unsafe {
        posekit_pose_error(
            model,
            bad.as_ptr(),
            t.as_ptr(),
            id.as_ptr(),
            t.as_ptr(),
            false,
            &mut add,
        )
    };
    assert_ne!(s, PosekitStatus::Ok);
    unsafe { posekit_model_free(model) };

    let mut few = ptr::null_mut();
    let s = unsafe { posekit_model_from_points(pts.as_ptr(), 2, 0.0, false, &mut few) };
    assert_eq!(s, PosekitStatus::InvalidArgument);
    let mut missing = ptr::null_mut();
    let s = unsafe { posekit_model_load(c"/nonexistent/model.ply".as_ptr(), &mut missing) };
    assert_eq!(s, PosekitStatus::Io);
}

#[test]
fn ciou_value_and_gradient() {
    let b = [50.0, 50.0, 20.0, 10.0];
    let (mut v, mut g) = (1.0, [1.0; 4]);
    assert_eq!(
        unsafe { posekit_ciou_loss(b.as_ptr(), b.as_ptr(), &mut v, g.as_mut_ptr()) },
        PosekitStatus::Ok
    );
    assert!(v.abs() < 1e-12);
    let zero = [0.0, 0.0, 0.0, 1.0];
    assert_eq!(
        unsafe { posekit_ciou_loss(zero.as_ptr(), b.as_ptr(), &mut v, ptr::null_mut()) },
        PosekitStatus::InvalidArgument
    );
}

#[test]
fn decode_round_trip() {
    let cam = CameraModel::new(572.0, 572.0, 320.0, 240.0, 0.4, 1.2).unwrap();
    let model = ObjectModel::box_surface("b", Vec3::new(0.05, 0.035, 0.025), 3);
    let poses = [
        Pose::new(
            quat_to_rot(&Quat::new(0.9, 0.1, -0.3, 0.2)).unwrap(),
            Vec3::new(-0.1, 0.05, 0.7),
        ),
        Pose::new(
            quat_to_rot(&Quat::new(0.2, 0.8, 0.1, -0.4)).unwrap(),
            Vec3::new(0.15, -0.08, 1.0),
        ),
    ];
    let raw: Vec<f64> = poses
        .iter()
        .flat_map(|p| {
            let kps: [Keypoint2D; 9] = bbox9_keypoints(&model, p, &cam).unwrap();
            let b = posekit::augment::keypoint_box(&kps);
            encode(p, &cam, 0.9, &b, &kps).unwrap().to_floats()
        })
        .collect();
    assert_eq!(posekit_raw_stride(), RAW_FLOATS);
    let c = camera();
    let mut dets = ptr::null_mut();
    let s = unsafe { posekit_decode(c, raw.as_ptr(), 2, 0.25, 0.65, &mut dets) };
    assert_eq!(s, PosekitStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { posekit_detections_len(dets) }, 2);
    assert_eq!(unsafe { posekit_detections_dropped(dets) }, 0);
    let mut d = PosekitDetection::default();
    let mut found = 0;
    for i in 0..2 {
        assert_eq!(unsafe { posekit_detections_get(dets, i, &mut d) }, PosekitStatus::Ok);
        for p in &poses {
            if (d.t[2] - p.t.z).abs() < 1e-9 {
                found += 1;
                let r = p.r.to_row_major();
                assert!(d.r.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-9));
            }
        }
    }
    assert_eq!(found, 2);
    assert_eq!(
        unsafe { posekit_detections_get(dets, 2, &mut d) },
        PosekitStatus::OutOfRange
    );
    unsafe {
        posekit_detections_free(dets);
        posekit_camera_free(c);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(posekit_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/posekit.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "posekit_svd_project",
        "posekit_decode",
        "posekit_pose_error",
        "POSEKIT_STATUS_OK",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(dir.join("tests/c/smoke.c"))
        .status()
    else {
        eprintln!("no C compiler; header syntax check skipped");
        return;
    };
    assert!(status.success());
}
