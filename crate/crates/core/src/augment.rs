//! Photometric and geometric augmentation of labeled frames.

use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::ObjectModel;
use crate::geometry::{
    apply_homography, bbox9_keypoints, homography_principal_rotation, rot_z, CameraModel, Keypoint2D, Pose,
};
use crate::losses::Box2D;

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl ImageRGB {
    pub fn new(width: usize, height: usize) -> Self {
        ImageRGB::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        ImageRGB {
            width,
            height,
            pixels: vec![clip3(rgb); width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(clip3(f(x, y)));
            }
        }
        ImageRGB { width, height, pixels }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        self.pixels[y * self.width + x] = clip3(rgb);
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> ImageRGB {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        ImageRGB::from_fn(width, height, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            self.sample_bilinear(fx, fy)
        })
    }

    /// Bilinear sample at continuous pixel-center coordinates; taps outside
    /// the image read as black.
    pub fn sample_bilinear(&self, fx: f64, fy: f64) -> [f64; 3] {
        let x0 = fx.floor();
        let y0 = fy.floor();
        let ax = fx - x0;
        let ay = fy - y0;
        let mut out = [0.0; 3];
        for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
            for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
                let w = wx * wy;
                if w == 0.0 {
                    continue;
                }
                let xi = x0 as i64 + dx;
                let yi = y0 as i64 + dy;
                if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                    continue;
                }
                let p = self.get(xi as usize, yi as usize);
                for c in 0..3 {
                    out[c] += w * p[c];
                }
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c * 255.0).round() as u8))
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(ImageRGB {
            width,
            height,
            pixels: data
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]].map(|b| b as f64 / 255.0))
                .collect(),
        })
    }

    /// Reads PNG or binary PPM (P6), chosen by content.
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"P6") {
            return read_ppm(&bytes).map_err(|m| Error::parse(path, m));
        }
        let img = image::load_from_memory(&bytes)
            .map_err(|e| Error::parse(path, e.to_string()))?
            .to_rgb8();
        ImageRGB::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
    }

    /// Writes PPM when the extension is `.ppm`, PNG otherwise.
    pub fn write(&self, path: &Path) -> Result<()> {
        let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
        if is_ppm {
            let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            write!(f, "P6\n{} {}\n255\n", self.width, self.height)
                .and_then(|_| f.write_all(&self.to_rgb8()))
                .map_err(|e| Error::io(path, e))
        } else {
            image::save_buffer(
                path,
                &self.to_rgb8(),
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::Rgb8,
            )
            .map_err(|e| image_error(path, e))
        }
    }
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Invalid(format!("{}: {other}", path.display())),
    }
}

fn read_ppm(bytes: &[u8]) -> std::result::Result<ImageRGB, String> {
    let mut r = BufReader::new(bytes);
    let mut fields = Vec::new();
    let mut line = String::new();
    while fields.len() < 4 {
        line.clear();
        if r.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("truncated PPM header".into());
        }
        let content = line.split('#').next().unwrap_or("");
        fields.extend(content.split_whitespace().map(str::to_string));
    }
    if fields[0] != "P6" {
        return Err(format!("unsupported PPM magic {}", fields[0]));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PPM header field '{s}'"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PPM maxval {maxval}"));
    }
    let mut data = vec![0u8; w * h * 3];
    r.read_exact(&mut data)
        .map_err(|_| "truncated PPM pixel data".to_string())?;
    Ok(ImageRGB {
        width: w,
        height: h,
        pixels: data
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]].map(|b| b as f64 / maxval as f64))
            .collect(),
    })
}

fn clip3(p: [f64; 3]) -> [f64; 3] {
    p.map(|c| c.clamp(0.0, 1.0))
}

/// Binary object mask, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Mask { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Grayscale image, foreground above half intensity.
    pub fn read(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Mask {
            width: w,
            height: h,
            data: img.as_raw().iter().map(|&b| b > 127).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::save_buffer(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| image_error(path, e))
    }
}

/// Image with its pose labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    pub image: ImageRGB,
    pub pose: Pose,
    pub keypoints: [Keypoint2D; 9],
    pub bbox: Box2D,
    pub mask: Mask,
}

impl LabeledFrame {
    /// Flat-shaded silhouette of the model's bounding box over a gradient
    /// background, with exact keypoint labels.
    pub fn render(model: &ObjectModel, pose: &Pose, cam: &CameraModel) -> Result<Self> {
        let (w, h) = cam.image_size();
        let mut keypoints = bbox9_keypoints(model, pose, cam)?;
        for k in keypoints.iter_mut() {
            k.visible = in_image(k.u, k.v, w, h);
        }
        let hull = convex_hull(&keypoints[..8].iter().map(|k| (k.u, k.v)).collect::<Vec<_>>());
        let mask = Mask::from_fn(w, h, |x, y| inside_convex(&hull, x as f64 + 0.5, y as f64 + 0.5));
        let image = ImageRGB::from_fn(w, h, |x, y| {
            let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
            if mask.get(x, y) {
                [0.85, 0.35 + 0.3 * fy, 0.2 + 0.2 * fx]
            } else {
                [0.2 * fx, 0.3 + 0.4 * fy, 0.6]
            }
        });
        Ok(LabeledFrame {
            image,
            pose: *pose,
            bbox: keypoint_box(&keypoints),
            keypoints,
            mask,
        })
    }
}

fn in_image(u: f64, v: f64, w: usize, h: usize) -> bool {
    u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64
}

/// Axis-aligned hull of all nine keypoints.
pub fn keypoint_box(kps: &[Keypoint2D; 9]) -> Box2D {
    Box2D::hull(kps.iter().map(|k| (k.u, k.v))).expect("nine keypoints")
}

fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite keypoints"));
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside_convex(hull: &[(f64, f64)], x: f64, y: f64) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0) >= 0.0
    })
}

// ---------------------------------------------------------------------------
// HSV

/// Hexcone RGB → HSV, all components in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

/// Hexcone HSV → RGB; `h` is taken modulo 1.
pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Maximum jitter magnitudes for hue, saturation and value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsvGains {
    pub hsv_h: f64,
    pub hsv_s: f64,
    pub hsv_v: f64,
}

impl HsvGains {
    pub fn new(hsv_h: f64, hsv_s: f64, hsv_v: f64) -> Result<Self> {
        let g = HsvGains { hsv_h, hsv_s, hsv_v };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.hsv_h, self.hsv_s, self.hsv_v];
        if all.iter().all(|g| g.is_finite() && *g >= 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "HSV gains must be finite and >= 0, got {all:?}"
            )))
        }
    }
}

/// Applies fixed draws `r = (r_h, r_s, r_v)`: H shifted by `r_h·hsv_h`
/// modulo 1, S and V scaled by `1 + r·gain` and clipped.
pub fn hsv_jitter_with(img: &ImageRGB, g: &HsvGains, r: [f64; 3]) -> ImageRGB {
    let dh = r[0] * g.hsv_h;
    let ks = 1.0 + r[1] * g.hsv_s;
    let kv = 1.0 + r[2] * g.hsv_v;
    if dh == 0.0 && ks == 1.0 && kv == 1.0 {
        return img.clone();
    }
    let pixels = img
        .pixels
        .iter()
        .map(|&p| {
            let [h, s, v] = rgb_to_hsv(p);
            clip3(hsv_to_rgb([
                (h + dh).rem_euclid(1.0),
                (s * ks).clamp(0.0, 1.0),
                (v * kv).clamp(0.0, 1.0),
            ]))
        })
        .collect();
    ImageRGB {
        width: img.width,
        height: img.height,
        pixels,
    }
}

/// Random HSV jitter with one draw of `r_h, r_s, r_v ∈ [−1, 1]` per image.
pub fn hsv_jitter(img: &ImageRGB, g: &HsvGains, seed: u64) -> Result<ImageRGB> {
    g.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = [(); 3].map(|_| rng.random_range(-1.0..=1.0));
    Ok(hsv_jitter_with(img, g, r))
}

// ---------------------------------------------------------------------------
// Background and rotation

/// Pixels outside the mask are taken from `bg`, resized to the frame.
pub fn background_replace(frame: &LabeledFrame, bg: &ImageRGB) -> Result<LabeledFrame> {
    let (w, h) = (frame.image.width, frame.image.height);
    if frame.mask.width != w || frame.mask.height != h {
        return Err(Error::Shape(format!(
            "mask is {}x{}, image is {w}x{h}",
            frame.mask.width, frame.mask.height
        )));
    }
    if bg.width == 0 || bg.height == 0 {
        return Err(Error::Shape("background image is empty".into()));
    }
    let bg = bg.resize(w, h);
    let mut out = frame.clone();
    for (i, px) in out.image.pixels.iter_mut().enumerate() {
        if !frame.mask.data[i] {
            *px = bg.pixels[i];
        }
    }
    Ok(out)
}

/// Rotation about the principal axis: the image is inverse-warped by
/// `H = K·R_z(θ)·K⁻¹` (bilinear, black outside), the pose becomes
/// `(R_z R, R_z t)`, keypoints are mapped through `H` and the box is their
/// hull. `θ = 0` returns the frame unchanged.
pub fn rotate_augment(frame: &LabeledFrame, theta: f64, cam: &CameraModel) -> LabeledFrame {
    if theta == 0.0 {
        return frame.clone();
    }
    let h = homography_principal_rotation(cam, theta);
    let h_inv = homography_principal_rotation(cam, -theta);
    let (w, ht) = (frame.image.width, frame.image.height);
    let src = |x: usize, y: usize| apply_homography(&h_inv, x as f64 + 0.5, y as f64 + 0.5);
    let image = ImageRGB::from_fn(w, ht, |x, y| {
        let (u, v) = src(x, y);
        frame.image.sample_bilinear(u - 0.5, v - 0.5)
    });
    let mask = Mask::from_fn(w, ht, |x, y| {
        let (u, v) = src(x, y);
        let (xi, yi) = (u.floor(), v.floor());
        xi >= 0.0
            && yi >= 0.0
            && (xi as usize) < frame.mask.width
            && (yi as usize) < frame.mask.height
            && frame.mask.get(xi as usize, yi as usize)
    });
    let keypoints = frame.keypoints.map(|k| {
        let (u, v) = apply_homography(&h, k.u, k.v);
        Keypoint2D::new(u, v, k.visible && in_image(u, v, w, ht))
    });
    let rz = rot_z(theta);
    LabeledFrame {
        image,
        pose: Pose::new(rz.compose(&frame.pose.r), rz.apply(&frame.pose.t)),
        bbox: keypoint_box(&keypoints),
        keypoints,
        mask,
    }
}

/// Settings for the full augmentation chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub gains: HsvGains,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Probability of replacing the background when backgrounds are given.
    pub bg_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            gains: HsvGains {
                hsv_h: 0.015,
                hsv_s: 0.7,
                hsv_v: 0.4,
            },
            theta_min: -std::f64::consts::PI,
            theta_max: std::f64::consts::PI,
            bg_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        if !(self.theta_min.is_finite() && self.theta_max.is_finite() && self.theta_min <= self.theta_max) {
            return Err(Error::Invalid(format!(
                "theta range [{}, {}] is invalid",
                self.theta_min, self.theta_max
            )));
        }
        if !(0.0..=1.0).contains(&self.bg_prob) {
            return Err(Error::Range {
                value: self.bg_prob,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(())
    }

    fn theta_range(&self) -> Range<f64> {
        self.theta_min..self.theta_max
    }
}

/// What [`augment_frame`] drew for one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AugmentDraw {
    pub theta: f64,
    pub background: Option<usize>,
    pub hsv_seed: u64,
}

/// Background replacement, HSV jitter, then principal-axis rotation, all
/// drawn from an RNG seeded with `seed ^ frame_index`.
pub fn augment_frame(
    frame: &LabeledFrame,
    cam: &CameraModel,
    backgrounds: &[ImageRGB],
    cfg: &AugmentConfig,
    seed: u64,
    frame_index: u64,
) -> Result<(LabeledFrame, AugmentDraw)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ frame_index);
    let background = if !backgrounds.is_empty() && rng.random_bool(cfg.bg_prob) {
        Some(rng.random_range(0..backgrounds.len()))
    } else {
        None
    };
    let theta = if cfg.theta_min == cfg.theta_max {
        cfg.theta_min
    } else {
        rng.random_range(cfg.theta_range())
    };
    let hsv_seed = rng.random();
    let mut out = match background {
        Some(i) => background_replace(frame, &backgrounds[i])?,
        None => frame.clone(),
    };
    out.image = hsv_jitter(&out.image, &cfg.gains, hsv_seed)?;
    let out = rotate_augment(&out, theta, cam);
    Ok((
        out,
        AugmentDraw {
            theta,
            background,
            hsv_seed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euler_to_rot, project_point, Vec3};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cam() -> CameraModel {
        CameraModel::new(120.0, 120.0, 32.0, 32.0, 0.4, 1.2).unwrap()
    }

    fn frame() -> LabeledFrame {
        let model = ObjectModel::box_surface("b", Vec3::new(0.05, 0.04, 0.03), 3);
        let pose = Pose::new(euler_to_rot(0.3, 0.2, -0.4), Vec3::new(0.02, -0.01, 0.7));
        LabeledFrame::render(&model, &pose, &cam()).unwrap()
    }

    #[test]
    fn hsv_round_trip_and_wheel() {
        for p in [[1.0, 0.0, 0.0], [0.2, 0.5, 0.9], [0.3, 0.3, 0.3], [0.0, 0.0, 0.0]] {
            let q = hsv_to_rgb(rgb_to_hsv(p));
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() < 1e-15);
            }
        }
        let red = ImageRGB::filled(2, 2, [1.0, 0.0, 0.0]);
        let g = HsvGains::new(1.0 / 3.0, 0.0, 0.0).unwrap();
        let out = hsv_jitter_with(&red, &g, [1.0, 0.0, 0.0]);
        let px = out.get(1, 1);
        assert!(px[0].abs() < 1e-12 && (px[1] - 1.0).abs() < 1e-12 && px[2].abs() < 1e-12);
    }

    #[test]
    fn zero_gains_are_identity_and_dark_gain_blacks_out() {
        let f = frame();
        let g = HsvGains::default();
        for seed in 0..5 {
            assert_eq!(hsv_jitter(&f.image, &g, seed).unwrap(), f.image);
        }
        let dark = hsv_jitter_with(&f.image, &HsvGains::new(0.0, 0.0, 1.0).unwrap(), [0.0, 0.0, -1.0]);
        assert!(dark.pixels.iter().all(|p| *p == [0.0; 3]));
        assert!(HsvGains::new(-0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn jitter_is_seeded() {
        let f = frame();
        let g = HsvGains::new(0.1, 0.5, 0.5).unwrap();
        assert_eq!(
            hsv_jitter(&f.image, &g, 3).unwrap(),
            hsv_jitter(&f.image, &g, 3).unwrap()
        );
        assert_ne!(
            hsv_jitter(&f.image, &g, 3).unwrap(),
            hsv_jitter(&f.image, &g, 4).unwrap()
        );
    }

    #[test]
    fn background_cases() {
        let f = frame();
        let bg = ImageRGB::from_fn(64, 64, |x, y| [x as f64 / 64.0, 0.0, y as f64 / 64.0]);
        let mut all = f.clone();
        all.mask = Mask::filled(64, 64, true);
        assert_eq!(background_replace(&all, &bg).unwrap(), all);
        let mut none = f.clone();
        none.mask = Mask::filled(64, 64, false);
        let out = background_replace(&none, &bg).unwrap();
        assert_eq!(out.image, bg);
        assert_eq!(out.keypoints, f.keypoints);
        assert_eq!(out.pose, f.pose);

        let mut checker = f.clone();
        checker.mask = Mask::from_fn(64, 64, |x, y| (x + y) % 2 == 0);
        let out = background_replace(&checker, &bg).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let want = if (x + y) % 2 == 0 {
                    f.image.get(x, y)
                } else {
                    bg.get(x, y)
                };
                assert_eq!(out.image.get(x, y), want);
            }
        }
        let mut bad = f.clone();
        bad.mask = Mask::filled(10, 10, true);
        assert!(matches!(background_replace(&bad, &bg), Err(Error::Shape(_))));
        // Smaller backgrounds are resized.
        let small = ImageRGB::filled(8, 8, [0.5, 0.5, 0.5]);
        let out = background_replace(&none, &small).unwrap();
        assert!(out.image.pixels.iter().all(|p| (p[0] - 0.5).abs() < 1e-12));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let f = frame();
        assert_eq!(rotate_augment(&f, 0.0, &cam()), f);
    }

    #[test]
    fn quarter_turn_permutes_pixels() {
        let f = frame();
        let out = rotate_augment(&f, FRAC_PI_2, &cam());
        // With fx = fy and a centered principal point, H is a 90° rotation
        // about the image center: destination (x, y) reads source (y, 63 − x).
        for y in 0..64 {
            for x in 0..64 {
                let want = f.image.get(y, 63 - x);
                let got = out.image.get(x, y);
                for c in 0..3 {
                    assert!((want[c] - got[c]).abs() < 1e-9, "({x},{y})");
                }
                assert_eq!(out.mask.get(x, y), f.mask.get(y, 63 - x));
            }
        }
    }

    #[test]
    fn rotated_labels_reproject() {
        let model = ObjectModel::box_surface("b", Vec3::new(0.05, 0.04, 0.03), 3);
        let f = frame();
        for k in 0..20 {
            let theta = -PI + 0.31 * k as f64;
            let out = rotate_augment(&f, theta, &cam());
            let kp3 = model.keypoints_3d();
            for (i, x) in kp3.iter().enumerate() {
                let p = project_point(&cam(), &out.pose, x).unwrap();
                assert!((p.u - out.keypoints[i].u).abs() < 1e-9);
                assert!((p.v - out.keypoints[i].v).abs() < 1e-9);
            }
            assert!((out.pose.t.z - f.pose.t.z).abs() < 1e-15);
        }
    }

    #[test]
    fn jitter_then_rotate_keeps_labels() {
        let f = frame();
        let mut j = f.clone();
        j.image = hsv_jitter(&f.image, &HsvGains::new(0.2, 0.3, 0.3).unwrap(), 9).unwrap();
        let a = rotate_augment(&j, 0.7, &cam());
        let b = rotate_augment(&f, 0.7, &cam());
        assert_eq!(a.keypoints, b.keypoints);
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.bbox, b.bbox);
    }

    #[test]
    fn augment_frame_is_reproducible() {
        let f = frame();
        let bgs = vec![ImageRGB::filled(16, 16, [0.1, 0.9, 0.1])];
        let cfg = AugmentConfig::default();
        let a = augment_frame(&f, &cam(), &bgs, &cfg, 42, 3).unwrap();
        let b = augment_frame(&f, &cam(), &bgs, &cfg, 42, 3).unwrap();
        assert_eq!(a, b);
        let c = augment_frame(&f, &cam(), &bgs, &cfg, 42, 4).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn image_io_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageRGB::from_fn(5, 3, |x, y| [x as f64 / 4.0, y as f64 / 2.0, 1.0]);
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            img.write(&p).unwrap();
            let back = ImageRGB::read(&p).unwrap();
            assert_eq!(back.to_rgb8(), img.to_rgb8());
        }
        let m = Mask::from_fn(5, 3, |x, _| x > 2);
        let p = dir.path().join("m.png");
        m.write(&p).unwrap();
        assert_eq!(Mask::read(&p).unwrap(), m);
        std::fs::write(dir.path().join("bad.ppm"), b"P6\n5 3\n255\nxx").unwrap();
        assert!(matches!(
            ImageRGB::read(&dir.path().join("bad.ppm")),
            Err(Error::Parse { .. })
        ));
        assert!(ImageRGB::read(&dir.path().join("missing.png")).unwrap_err().is_io());
    }
}
