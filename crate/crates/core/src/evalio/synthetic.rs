//! Procedural tube fly-through with exact depth and poses.
//!
//! The tube runs along the world z axis with radius
//! `tube_radius·(1 + fold_amplitude·sin(2πz / fold_wavelength))`, the
//! ring-shaped folds giving depth structure along the axis. Its inner wall
//! carries a smooth sinusoidal texture in
//! (angle, z) and is lit by a light attached to the camera whose intensity
//! falls off as `1 / (1 + (dist / light_range)^light_exponent)`. The camera follows a
//! helix down the tube while its viewing direction wobbles gently.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{max_encodable_depth, save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Quat, Vec3};
use crate::image::Image;
use crate::scene::{CameraModel, RgbdFrame};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels; the principal point is the image center.
    pub focal: f64,
    pub tube_radius: f64,
    /// Fold depth as a fraction of `tube_radius`; 0 gives a plain cylinder.
    pub fold_amplitude: f64,
    pub fold_wavelength: f64,
    /// Radius of the camera's helical path around the tube axis.
    pub helix_radius: f64,
    /// Frames per helix revolution.
    pub helix_period: f64,
    /// Advance along the tube axis per frame, meters.
    pub forward_step: f64,
    /// Peak viewing-direction wobble, degrees.
    pub wobble_deg: f64,
    /// Frames per wobble cycle.
    pub wobble_period: f64,
    pub texture_seed: u64,
    pub texture_components: usize,
    /// Shortest texture wavelength on the wall, meters.
    pub min_wavelength: f64,
    pub light_falloff: bool,
    pub light_range: f64,
    /// Steepness of the falloff; larger values keep the near field evenly
    /// lit and darken the far field more abruptly.
    pub light_exponent: f64,
    /// Depths beyond this are stored as invalid (0).
    pub max_depth: f64,
    pub depth_scale: f64,
    pub color_noise: f64,
    /// Depth noise standard deviation, meters.
    pub depth_noise: f64,
    pub noise_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            frames: 200,
            width: 128,
            height: 96,
            focal: 64.0,
            tube_radius: 0.025,
            fold_amplitude: 0.0,
            fold_wavelength: 0.02,
            helix_radius: 0.003,
            helix_period: 120.0,
            forward_step: 0.0005,
            wobble_deg: 3.0,
            wobble_period: 90.0,
            texture_seed: 7,
            texture_components: 12,
            min_wavelength: 0.012,
            light_falloff: true,
            light_range: 0.12,
            light_exponent: 4.0,
            max_depth: 0.2,
            depth_scale: 100_000.0,
            color_noise: 0.0,
            depth_noise: 0.0,
            noise_seed: 11,
        }
    }
}

impl SyntheticSpec {
    /// A camera that never moves.
    pub fn static_camera(mut self) -> Self {
        self.helix_radius = 0.0;
        self.forward_step = 0.0;
        self.wobble_deg = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.frames == 0 {
            return bad("degenerate trajectory: zero frames");
        }
        if self.width == 0 || self.height == 0 {
            return bad("resolution must be positive");
        }
        let positive = [
            self.focal,
            self.tube_radius,
            self.fold_wavelength,
            self.helix_period,
            self.wobble_period,
            self.min_wavelength,
            self.light_range,
            self.light_exponent,
            self.max_depth,
            self.depth_scale,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("lengths, periods and scales must be positive and finite");
        }
        let nonneg = [self.helix_radius, self.wobble_deg, self.color_noise, self.depth_noise];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !self.forward_step.is_finite() {
            return bad("amplitudes and noise levels must be non-negative and finite");
        }
        if !(0.0..0.5).contains(&self.fold_amplitude) {
            return bad("fold_amplitude must lie in [0, 0.5)");
        }
        if self.helix_radius >= self.tube_radius * (1.0 - self.fold_amplitude) {
            return bad("camera path leaves the tube");
        }
        if self.max_depth > max_encodable_depth(self.depth_scale) {
            return bad("max_depth exceeds the 16-bit range at this depth_scale");
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraModel<f64> {
        CameraModel::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
        .expect("validated spec")
    }
}

#[derive(Clone, Debug)]
struct Wave {
    amp: f64,
    /// Integer angular frequency keeps the texture periodic around the tube.
    n: f64,
    k: f64,
    phase: f64,
}

/// Ground-truth scene; renders any pose, not only the sequence poses.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    spec: SyntheticSpec,
    waves: [Vec<Wave>; 4],
}

/// Exact render of the scene; depth is 0 where the ray leaves the valid
/// range.
#[derive(Clone, Debug)]
pub struct SyntheticView {
    pub color: Image<f64>,
    pub depth: Image<f64>,
}

/// Rays running further than this (meters) count as escaping down the tube.
const MAX_RAY: f64 = 1.0;

const BASE_COLOR: [f64; 3] = [0.95, 0.6, 0.55];

impl SyntheticScene {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
        let kmax = 2.0 * PI / spec.min_wavelength;
        let nmax = (kmax * spec.tube_radius).floor().max(1.0) as i64;
        let mut layer = |count: usize| -> Vec<Wave> {
            (0..count)
                .map(|_| {
                    // Keep the wall-space wavelength above `min_wavelength`.
                    let n = rng.random_range(-nmax..=nmax) as f64;
                    let kn = n / spec.tube_radius;
                    let kz_max = (kmax * kmax - kn * kn).max(0.0).sqrt();
                    Wave {
                        amp: rng.random_range(0.3..1.0),
                        n,
                        k: rng.random_range(-kz_max..=kz_max),
                        phase: rng.random_range(0.0..2.0 * PI),
                    }
                })
                .collect()
        };
        let count = spec.texture_components.max(1);
        let waves = [
            layer(count),
            layer(count / 2 + 1),
            layer(count / 2 + 1),
            layer(count / 2 + 1),
        ];
        Ok(Self { spec, waves })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn camera(&self) -> CameraModel<f64> {
        self.spec.camera()
    }

    /// Camera-to-world pose at (possibly fractional) frame time `t`.
    pub fn pose_at(&self, t: f64) -> Pose<f64> {
        let s = &self.spec;
        let theta = 2.0 * PI * t / s.helix_period;
        let center = Vec3::new(
            s.helix_radius * theta.cos(),
            s.helix_radius * theta.sin(),
            s.forward_step * t,
        );
        let amp = s.wobble_deg.to_radians();
        let w = 2.0 * PI * t / s.wobble_period;
        let yaw = amp * w.sin();
        let pitch = amp * (1.37 * w + 0.7).sin();
        let roll = 0.5 * amp * (0.61 * w + 1.9).sin();
        let q = Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), yaw)
            .mul(Quat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), pitch))
            .mul(Quat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), roll));
        Pose {
            rotation: q.normalized(),
            translation: center,
        }
    }

    /// Sequence poses re-expressed relative to the first frame, the gauge in
    /// which the SLAM map is built.
    pub fn relative_pose_at(&self, t: f64) -> Pose<f64> {
        self.pose_at(0.0).inverse().compose(&self.pose_at(t))
    }

    fn pattern(&self, layer: usize, phi: f64, z: f64) -> f64 {
        let waves = &self.waves[layer];
        let norm: f64 = waves.iter().map(|w| w.amp * w.amp / 2.0).sum::<f64>().sqrt();
        let v: f64 = waves
            .iter()
            .map(|w| w.amp * (w.n * phi + w.k * z + w.phase).sin())
            .sum();
        (v / norm).tanh()
    }

    /// Unlit wall albedo at angle `phi` and height `z`.
    pub fn albedo(&self, phi: f64, z: f64) -> [f64; 3] {
        let lum = 0.62 + 0.3 * self.pattern(0, phi, z);
        let mut c = [0.0; 3];
        for (ch, v) in c.iter_mut().enumerate() {
            *v = (BASE_COLOR[ch] * lum + 0.06 * self.pattern(ch + 1, phi, z)).clamp(0.0, 1.0);
        }
        c
    }

    pub fn light(&self, dist: f64) -> f64 {
        if self.spec.light_falloff {
            1.0 / (1.0 + (dist / self.spec.light_range).powf(self.spec.light_exponent))
        } else {
            1.0
        }
    }

    /// Camera-frame depth (z) of the wall along pixel `(u, v)`'s ray, if the
    /// ray meets the wall ahead of the camera.
    pub fn ray_depth(&self, pose: &Pose<f64>, cam: &CameraModel<f64>, u: f64, v: f64) -> Option<f64> {
        self.intersect(pose, cam, u, v).map(|(s, _)| s)
    }

    /// Wall radius at height `z`.
    pub fn radius_at(&self, z: f64) -> f64 {
        let s = &self.spec;
        s.tube_radius * (1.0 + s.fold_amplitude * (2.0 * PI * z / s.fold_wavelength).sin())
    }

    /// Ray parameter `s` along `d = R·((u−cx)/fx, (v−cy)/fy, 1)` (equal to the
    /// camera-frame depth) and the hit point.
    fn intersect(&self, pose: &Pose<f64>, cam: &CameraModel<f64>, u: f64, v: f64) -> Option<(f64, Vec3<f64>)> {
        let d_cam = Vec3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
        let d = pose.rotation.rotation_matrix().mul_vec(d_cam);
        let o = pose.translation;
        let spec = &self.spec;
        if spec.fold_amplitude == 0.0 {
            let a = d.x * d.x + d.y * d.y;
            let b = o.x * d.x + o.y * d.y;
            let c = o.x * o.x + o.y * o.y - spec.tube_radius * spec.tube_radius;
            if a < 1e-18 || c >= 0.0 {
                return None;
            }
            let s = (-b + (b * b - a * c).sqrt()) / a;
            return (s > 0.0).then(|| (s, o + d.scale(s)));
        }
        // Sphere tracing on g(s) = |xy(s)| − r(z(s)), negative inside. With L
        // bounding |g'|, steps of −g/L never pass the first crossing.
        let g = |s: f64| {
            let p = o + d.scale(s);
            (p.x * p.x + p.y * p.y).sqrt() - self.radius_at(p.z)
        };
        let slope = spec.tube_radius * spec.fold_amplitude * 2.0 * PI / spec.fold_wavelength;
        let lipschitz = (d.x * d.x + d.y * d.y).sqrt() + slope * d.z.abs();
        let mut s = 0.0;
        let mut gs = g(s);
        if gs >= 0.0 {
            return None;
        }
        for _ in 0..100_000 {
            if -gs < 1e-11 {
                return Some((s, o + d.scale(s)));
            }
            s += -gs / lipschitz;
            if s > MAX_RAY {
                return None;
            }
            gs = g(s);
        }
        None
    }

    /// Exact color and depth seen from `pose` through `cam`.
    pub fn render(&self, pose: &Pose<f64>, cam: &CameraModel<f64>) -> SyntheticView {
        let (w, h) = (cam.width, cam.height);
        let mut color = Image::zeros(w, h, 3);
        let mut depth = Image::zeros(w, h, 1);
        for y in 0..h {
            for x in 0..w {
                let Some((s, p)) = self.intersect(pose, cam, x as f64, y as f64) else {
                    continue;
                };
                let dist = (p - pose.translation).norm();
                let albedo = self.albedo(p.y.atan2(p.x), p.z);
                let light = self.light(dist);
                for (c, a) in albedo.iter().enumerate() {
                    color.set(x, y, c, a * light);
                }
                if s <= self.spec.max_depth {
                    depth.set(x, y, 0, s);
                }
            }
        }
        SyntheticView { color, depth }
    }

    /// The full sequence in memory, with ground-truth poses attached and
    /// noise applied.
    pub fn dataset(&self) -> Result<Dataset<f64>> {
        let cam = self.camera();
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.noise_seed);
        let color_noise = Normal::new(0.0, self.spec.color_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let depth_noise = Normal::new(0.0, self.spec.depth_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut frames = Vec::with_capacity(self.spec.frames);
        for i in 0..self.spec.frames {
            let pose = self.pose_at(i as f64);
            let mut view = self.render(&pose, &cam);
            if self.spec.color_noise > 0.0 {
                for v in view.color.data_mut() {
                    *v = (*v + color_noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            if self.spec.depth_noise > 0.0 {
                for d in view.depth.data_mut().iter_mut().filter(|d| **d > 0.0) {
                    *d = (*d + depth_noise.sample(&mut rng)).max(1e-6);
                }
            }
            frames.push(RgbdFrame::new(view.color, view.depth, i as u32)?.with_gt_pose(pose));
        }
        Ok(Dataset {
            camera: cam,
            depth_scale: self.spec.depth_scale,
            frames,
        })
    }

    /// Length of the camera path over the sequence (sum of per-frame
    /// displacements).
    pub fn trajectory_length(&self) -> f64 {
        (1..self.spec.frames)
            .map(|i| (self.pose_at(i as f64).translation - self.pose_at(i as f64 - 1.0).translation).norm())
            .sum()
    }
}

/// Generates the sequence described by `spec` and writes it to `dir` in the
/// [`load_dataset`](super::load_dataset) layout.
pub fn generate_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<Dataset<f64>> {
    let scene = SyntheticScene::new(spec.clone())?;
    let data = scene.dataset()?;
    save_dataset(dir, &data)?;
    Ok(data)
}
