//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tissuesplat::{CameraModel, GaussianMap, Image, IsotropicGaussian, Pose, Quat, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Homogeneous camera-to-world matrix built with nalgebra.
pub fn pose_matrix(p: &Pose<f64>) -> Matrix4<f64> {
    let q = p.rotation;
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q.w, q.x, q.y, q.z));
    let mut m = uq.to_homogeneous();
    m[(0, 3)] = p.translation.x;
    m[(1, 3)] = p.translation.y;
    m[(2, 3)] = p.translation.z;
    m
}

pub fn matrix_apply(m: &Matrix4<f64>, p: [f64; 3]) -> [f64; 3] {
    let h = m * Vector4::new(p[0], p[1], p[2], 1.0);
    [h[0] / h[3], h[1] / h[3], h[2] / h[3]]
}

pub fn matrix_to_pose(m: &Matrix4<f64>) -> Pose<f64> {
    let rot = m.fixed_view::<3, 3>(0, 0).into_owned();
    let uq = UnitQuaternion::from_matrix(&rot);
    let q = uq.quaternion();
    Pose::new(
        Quat::new(q.w, q.i, q.j, q.k),
        Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
    )
}

pub fn random_pose(rng: &mut impl Rng, max_angle: f64, max_t: f64) -> Pose<f64> {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(-max_angle..max_angle);
    let t = Vec3::new(
        rng.random_range(-max_t..max_t),
        rng.random_range(-max_t..max_t),
        rng.random_range(-max_t..max_t),
    );
    Pose::new(Quat::from_axis_angle(axis, angle), t)
}

pub fn small_camera() -> CameraModel<f64> {
    CameraModel::new(30.0, 30.0, 15.5, 15.5, 32, 32).unwrap()
}

/// Random Gaussians in front of a camera near the origin looking down +z.
pub fn random_scene(rng: &mut impl Rng, n: usize) -> GaussianMap<f64> {
    let gaussians = (0..n)
        .map(|_| IsotropicGaussian {
            mu: Vec3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(1.0..3.0),
            ),
            color: [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ],
            radius: rng.random_range(0.03..0.15),
            opacity: rng.random_range(0.05..0.95),
            created_at: 0,
        })
        .collect();
    GaussianMap::from_gaussians(gaussians)
}

pub struct OracleRender {
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub visibility: Vec<f64>,
}

/// Per-pixel compositing over every Gaussian: no tiles, no footprint
/// cutoff, no early termination.
pub fn brute_force_render(
    map: &GaussianMap<f64>,
    pose: &Pose<f64>,
    cam: &CameraModel<f64>,
    alpha_max: f64,
) -> OracleRender {
    let world_to_cam = pose_matrix(pose).try_inverse().unwrap();
    let f = 0.5 * (cam.fx + cam.fy);
    // (z, index, u, v, r2d)
    let mut splats: Vec<(f64, usize, f64, f64, f64)> = Vec::new();
    for (i, g) in map.gaussians.iter().enumerate() {
        let p = matrix_apply(&world_to_cam, g.mu.to_array());
        if p[2] <= 1e-4 {
            continue;
        }
        let u = cam.fx * p[0] / p[2] + cam.cx;
        let v = cam.fy * p[1] / p[2] + cam.cy;
        splats.push((p[2], i, u, v, g.radius * f / p[2]));
    }
    splats.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let n = cam.width * cam.height;
    let mut out = OracleRender {
        color: vec![[0.0; 3]; n],
        depth: vec![0.0; n],
        visibility: vec![0.0; n],
    };
    for py in 0..cam.height {
        for px in 0..cam.width {
            let i = py * cam.width + px;
            let mut transmittance = 1.0;
            for &(z, idx, u, v, r) in &splats {
                let g = &map.gaussians[idx];
                let d2 = (px as f64 - u).powi(2) + (py as f64 - v).powi(2);
                let alpha = (g.opacity * (-d2 / (2.0 * r * r)).exp()).min(alpha_max);
                let w = alpha * transmittance;
                for c in 0..3 {
                    out.color[i][c] += g.color[c] * w;
                }
                out.depth[i] += z * w;
                out.visibility[i] += w;
                transmittance *= 1.0 - alpha;
            }
        }
    }
    out
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize, c: usize) -> Image<f64> {
    Image::from_fn(w, h, c, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Rotation angle (degrees) between two poses' orientations, via nalgebra.
pub fn rotation_error_deg(a: &Pose<f64>, b: &Pose<f64>) -> f64 {
    let qa = UnitQuaternion::from_quaternion(Quaternion::new(a.rotation.w, a.rotation.x, a.rotation.y, a.rotation.z));
    let qb = UnitQuaternion::from_quaternion(Quaternion::new(b.rotation.w, b.rotation.x, b.rotation.y, b.rotation.z));
    qa.angle_to(&qb).to_degrees()
}

pub fn translation_error(a: &Pose<f64>, b: &Pose<f64>) -> f64 {
    (Vector3::new(a.translation.x, a.translation.y, a.translation.z)
        - Vector3::new(b.translation.x, b.translation.y, b.translation.z))
    .norm()
}

/// First frame of a small synthetic tube sequence.
pub fn tube_frame(width: usize, height: usize, focal: f64) -> (tissuesplat::RgbdFrame<f64>, CameraModel<f64>) {
    let spec = tissuesplat::evalio::SyntheticSpec {
        frames: 1,
        width,
        height,
        focal,
        ..Default::default()
    };
    let data = tissuesplat::evalio::SyntheticScene::new(spec)
        .unwrap()
        .dataset()
        .unwrap();
    (data.frames[0].clone(), data.camera)
}

/// Map backprojected from `frame` at the identity and refined on it.
pub fn converged_map(
    frame: &tissuesplat::RgbdFrame<f64>,
    cam: &CameraModel<f64>,
    iterations: usize,
) -> (GaussianMap<f64>, f64) {
    use tissuesplat::refiner::{refine, Keyframe, RefineConfig};
    let (mut map, pose) = tissuesplat::mapper::initialize_map(frame, cam, 0.1).unwrap();
    let scale = frame.median_depth().unwrap();
    let cfg = RefineConfig {
        iterations,
        ..RefineConfig::default()
    };
    let kf = Keyframe::new(frame.clone(), pose, 0.1);
    refine(&mut map, &[], &kf, cam, &cfg, scale, &mut rng(1)).unwrap();
    (map, scale)
}

/// The map's own render at `pose` as a frame: a target whose optimal pose
/// is known exactly.
pub fn self_render(map: &GaussianMap<f64>, pose: &Pose<f64>, cam: &CameraModel<f64>) -> tissuesplat::RgbdFrame<f64> {
    let out =
        tissuesplat::rasterizer::render(map, pose, cam, &tissuesplat::rasterizer::RenderOptions::default()).unwrap();
    tissuesplat::RgbdFrame::new(out.color, out.depth, 0).unwrap()
}

/// Pose offset by a rotation of `angle_deg` about a random axis and a
/// translation of length `dist` in a random direction.
pub fn perturb(pose: &Pose<f64>, rng: &mut impl Rng, angle_deg: f64, dist: f64) -> Pose<f64> {
    let unit = |rng: &mut dyn rand::RngCore| {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        v.scale(1.0 / v.norm())
    };
    let axis = unit(rng);
    let dir = unit(rng);
    pose.compose(&Pose::new(
        Quat::from_axis_angle(axis, angle_deg.to_radians()),
        dir.scale(dist),
    ))
}

/// Direct sliding-window SSIM with an explicit 2D Gaussian window.
pub fn naive_ssim_map(a: &Image<f64>, b: &Image<f64>) -> Vec<f64> {
    use tissuesplat::refiner::ssim::{C1, C2, WINDOW};
    let mut win = [[0.0; WINDOW]; WINDOW];
    let mut total = 0.0;
    for (j, row) in win.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let mut out = Vec::new();
    for y in 0..=h - WINDOW {
        for x in 0..=w - WINDOW {
            let mut acc = 0.0;
            for c in 0..ch {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..WINDOW {
                    for i in 0..WINDOW {
                        let g = win[j][i] / total;
                        let va = a.get(x + i, y + j, c);
                        let vb = b.get(x + i, y + j, c);
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += (2.0 * ma * mb + C1) * (2.0 * cov + C2) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            }
            out.push(acc / ch as f64);
        }
    }
    out
}
