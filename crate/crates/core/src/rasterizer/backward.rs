use rayon::prelude::*;

use super::{composite_pixel, Contribution, Prepared, RenderOptions};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Vec3};
use crate::image::Image;
use crate::scalar::Scalar;
use crate::scene::{CameraModel, GaussianMap};

/// Per-pixel gradients of a scalar loss with respect to the rendered color
/// (3 channels) and depth (1 channel).
#[derive(Clone, Copy, Debug)]
pub struct Upstream<'a, S> {
    pub color: &'a Image<S>,
    pub depth: &'a Image<S>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad<S> {
    pub mu: Vec3<S>,
    pub color: [S; 3],
    pub radius: S,
    pub opacity: S,
}

impl<S: Scalar> GaussianGrad<S> {
    /// Same layout as [`crate::IsotropicGaussian::to_params`].
    pub fn to_params(&self) -> [S; 8] {
        [
            self.mu.x,
            self.mu.y,
            self.mu.z,
            self.color[0],
            self.color[1],
            self.color[2],
            self.radius,
            self.opacity,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients<S> {
    /// One entry per map Gaussian; culled Gaussians get zeros.
    pub gaussians: Vec<GaussianGrad<S>>,
    /// Gradient with respect to the raw quaternion `[w, x, y, z]`.
    pub rotation: [S; 4],
    pub translation: Vec3<S>,
}

impl<S: Scalar> RenderGradients<S> {
    /// `[qw, qx, qy, qz, tx, ty, tz]`
    pub fn pose_vector(&self) -> [S; 7] {
        let r = self.rotation;
        let t = self.translation;
        [r[0], r[1], r[2], r[3], t.x, t.y, t.z]
    }

    pub fn is_finite(&self) -> bool {
        self.pose_vector().iter().all(|v| v.is_finite())
            && self
                .gaussians
                .iter()
                .all(|g| g.to_params().iter().all(|v| v.is_finite()))
    }
}

/// Image-space gradient of one splat: `[u, v, r2d, z, opacity, r, g, b]`.
type SplatGrad<S> = [S; 8];

/// Exact gradients of `Σ_u upstream·render(u)` with respect to every
/// Gaussian parameter and the seven raw pose parameters. Truncation
/// (cutoff, early stop, alpha clamp) matches [`super::render`] for the
/// same options.
pub fn render_backward<S: Scalar>(
    map: &GaussianMap<S>,
    pose: &Pose<S>,
    cam: &CameraModel<S>,
    opts: &RenderOptions,
    upstream: Upstream<'_, S>,
) -> Result<RenderGradients<S>> {
    let prep = Prepared::new(map, pose, cam, opts)?;
    backward_prepared(&prep, map, pose, opts, upstream)
}

pub(crate) fn backward_prepared<S: Scalar>(
    prep: &Prepared<S>,
    map: &GaussianMap<S>,
    pose: &Pose<S>,
    opts: &RenderOptions,
    upstream: Upstream<'_, S>,
) -> Result<RenderGradients<S>> {
    let (w, h) = (prep.cam.width, prep.cam.height);
    for (name, img, ch) in [("color", upstream.color, 3), ("depth", upstream.depth, 1)] {
        if img.width() != w || img.height() != h || img.channels() != ch {
            return Err(Error::Shape(format!(
                "upstream {name} is {}x{}x{}, render is {w}x{h}x{ch}",
                img.width(),
                img.height(),
                img.channels()
            )));
        }
    }

    let tile_grads: Vec<Vec<SplatGrad<S>>> = (0..prep.tile_lists.len())
        .into_par_iter()
        .map(|tile| backward_tile(prep, tile, opts, &upstream))
        .collect();

    let mut splat_grads = vec![[S::zero(); 8]; prep.splats.len()];
    for (tile, grads) in tile_grads.iter().enumerate() {
        for (slot, g) in grads.iter().enumerate() {
            let acc = &mut splat_grads[prep.tile_lists[tile][slot] as usize];
            for (a, v) in acc.iter_mut().zip(g) {
                *a += *v;
            }
        }
    }

    let cam = &prep.cam;
    let focal = cam.focal();
    let mut out = RenderGradients {
        gaussians: vec![GaussianGrad::default(); map.len()],
        rotation: [S::zero(); 4],
        translation: Vec3::zeros(),
    };
    let mut d_rot = Mat3::zeros();
    for (s, g) in prep.splats.iter().zip(&splat_grads) {
        let [du, dv, dr2d, dz_direct, dopacity, dr, dg, db] = *g;
        let p = s.cam_point;
        let inv_z = S::one() / p.z;
        let radius = map.gaussians[s.source].radius;
        let dz = dz_direct
            - du * cam.fx * p.x * inv_z * inv_z
            - dv * cam.fy * p.y * inv_z * inv_z
            - dr2d * radius * focal * inv_z * inv_z;
        let d_cam = Vec3::new(du * cam.fx * inv_z, dv * cam.fy * inv_z, dz);
        let d_mu = prep.rot.mul_vec(d_cam);
        let offset = map.gaussians[s.source].mu - pose.translation;
        for i in 0..3 {
            for j in 0..3 {
                d_rot.m[i][j] += offset[i] * d_cam[j];
            }
        }
        out.translation = out.translation - d_mu;
        out.gaussians[s.source] = GaussianGrad {
            mu: d_mu,
            color: [dr, dg, db],
            radius: dr2d * focal * inv_z,
            opacity: dopacity,
        };
    }
    for (k, jac) in pose.rotation.rotation_jacobian().iter().enumerate() {
        out.rotation[k] = d_rot.frobenius_dot(jac);
    }
    Ok(out)
}

fn backward_tile<S: Scalar>(
    prep: &Prepared<S>,
    tile: usize,
    opts: &RenderOptions,
    upstream: &Upstream<'_, S>,
) -> Vec<SplatGrad<S>> {
    let list = &prep.tile_lists[tile];
    let mut grads = vec![[S::zero(); 8]; list.len()];
    if list.is_empty() {
        return grads;
    }
    let (x0, x1, y0, y1) = prep.tile_bounds(tile);
    let width = prep.cam.width;
    let mut scratch: Vec<Contribution<S>> = Vec::new();
    for py in y0..y1 {
        for px in x0..x1 {
            let i = py * width + px;
            let gc = upstream.color.pixel(i);
            let gd = upstream.depth.data()[i];
            if gd == S::zero() && gc.iter().all(|v| *v == S::zero()) {
                continue;
            }
            scratch.clear();
            composite_pixel(
                &prep.splats,
                list,
                S::from_usize_lossy(px),
                S::from_usize_lossy(py),
                opts,
                |_, c| scratch.push(c),
            );
            // Walking back to front, `rest` is the composite of everything
            // behind the current splat with transmittance reset to one.
            let mut rest = S::zero();
            for c in scratch.iter().rev() {
                let s = &prep.splats[list[c.slot as usize] as usize];
                let f = gc[0] * s.color[0] + gc[1] * s.color[1] + gc[2] * s.color[2] + gd * s.z;
                let weight = c.alpha * c.transmittance;
                let g = &mut grads[c.slot as usize];
                g[3] += gd * weight;
                g[5] += gc[0] * weight;
                g[6] += gc[1] * weight;
                g[7] += gc[2] * weight;
                let d_alpha = c.transmittance * (f - rest);
                rest = c.alpha * f + (S::one() - c.alpha) * rest;
                if c.clamped {
                    continue;
                }
                g[4] += d_alpha * c.gauss;
                let d_gauss = d_alpha * s.opacity * c.gauss;
                let inv_r2 = S::lit(2.0) * s.inv_two_r2;
                g[0] += d_gauss * c.dx * inv_r2;
                g[1] += d_gauss * c.dy * inv_r2;
                g[2] += d_gauss * (c.dx * c.dx + c.dy * c.dy) * inv_r2 / s.r2d;
            }
        }
    }
    grads
}
