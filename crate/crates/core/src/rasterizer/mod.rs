//! Tile-based differentiable rasterizer for isotropic Gaussians.
//!
//! Per pixel `u`, Gaussians sorted by camera-frame depth are composited
//! front to back with `α_i = σ_i·exp(−‖u − μ2d_i‖² / (2·r2d_i²))`:
//!
//! ```text
//! color(u)      = Σ c_i α_i T_i
//! depth(u)      = Σ z_i α_i T_i
//! visibility(u) = Σ     α_i T_i        with T_i = Π_{j<i} (1 − α_j)
//! ```
//!
//! The image is split into 16x16 tiles, each owning a depth-sorted list of
//! the splats whose footprint overlaps it. Tiles render in parallel; every
//! reduction happens in a fixed order so output is deterministic.

mod backward;

use rayon::prelude::*;

pub(crate) use backward::backward_prepared;
pub use backward::{render_backward, GaussianGrad, RenderGradients, Upstream};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Vec3};
use crate::image::Image;
use crate::scalar::Scalar;
use crate::scene::{CameraModel, GaussianMap, IsotropicGaussian};

pub const TILE_SIZE: usize = 16;
/// Footprint radius in units of `r2d`.
pub const CUTOFF_SIGMAS: f64 = 3.0;
/// Compositing stops once accumulated transmittance drops below this.
pub const T_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 0.9999;
/// Gaussians closer than this (meters, camera frame) are culled.
pub const Z_NEAR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Resolution scale relative to the camera model; `1/scale` must be an
    /// integer (1.0, 0.5, ...).
    pub scale: f64,
    /// Restrict each splat to pixels within `CUTOFF_SIGMAS·r2d`.
    pub cutoff: bool,
    /// Stop compositing once transmittance falls below [`T_MIN`].
    pub early_stop: bool,
    /// Upper clamp on per-splat alpha. `1.0` disables the clamp.
    pub alpha_max: f64,
    /// Expected output resolution; rendering fails if it disagrees with the
    /// scaled camera.
    pub resolution: Option<(usize, usize)>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            scale: 1.0,
            cutoff: true,
            early_stop: true,
            alpha_max: ALPHA_MAX,
            resolution: None,
        }
    }
}

impl RenderOptions {
    /// No footprint cutoff, no early termination and no alpha clamp: the
    /// exact compositing sums.
    pub fn exact() -> Self {
        Self {
            cutoff: false,
            early_stop: false,
            alpha_max: 1.0,
            ..Self::default()
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn downsample_factor(&self) -> Result<usize> {
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "render scale {} outside (0, 1]",
                self.scale
            )));
        }
        let k = (1.0 / self.scale).round();
        if (k * self.scale - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "render scale {} is not 1/n",
                self.scale
            )));
        }
        Ok(k as usize)
    }

    /// Camera model of the image actually produced.
    pub fn target_camera<S: Scalar>(&self, cam: &CameraModel<S>) -> Result<CameraModel<S>> {
        let target = cam.downsampled(self.downsample_factor()?);
        if target.width == 0 || target.height == 0 {
            return Err(Error::InvalidArgument("render resolution is empty".into()));
        }
        if let Some((w, h)) = self.resolution {
            if (w, h) != (target.width, target.height) {
                return Err(Error::Shape(format!(
                    "requested {w}x{h} but camera renders {}x{}",
                    target.width, target.height
                )));
            }
        }
        Ok(target)
    }
}

/// Image-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D<S> {
    pub mu2d: [S; 2],
    pub r2d: S,
    /// Camera-frame depth of the center.
    pub z: S,
    pub source_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<S> {
    pub color: Image<S>,
    pub depth: Image<S>,
    pub visibility: Image<S>,
}

impl<S: Scalar> RenderOutput<S> {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    fn zeros(w: usize, h: usize) -> Self {
        Self {
            color: Image::zeros(w, h, 3),
            depth: Image::zeros(w, h, 1),
            visibility: Image::zeros(w, h, 1),
        }
    }
}

#[inline]
fn project_point<S: Scalar>(
    g: &IsotropicGaussian<S>,
    rot: &Mat3<S>,
    translation: Vec3<S>,
    cam: &CameraModel<S>,
) -> Option<(Vec3<S>, [S; 2], S)> {
    let p = rot.tr_mul_vec(g.mu - translation);
    if p.z <= S::lit(Z_NEAR) {
        return None;
    }
    let inv_z = S::one() / p.z;
    let u = cam.fx * p.x * inv_z + cam.cx;
    let v = cam.fy * p.y * inv_z + cam.cy;
    let r2d = g.radius * cam.focal() * inv_z;
    Some((p, [u, v], r2d))
}

/// Pinhole projection of a Gaussian into `cam`; `None` when culled by the
/// near plane.
pub fn project<S: Scalar>(g: &IsotropicGaussian<S>, pose: &Pose<S>, cam: &CameraModel<S>) -> Option<Splat2D<S>> {
    let rot = pose.rotation.rotation_matrix();
    project_point(g, &rot, pose.translation, cam).map(|(p, mu2d, r2d)| Splat2D {
        mu2d,
        r2d,
        z: p.z,
        source_index: 0,
    })
}

/// Per-view splat with everything the compositing loop touches.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SplatData<S> {
    pub u: S,
    pub v: S,
    pub r2d: S,
    pub inv_two_r2: S,
    pub z: S,
    pub opacity: S,
    pub color: [S; 3],
    pub source: usize,
    pub cam_point: Vec3<S>,
}

pub(crate) struct Prepared<S> {
    pub cam: CameraModel<S>,
    pub rot: Mat3<S>,
    /// Sorted by `(z, source)`.
    pub splats: Vec<SplatData<S>>,
    pub tiles_x: usize,
    pub tile_lists: Vec<Vec<u32>>,
}

impl<S: Scalar> Prepared<S> {
    pub fn new(map: &GaussianMap<S>, pose: &Pose<S>, cam: &CameraModel<S>, opts: &RenderOptions) -> Result<Self> {
        let cam = opts.target_camera(cam)?;
        let rot = pose.rotation.rotation_matrix();
        let mut splats: Vec<SplatData<S>> = map
            .gaussians
            .par_iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let (p, [u, v], r2d) = project_point(g, &rot, pose.translation, &cam)?;
                if !(r2d > S::zero()) || !u.is_finite() || !v.is_finite() {
                    return None;
                }
                Some(SplatData {
                    u,
                    v,
                    r2d,
                    inv_two_r2: S::one() / (S::lit(2.0) * r2d * r2d),
                    z: p.z,
                    opacity: g.opacity,
                    color: g.color,
                    source: i,
                    cam_point: p,
                })
            })
            .collect();
        splats.par_sort_unstable_by(|a, b| {
            a.z.partial_cmp(&b.z)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.source.cmp(&b.source))
        });

        let tiles_x = cam.width.div_ceil(TILE_SIZE);
        let tiles_y = cam.height.div_ceil(TILE_SIZE);
        let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
        let w_max = S::from_usize_lossy(cam.width - 1);
        let h_max = S::from_usize_lossy(cam.height - 1);
        for (k, s) in splats.iter().enumerate() {
            let (tx0, tx1, ty0, ty1) = if opts.cutoff {
                let rad = s.r2d * S::lit(CUTOFF_SIGMAS);
                let x0 = (s.u - rad).ceil().max(S::zero());
                let x1 = (s.u + rad).floor().min(w_max);
                let y0 = (s.v - rad).ceil().max(S::zero());
                let y1 = (s.v + rad).floor().min(h_max);
                if x0 > x1 || y0 > y1 {
                    continue;
                }
                let to_tile = |p: S| p.to_usize().unwrap_or(0) / TILE_SIZE;
                (to_tile(x0), to_tile(x1), to_tile(y0), to_tile(y1))
            } else {
                (0, tiles_x - 1, 0, tiles_y - 1)
            };
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    tile_lists[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        Ok(Self {
            cam,
            rot,
            splats,
            tiles_x,
            tile_lists,
        })
    }

    /// Pixel bounds `(x0, x1, y0, y1)` (exclusive ends) of a tile.
    pub fn tile_bounds(&self, tile: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (
            x0,
            (x0 + TILE_SIZE).min(self.cam.width),
            y0,
            (y0 + TILE_SIZE).min(self.cam.height),
        )
    }
}

/// One compositing step as seen by a pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution<S> {
    /// Position in the tile list.
    pub slot: u32,
    pub alpha: S,
    /// Transmittance before this splat.
    pub transmittance: S,
    pub gauss: S,
    pub clamped: bool,
    pub dx: S,
    pub dy: S,
}

/// Front-to-back walk over a tile list for pixel `(px, py)`, calling `visit`
/// for every splat that contributes. Forward and backward passes share it
/// so both see identical truncation.
#[inline]
pub(crate) fn composite_pixel<S: Scalar>(
    splats: &[SplatData<S>],
    list: &[u32],
    px: S,
    py: S,
    opts: &RenderOptions,
    mut visit: impl FnMut(&SplatData<S>, Contribution<S>),
) {
    let cutoff2 = S::lit(CUTOFF_SIGMAS * CUTOFF_SIGMAS);
    let alpha_max = S::lit(opts.alpha_max);
    let t_min = S::lit(T_MIN);
    let mut t = S::one();
    for (slot, &k) in list.iter().enumerate() {
        let s = &splats[k as usize];
        let dx = px - s.u;
        let dy = py - s.v;
        let d2 = dx * dx + dy * dy;
        if opts.cutoff && d2 > cutoff2 * s.r2d * s.r2d {
            continue;
        }
        let gauss = (-d2 * s.inv_two_r2).exp();
        let raw = s.opacity * gauss;
        let clamped = raw > alpha_max;
        let alpha = if clamped { alpha_max } else { raw };
        visit(
            s,
            Contribution {
                slot: slot as u32,
                alpha,
                transmittance: t,
                gauss,
                clamped,
                dx,
                dy,
            },
        );
        t *= S::one() - alpha;
        if opts.early_stop && t < t_min {
            break;
        }
    }
}

/// Renders color, depth and visibility of `map` seen from `pose`.
pub fn render<S: Scalar>(
    map: &GaussianMap<S>,
    pose: &Pose<S>,
    cam: &CameraModel<S>,
    opts: &RenderOptions,
) -> Result<RenderOutput<S>> {
    let prep = Prepared::new(map, pose, cam, opts)?;
    Ok(render_prepared(&prep, opts))
}

pub(crate) fn render_prepared<S: Scalar>(prep: &Prepared<S>, opts: &RenderOptions) -> RenderOutput<S> {
    let (w, h) = (prep.cam.width, prep.cam.height);
    let tiles: Vec<Vec<[S; 5]>> = (0..prep.tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = prep.tile_bounds(tile);
            let list = &prep.tile_lists[tile];
            let mut buf = vec![[S::zero(); 5]; (x1 - x0) * (y1 - y0)];
            if list.is_empty() {
                return buf;
            }
            let mut i = 0;
            for py in y0..y1 {
                for px in x0..x1 {
                    let acc = &mut buf[i];
                    composite_pixel(
                        &prep.splats,
                        list,
                        S::from_usize_lossy(px),
                        S::from_usize_lossy(py),
                        opts,
                        |s, c| {
                            let wgt = c.alpha * c.transmittance;
                            acc[0] += s.color[0] * wgt;
                            acc[1] += s.color[1] * wgt;
                            acc[2] += s.color[2] * wgt;
                            acc[3] += s.z * wgt;
                            acc[4] += wgt;
                        },
                    );
                    i += 1;
                }
            }
            buf
        })
        .collect();

    let mut out = RenderOutput::zeros(w, h);
    for (tile, buf) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = prep.tile_bounds(tile);
        let mut i = 0;
        for py in y0..y1 {
            for px in x0..x1 {
                let a = buf[i];
                out.color.set(px, py, 0, a[0]);
                out.color.set(px, py, 1, a[1]);
                out.color.set(px, py, 2, a[2]);
                out.depth.set(px, py, 0, a[3]);
                out.visibility.set(px, py, 0, a[4].min(S::one()));
                i += 1;
            }
        }
    }
    out
}
