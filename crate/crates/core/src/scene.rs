//! Scene primitives, camera intrinsics and RGB-D frames.

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::image::Image;
use crate::scalar::Scalar;

/// One isotropic scene primitive: center, RGB color, radius and opacity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicGaussian<S> {
    pub mu: Vec3<S>,
    pub color: [S; 3],
    pub radius: S,
    pub opacity: S,
    /// Index of the frame that created this Gaussian. Not optimized.
    pub created_at: u32,
}

impl<S: Scalar> IsotropicGaussian<S> {
    /// Optimizable scalars per Gaussian: center (3), color (3), radius, opacity.
    pub const PARAMS: usize = 8;

    /// Smallest radius the optimizer may shrink a Gaussian to.
    pub fn min_radius() -> S {
        S::lit(1e-9)
    }

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

    pub fn set_params(&mut self, p: &[S]) {
        self.mu = Vec3::new(p[0], p[1], p[2]);
        self.color = [p[3], p[4], p[5]];
        self.radius = p[6];
        self.opacity = p[7];
    }

    /// Clamps color and opacity into `[0, 1]` and radius to a positive floor.
    pub fn clamp_to_valid(&mut self) {
        let (zero, one) = (S::zero(), S::one());
        for c in &mut self.color {
            *c = c.max(zero).min(one);
        }
        self.opacity = self.opacity.max(zero).min(one);
        self.radius = self.radius.max(Self::min_radius());
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: S| v >= S::zero() && v <= S::one();
        self.radius > S::zero()
            && unit(self.opacity)
            && self.color.iter().all(|&c| unit(c))
            && self.mu.x.is_finite()
            && self.mu.y.is_finite()
            && self.mu.z.is_finite()
    }

    pub fn cast<T: Scalar>(&self) -> IsotropicGaussian<T> {
        IsotropicGaussian {
            mu: self.mu.cast(),
            color: self.color.map(|c| T::lit(c.as_f64())),
            radius: T::lit(self.radius.as_f64()),
            opacity: T::lit(self.opacity.as_f64()),
            created_at: self.created_at,
        }
    }
}

/// Unordered collection of Gaussians. Rendering sorts by depth per view.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianMap<S> {
    pub gaussians: Vec<IsotropicGaussian<S>>,
}

impl<S: Scalar> GaussianMap<S> {
    pub fn new() -> Self {
        Self { gaussians: Vec::new() }
    }

    pub fn from_gaussians(gaussians: Vec<IsotropicGaussian<S>>) -> Self {
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, IsotropicGaussian<S>> {
        self.gaussians.iter()
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = IsotropicGaussian<S>>) {
        self.gaussians.extend(more);
    }

    pub fn cast<T: Scalar>(&self) -> GaussianMap<T> {
        GaussianMap {
            gaussians: self.gaussians.iter().map(|g| g.cast()).collect(),
        }
    }
}

/// Pinhole intrinsics. Pixel centers sit at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel<S> {
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
    pub width: usize,
    pub height: usize,
}

impl<S: Scalar> CameraModel<S> {
    pub fn new(fx: S, fy: S, cx: S, cy: S, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > S::zero()
            && self.fy > S::zero()
            && self.width > 0
            && self.height > 0
            && self.cx >= S::zero()
            && self.cx < S::from_usize_lossy(self.width)
            && self.cy >= S::zero()
            && self.cy < S::from_usize_lossy(self.height);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid camera model {self:?}")))
        }
    }

    /// Single focal length used for radius projection: mean of fx and fy.
    #[inline]
    pub fn focal(&self) -> S {
        (self.fx + self.fy) * S::lit(0.5)
    }

    /// Intrinsics for an image resampled to `width x height`, keeping the
    /// pixel-center-at-integer convention.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = S::from_usize_lossy(width) / S::from_usize_lossy(self.width);
        let sy = S::from_usize_lossy(height) / S::from_usize_lossy(self.height);
        let half = S::lit(0.5);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + half) * sx - half,
            cy: (self.cy + half) * sy - half,
            width,
            height,
        }
    }

    /// Intrinsics after `factor x factor` box downsampling.
    pub fn downsampled(&self, factor: usize) -> Self {
        if factor <= 1 {
            return *self;
        }
        let f = S::from_usize_lossy(factor);
        let half = S::lit(0.5);
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx + half) / f - half,
            cy: (self.cy + half) / f - half,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    /// Camera-frame point at `depth` along the ray through pixel `(u, v)`.
    #[inline]
    pub fn backproject(&self, u: S, v: S, depth: S) -> Vec3<S> {
        Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }

    pub fn cast<T: Scalar>(&self) -> CameraModel<T> {
        CameraModel {
            fx: T::lit(self.fx.as_f64()),
            fy: T::lit(self.fy.as_f64()),
            cx: T::lit(self.cx.as_f64()),
            cy: T::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Color image in `[0, 1]` plus metric depth (0 marks invalid depth).
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame<S> {
    pub color: Image<S>,
    pub depth: Image<S>,
    pub index: u32,
    pub gt_pose: Option<Pose<S>>,
}

impl<S: Scalar> RgbdFrame<S> {
    pub fn new(color: Image<S>, depth: Image<S>, index: u32) -> Result<Self> {
        if color.channels() != 3 || depth.channels() != 1 || !color.same_extent(&depth) {
            return Err(Error::Shape(format!(
                "color {}x{}x{} vs depth {}x{}x{}",
                color.width(),
                color.height(),
                color.channels(),
                depth.width(),
                depth.height(),
                depth.channels()
            )));
        }
        if depth.data().iter().any(|d| !d.is_finite() || *d < S::zero()) {
            return Err(Error::InvalidArgument("depth must be finite and non-negative".into()));
        }
        Ok(Self {
            color,
            depth,
            index,
            gt_pose: None,
        })
    }

    pub fn with_gt_pose(mut self, pose: Pose<S>) -> Self {
        self.gt_pose = Some(pose);
        self
    }

    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    #[inline]
    pub fn depth_valid(&self, i: usize) -> bool {
        self.depth.data()[i] > S::zero()
    }

    /// `factor x factor` box average. Depth averages only valid samples.
    pub fn downsampled(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let w = self.width() / factor;
        let h = self.height() / factor;
        let mut color = Image::zeros(w, h, 3);
        let mut depth = Image::zeros(w, h, 1);
        let n = S::from_usize_lossy(factor * factor);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [S::zero(); 3];
                let mut dsum = S::zero();
                let mut dcount = 0usize;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let (sx, sy) = (x * factor + dx, y * factor + dy);
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += self.color.get(sx, sy, c);
                        }
                        let d = self.depth.get(sx, sy, 0);
                        if d > S::zero() {
                            dsum += d;
                            dcount += 1;
                        }
                    }
                }
                for (c, a) in acc.iter().enumerate() {
                    color.set(x, y, c, *a / n);
                }
                if dcount > 0 {
                    depth.set(x, y, 0, dsum / S::from_usize_lossy(dcount));
                }
            }
        }
        Self {
            color,
            depth,
            index: self.index,
            gt_pose: self.gt_pose,
        }
    }

    /// Median of the valid depth samples, if any.
    pub fn median_depth(&self) -> Option<S> {
        let mut valid: Vec<S> = self.depth.data().iter().copied().filter(|d| *d > S::zero()).collect();
        if valid.is_empty() {
            return None;
        }
        let mid = valid.len() / 2;
        let (_, m, _) = valid.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
        Some(*m)
    }

    pub fn cast<T: Scalar>(&self) -> RgbdFrame<T> {
        RgbdFrame {
            color: self.color.cast(),
            depth: self.depth.cast(),
            index: self.index,
            gt_pose: self.gt_pose.map(|p| p.cast()),
        }
    }
}
