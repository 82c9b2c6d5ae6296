//! Per-frame camera tracking against a frozen map.
//!
//! The pose is optimized by Adam on the raw quaternion and translation,
//! minimizing the L1 color + depth re-rendering error on pixels that pass
//! the brightness pre-filter and whose rendered visibility exceeds `rho_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{constant_velocity_extrapolate, Pose, Quat, Vec3};
use crate::image::{Image, Mask};
use crate::optim::Adam;
use crate::rasterizer::{backward_prepared, render_prepared, Prepared, RenderOptions, RenderOutput, Upstream};
use crate::scalar::Scalar;
use crate::scene::{CameraModel, GaussianMap, RgbdFrame};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub iterations: usize,
    /// Adam step size for the quaternion components.
    pub rotation_lr: f64,
    /// Adam step size for the translation, in units of the scene scale.
    pub translation_lr: f64,
    /// Brightness pre-filter threshold.
    pub delta: f64,
    /// Visibility gate.
    pub rho_t: f64,
    pub resolution_scale: f64,
    pub depth_weight: f64,
    /// Multiplicative step size decay per iteration.
    pub lr_decay: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            iterations: 15,
            rotation_lr: 2e-3,
            translation_lr: 2e-3,
            delta: 0.1,
            rho_t: 0.99,
            resolution_scale: 1.0,
            depth_weight: 1.0,
            lr_decay: 1.0,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("tracking: {m}")));
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad("delta must lie in (0, 0.5)");
        }
        if !(self.rho_t > 0.0 && self.rho_t <= 1.0) {
            return bad("rho_t must lie in (0, 1]");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.rotation_lr > 0.0 && self.translation_lr > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.depth_weight < 0.0 {
            return bad("depth_weight must be non-negative");
        }
        RenderOptions::default()
            .with_scale(self.resolution_scale)
            .downsample_factor()
            .map(|_| ())
    }
}

/// Luma used by the brightness pre-filter.
#[inline]
pub fn gray<S: Scalar>(rgb: &[S]) -> S {
    S::lit(0.299) * rgb[0] + S::lit(0.587) * rgb[1] + S::lit(0.114) * rgb[2]
}

/// 1 where `delta ≤ gray ≤ 1 − delta`.
pub fn brightness_mask<S: Scalar>(color: &Image<S>, delta: f64) -> Mask {
    let lo = S::lit(delta);
    let hi = S::lit(1.0 - delta);
    let w = color.width();
    Mask::from_fn(w, color.height(), |x, y| {
        let g = gray(color.pixel(y * w + x));
        g >= lo && g <= hi
    })
}

/// Brightness pre-filter restricted to pixels with valid depth.
pub fn prefilter_mask<S: Scalar>(frame: &RgbdFrame<S>, delta: f64) -> Mask {
    let mut m = brightness_mask(&frame.color, delta);
    let w = frame.width();
    for y in 0..frame.height() {
        for x in 0..w {
            if !frame.depth_valid(y * w + x) {
                m.set(x, y, false);
            }
        }
    }
    m
}

/// Scalar loss with its per-pixel gradients with respect to the rendered
/// color and depth.
#[derive(Clone, Debug)]
pub struct LossOutput<S> {
    pub loss: S,
    pub grad_color: Image<S>,
    pub grad_depth: Image<S>,
    /// Pixels that contributed.
    pub active_pixels: usize,
}

#[inline]
fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// `Σ_u M(u)·[V(u) > rho_t]·(|Ĉ − C|₁ + w_d·|D̂ − D|)`. The visibility gate
/// is a constant: no gradient flows through it.
pub fn tracking_loss<S: Scalar>(
    render: &RenderOutput<S>,
    frame: &RgbdFrame<S>,
    mask: &Mask,
    rho_t: f64,
    depth_weight: f64,
) -> Result<LossOutput<S>> {
    if !render.color.same_shape(&frame.color) || !mask.matches(&frame.color) {
        return Err(Error::Shape(format!(
            "render {}x{} vs frame {}x{} vs mask {}x{}",
            render.width(),
            render.height(),
            frame.width(),
            frame.height(),
            mask.width(),
            mask.height()
        )));
    }
    let (w, h) = (frame.width(), frame.height());
    let rho = S::lit(rho_t);
    let wd = S::lit(depth_weight);
    let mut grad_color = Image::zeros(w, h, 3);
    let mut grad_depth = Image::zeros(w, h, 1);
    let mut loss = S::zero();
    let mut active = 0;
    for i in 0..w * h {
        let d_gt = frame.depth.data()[i];
        if !mask.at(i) || d_gt <= S::zero() || render.visibility.data()[i] <= rho {
            continue;
        }
        active += 1;
        let rc = render.color.pixel(i);
        let gc = frame.color.pixel(i);
        for c in 0..3 {
            let r = rc[c] - gc[c];
            loss += r.abs();
            grad_color.data_mut()[i * 3 + c] = sign(r);
        }
        let rd = render.depth.data()[i] - d_gt;
        loss += wd * rd.abs();
        grad_depth.data_mut()[i] = wd * sign(rd);
    }
    if active == 0 {
        return Err(Error::Untrackable);
    }
    Ok(LossOutput {
        loss,
        grad_color,
        grad_depth,
        active_pixels: active,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult<S> {
    pub pose: Pose<S>,
    pub initial_loss: S,
    pub loss: S,
    pub iterations: usize,
}

/// Tracks `frame` starting from the constant-velocity prediction.
pub fn track_frame<S: Scalar>(
    map: &GaussianMap<S>,
    frame: &RgbdFrame<S>,
    cam: &CameraModel<S>,
    prev: &Pose<S>,
    prev_prev: &Pose<S>,
    cfg: &TrackingConfig,
    scene_scale: S,
) -> Result<TrackResult<S>> {
    let init = constant_velocity_extrapolate(prev, prev_prev);
    optimize_pose(map, frame, cam, &init, cfg, scene_scale)
}

/// Runs `cfg.iterations` Adam steps from `init` and returns the iterate
/// with the lowest observed loss.
pub fn optimize_pose<S: Scalar>(
    map: &GaussianMap<S>,
    frame: &RgbdFrame<S>,
    cam: &CameraModel<S>,
    init: &Pose<S>,
    cfg: &TrackingConfig,
    scene_scale: S,
) -> Result<TrackResult<S>> {
    cfg.validate()?;
    if map.is_empty() {
        return Err(Error::InvalidArgument("cannot track against an empty map".into()));
    }
    let opts = RenderOptions::default().with_scale(cfg.resolution_scale);
    let target = frame.downsampled(opts.downsample_factor()?);
    let mask = prefilter_mask(&target, cfg.delta);

    let mut pose = init.renormalized();
    let mut adam = Adam::new(7);
    let mut best: Option<(S, Pose<S>)> = None;
    let mut initial_loss = S::zero();
    let mut lr_scale = 1.0;
    let mut iterations = 0;
    for it in 0..=cfg.iterations {
        let prep = Prepared::new(map, &pose, cam, &opts)?;
        let out = render_prepared(&prep, &opts);
        let loss = match tracking_loss(&out, &target, &mask, cfg.rho_t, cfg.depth_weight) {
            Ok(l) => l,
            Err(Error::Untrackable) if it > 0 => break,
            Err(e) => return Err(e),
        };
        if it == 0 {
            initial_loss = loss.loss;
        }
        if best.as_ref().is_none_or(|(b, _)| loss.loss < *b) {
            best = Some((loss.loss, pose));
        }
        if it == cfg.iterations {
            break;
        }
        let grads = backward_prepared(
            &prep,
            map,
            &pose,
            &opts,
            Upstream {
                color: &loss.grad_color,
                depth: &loss.grad_depth,
            },
        )?;
        let q = pose.rotation.to_array();
        let t = pose.translation;
        let mut params = [q[0], q[1], q[2], q[3], t.x, t.y, t.z];
        let rot_lr = S::lit(cfg.rotation_lr * lr_scale);
        let trans_lr = S::lit(cfg.translation_lr * lr_scale) * scene_scale;
        adam.step(
            &mut params,
            &grads.pose_vector(),
            |i| if i < 4 { rot_lr } else { trans_lr },
        );
        pose = Pose::new(
            Quat::new(params[0], params[1], params[2], params[3]).normalized(),
            Vec3::new(params[4], params[5], params[6]),
        );
        lr_scale *= cfg.lr_decay;
        iterations += 1;
    }
    let (loss, pose) = best.expect("first iterate always evaluated");
    Ok(TrackResult {
        pose: pose.renormalized(),
        initial_loss,
        loss,
        iterations,
    })
}
