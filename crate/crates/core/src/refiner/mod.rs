//! Keyframe sampling and map refinement.
//!
//! Every call to [`refine`] draws one supervision frame per iteration from
//! the keyframe list plus the current frame. Keyframes close to the current
//! frame in space and time are favored:
//!
//! ```text
//! P(f_l) = log2(1 + 1/(d_l + s)) + log2(1 + 1/(t_l + s))
//! ```
//!
//! with the keyframe scores rescaled to sum to `1 − p_c` and the current
//! frame taking the remaining `p_c`.

pub mod ssim;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::image::{Image, Mask};
use crate::optim::Adam;
use crate::rasterizer::{backward_prepared, render_prepared, Prepared, RenderOptions, RenderOutput, Upstream};
use crate::scalar::Scalar;
use crate::scene::{CameraModel, GaussianMap, IsotropicGaussian, RgbdFrame};
use crate::tracker::{prefilter_mask, LossOutput};

use self::ssim::{weighted_ssim_with_grad, HALF_WINDOW, WINDOW};

/// A frame cached with its tracked pose for refinement supervision.
#[derive(Clone, Debug)]
pub struct Keyframe<S> {
    pub frame: RgbdFrame<S>,
    pub pose: Pose<S>,
    pub camera_center: Vec3<S>,
    /// Pre-filter of this frame.
    pub mask: Mask,
}

impl<S: Scalar> Keyframe<S> {
    pub fn new(frame: RgbdFrame<S>, pose: Pose<S>, delta: f64) -> Self {
        let mask = prefilter_mask(&frame, delta);
        Self {
            camera_center: pose.center(),
            frame,
            pose,
            mask,
        }
    }

    pub fn index(&self) -> u32 {
        self.frame.index
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Every k-th frame becomes a keyframe.
    pub keyframe_interval: usize,
    /// Refinement runs on every n-th frame.
    pub refine_interval: usize,
    pub iterations: usize,
    /// Probability mass of the current frame.
    pub p_c: f64,
    /// Score offset `s`.
    pub s: f64,
    pub lambda_ssim: f64,
    /// Multiplier on the depth residual (meters); 1 is the unweighted sum.
    pub depth_weight: f64,
    /// Step sizes. Center and radius are in units of the scene scale.
    pub mu_lr: f64,
    pub color_lr: f64,
    pub radius_lr: f64,
    pub opacity_lr: f64,
    /// Gaussians below this opacity are dropped after each call; 0 disables.
    pub prune_opacity: f64,
    pub delta: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            keyframe_interval: 8,
            refine_interval: 1,
            iterations: 25,
            p_c: 0.1,
            s: 0.2,
            lambda_ssim: 0.2,
            depth_weight: 1.0,
            mu_lr: 3e-3,
            color_lr: 2.5e-3,
            radius_lr: 1e-3,
            opacity_lr: 5e-2,
            prune_opacity: 0.005,
            delta: 0.1,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("refine: {m}")));
        if !(0.0..1.0).contains(&self.p_c) {
            return bad("p_c must lie in [0, 1)");
        }
        if !(self.s > 0.0) {
            return bad("s must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return bad("lambda_ssim must lie in [0, 1]");
        }
        if self.keyframe_interval == 0 || self.refine_interval == 0 {
            return bad("intervals must be at least 1");
        }
        if !(self.depth_weight >= 0.0) {
            return bad("depth_weight must be non-negative");
        }
        if [self.mu_lr, self.color_lr, self.radius_lr, self.opacity_lr]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return bad("step sizes must be non-negative");
        }
        if !(0.0..1.0).contains(&self.prune_opacity) {
            return bad("prune_opacity must lie in [0, 1)");
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad("delta must lie in (0, 0.5)");
        }
        Ok(())
    }
}

/// Raw keyframe score from normalized distance and time.
#[inline]
pub fn keyframe_score(distance: f64, time: f64, s: f64) -> f64 {
    (1.0 + 1.0 / (distance + s)).log2() + (1.0 + 1.0 / (time + s)).log2()
}

/// Sampling distribution over `keyframes` followed by `current` (last
/// entry). `d_l` is the keyframe's camera distance to the current camera
/// divided by the current camera's distance from the first keyframe; `t_l`
/// is its frame gap to the current frame divided by the current index.
pub fn keyframe_probabilities<S: Scalar>(
    keyframes: &[Keyframe<S>],
    current: &Keyframe<S>,
    p_c: f64,
    s: f64,
) -> Result<Vec<f64>> {
    if keyframes.is_empty() {
        return Ok(vec![1.0]);
    }
    if current.index() == 0 {
        return Err(Error::InvalidArgument(
            "current frame index must be positive when keyframes exist".into(),
        ));
    }
    let cur = current.camera_center.cast::<f64>();
    let origin = keyframes[0].camera_center.cast::<f64>();
    let travel = (cur - origin).norm();
    let t_cur = current.index() as f64;
    let raw: Vec<f64> = keyframes
        .iter()
        .map(|k| {
            let d = if travel > 0.0 {
                (k.camera_center.cast::<f64>() - cur).norm() / travel
            } else {
                0.0
            };
            let gap = t_cur - k.index() as f64;
            keyframe_score(d, gap / t_cur, s)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|r| r / total * (1.0 - p_c)).collect();
    probs.push(p_c);
    Ok(probs)
}

/// Masked refinement objective:
/// `Σ_u M(u)·((1−λ)|Ĉ−C|₁ + λ(1 − SSIM(u)) + |D̂ − D|)`.
///
/// SSIM is evaluated on the full images and masked per window center;
/// pixels within 5 px of the border carry no SSIM term.
pub fn refinement_loss<S: Scalar>(
    render: &RenderOutput<S>,
    frame: &RgbdFrame<S>,
    mask: &Mask,
    lambda_ssim: f64,
) -> Result<LossOutput<S>> {
    weighted_refinement_loss(render, frame, mask, lambda_ssim, 1.0)
}

/// [`refinement_loss`] with the depth residual scaled by `depth_weight`.
pub fn weighted_refinement_loss<S: Scalar>(
    render: &RenderOutput<S>,
    frame: &RgbdFrame<S>,
    mask: &Mask,
    lambda_ssim: f64,
    depth_weight: f64,
) -> Result<LossOutput<S>> {
    if !render.color.same_shape(&frame.color) || !mask.matches(&frame.color) {
        return Err(Error::Shape("refinement loss inputs disagree in size".into()));
    }
    let (w, h) = (frame.width(), frame.height());
    let lambda = S::lit(lambda_ssim);
    let l1 = S::one() - lambda;
    let wd = S::lit(depth_weight);
    let mut grad_color = Image::zeros(w, h, 3);
    let mut grad_depth = Image::zeros(w, h, 1);
    let mut loss = S::zero();
    let mut active = 0;
    for i in 0..w * h {
        if !mask.at(i) {
            continue;
        }
        active += 1;
        let rc = render.color.pixel(i);
        let gc = frame.color.pixel(i);
        for c in 0..3 {
            let r = rc[c] - gc[c];
            loss += l1 * r.abs();
            grad_color.data_mut()[i * 3 + c] = l1 * signum(r);
        }
        let d_gt = frame.depth.data()[i];
        if d_gt > S::zero() {
            let r = render.depth.data()[i] - d_gt;
            loss += wd * r.abs();
            grad_depth.data_mut()[i] = wd * signum(r);
        }
    }
    if lambda_ssim > 0.0 && w >= WINDOW && h >= WINDOW {
        let (ow, oh) = (w + 1 - WINDOW, h + 1 - WINDOW);
        let mut weights = vec![S::zero(); ow * oh];
        let mut n_active = S::zero();
        for y in 0..oh {
            for x in 0..ow {
                if mask.get(x + HALF_WINDOW, y + HALF_WINDOW) {
                    weights[y * ow + x] = -lambda;
                    n_active += S::one();
                }
            }
        }
        let (neg_sum, g) = weighted_ssim_with_grad(&render.color, &frame.color, &weights)?;
        // λ·Σ M(1 − SSIM) = λ·n_active + Σ (−λ M)·SSIM
        loss += lambda * n_active + neg_sum;
        for (a, b) in grad_color.data_mut().iter_mut().zip(g.data()) {
            *a += *b;
        }
    }
    Ok(LossOutput {
        loss,
        grad_color,
        grad_depth,
        active_pixels: active,
    })
}

#[inline]
fn signum<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefineStats {
    pub iterations: usize,
    pub pruned: usize,
    /// Loss of the last refined iteration (on whichever frame was sampled).
    pub last_loss: f64,
}

/// Optimizes every Gaussian parameter on frames sampled from `keyframes`
/// and `current`. Poses are never modified.
pub fn refine<S: Scalar, R: Rng + ?Sized>(
    map: &mut GaussianMap<S>,
    keyframes: &[Keyframe<S>],
    current: &Keyframe<S>,
    cam: &CameraModel<S>,
    cfg: &RefineConfig,
    scene_scale: f64,
    rng: &mut R,
) -> Result<RefineStats> {
    cfg.validate()?;
    let mut stats = RefineStats::default();
    if cfg.iterations == 0 || map.is_empty() {
        return Ok(stats);
    }
    let probs = keyframe_probabilities(keyframes, current, cfg.p_c, cfg.s)?;
    let sampler =
        WeightedIndex::new(&probs).map_err(|e| Error::InvalidArgument(format!("keyframe distribution: {e}")))?;
    let opts = RenderOptions::default();
    let lrs = [
        S::lit(cfg.mu_lr * scene_scale),
        S::lit(cfg.color_lr),
        S::lit(cfg.radius_lr * scene_scale),
        S::lit(cfg.opacity_lr),
    ];
    let group = |i: usize| match i % IsotropicGaussian::<S>::PARAMS {
        0..=2 => lrs[0],
        3..=5 => lrs[1],
        6 => lrs[2],
        _ => lrs[3],
    };
    let n_params = map.len() * IsotropicGaussian::<S>::PARAMS;
    let mut adam = Adam::new(n_params);
    let mut params = vec![S::zero(); n_params];
    let mut grads = vec![S::zero(); n_params];
    for _ in 0..cfg.iterations {
        let pick = sampler.sample(rng);
        let kf = keyframes.get(pick).unwrap_or(current);
        let prep = Prepared::new(map, &kf.pose, cam, &opts)?;
        let out = render_prepared(&prep, &opts);
        let loss = weighted_refinement_loss(&out, &kf.frame, &kf.mask, cfg.lambda_ssim, cfg.depth_weight)?;
        let g = backward_prepared(
            &prep,
            map,
            &kf.pose,
            &opts,
            Upstream {
                color: &loss.grad_color,
                depth: &loss.grad_depth,
            },
        )?;
        for (i, (gs, gg)) in map.gaussians.iter().zip(&g.gaussians).enumerate() {
            let o = i * IsotropicGaussian::<S>::PARAMS;
            params[o..o + 8].copy_from_slice(&gs.to_params());
            grads[o..o + 8].copy_from_slice(&gg.to_params());
        }
        adam.step(&mut params, &grads, group);
        for (i, gs) in map.gaussians.iter_mut().enumerate() {
            let o = i * IsotropicGaussian::<S>::PARAMS;
            gs.set_params(&params[o..o + 8]);
            gs.clamp_to_valid();
        }
        stats.iterations += 1;
        stats.last_loss = loss.loss.as_f64();
    }
    if cfg.prune_opacity > 0.0 {
        let before = map.len();
        let floor = S::lit(cfg.prune_opacity);
        map.gaussians.retain(|g| g.opacity >= floor);
        stats.pruned = before - map.len();
    }
    Ok(stats)
}
