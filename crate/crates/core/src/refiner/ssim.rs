//! Structural similarity with an 11x11 Gaussian window (σ = 1.5).
//!
//! Only window positions lying fully inside the image are evaluated, so the
//! SSIM map of an `H x W` image is `(H − 10) x (W − 10)`; map entry `(x, y)`
//! belongs to the window centered on pixel `(x + 5, y + 5)`.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;
/// Offset from a map entry to the pixel at its window center.
pub const HALF_WINDOW: usize = WINDOW / 2;

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn window_taps<S: Scalar>() -> [S; WINDOW] {
    let mut taps = [0.0f64; WINDOW];
    for (k, t) in taps.iter_mut().enumerate() {
        let d = k as f64 - HALF_WINDOW as f64;
        *t = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| S::lit(t / sum))
}

/// Valid-mode separable correlation of a single plane.
fn filter_valid<S: Scalar>(src: &[S], w: usize, h: usize, taps: &[S; WINDOW]) -> Vec<S> {
    let ow = w + 1 - WINDOW;
    let oh = h + 1 - WINDOW;
    let mut rows = vec![S::zero(); ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = S::zero();
            for (k, t) in taps.iter().enumerate() {
                acc += *t * line[x + k];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![S::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = S::zero();
            for (k, t) in taps.iter().enumerate() {
                acc += *t * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a map-sized plane back onto the
/// `w x h` image.
fn filter_valid_adjoint<S: Scalar>(grad: &[S], w: usize, h: usize, taps: &[S; WINDOW]) -> Vec<S> {
    let ow = w + 1 - WINDOW;
    let oh = h + 1 - WINDOW;
    let mut rows = vec![S::zero(); ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let g = grad[y * ow + x];
            if g == S::zero() {
                continue;
            }
            for (k, t) in taps.iter().enumerate() {
                rows[(y + k) * ow + x] += *t * g;
            }
        }
    }
    let mut out = vec![S::zero(); w * h];
    for y in 0..h {
        for x in 0..ow {
            let g = rows[y * ow + x];
            if g == S::zero() {
                continue;
            }
            for (k, t) in taps.iter().enumerate() {
                out[y * w + x + k] += *t * g;
            }
        }
    }
    out
}

/// Window statistics of one channel, kept for the backward pass.
struct ChannelStats<S> {
    mu_x: Vec<S>,
    mu_y: Vec<S>,
    /// Per map entry: `(A1, A2, B1, B2, S)`.
    terms: Vec<[S; 5]>,
}

fn channel_stats<S: Scalar>(x: &[S], y: &[S], w: usize, h: usize, taps: &[S; WINDOW]) -> ChannelStats<S> {
    let sq = |a: &[S], b: &[S]| a.iter().zip(b).map(|(p, q)| *p * *q).collect::<Vec<S>>();
    let mu_x = filter_valid(x, w, h, taps);
    let mu_y = filter_valid(y, w, h, taps);
    let e_xx = filter_valid(&sq(x, x), w, h, taps);
    let e_yy = filter_valid(&sq(y, y), w, h, taps);
    let e_xy = filter_valid(&sq(x, y), w, h, taps);
    let (c1, c2, two) = (S::lit(C1), S::lit(C2), S::lit(2.0));
    let terms = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let a1 = two * mx * my + c1;
            let a2 = two * (e_xy[i] - mx * my) + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = (e_xx[i] - mx * mx) + (e_yy[i] - my * my) + c2;
            [a1, a2, b1, b2, a1 * a2 / (b1 * b2)]
        })
        .collect();
    ChannelStats { mu_x, mu_y, terms }
}

fn check_inputs<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape("ssim inputs differ in shape".into()));
    }
    if a.width() < WINDOW || a.height() < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {WINDOW}x{WINDOW} pixels, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

/// Per-position SSIM averaged over channels; `(W − 10) x (H − 10)`.
pub fn ssim_map<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<Image<S>> {
    check_inputs(a, b)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let taps = window_taps::<S>();
    let (ow, oh) = (w + 1 - WINDOW, h + 1 - WINDOW);
    let mut out = vec![S::zero(); ow * oh];
    let inv = S::one() / S::from_usize_lossy(ch);
    for c in 0..ch {
        let stats = channel_stats(a.channel(c).data(), b.channel(c).data(), w, h, &taps);
        for (o, t) in out.iter_mut().zip(&stats.terms) {
            *o += t[4] * inv;
        }
    }
    Image::from_vec(ow, oh, 1, out)
}

/// Mean structural similarity over all window positions and channels.
pub fn ssim<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<S> {
    let map = ssim_map(a, b)?;
    let n = S::from_usize_lossy(map.pixel_count());
    Ok(map.data().iter().copied().sum::<S>() / n)
}

/// `Σ_u weight(u)·SSIM(u)` over map positions, and its gradient with
/// respect to `x`. `weights` is map-sized.
pub fn weighted_ssim_with_grad<S: Scalar>(x: &Image<S>, y: &Image<S>, weights: &[S]) -> Result<(S, Image<S>)> {
    check_inputs(x, y)?;
    let (w, h, ch) = (x.width(), x.height(), x.channels());
    let taps = window_taps::<S>();
    let (ow, oh) = (w + 1 - WINDOW, h + 1 - WINDOW);
    if weights.len() != ow * oh {
        return Err(Error::Shape("ssim weights do not match the map size".into()));
    }
    let inv = S::one() / S::from_usize_lossy(ch);
    let two = S::lit(2.0);
    let mut value = S::zero();
    let mut grad = Image::zeros(w, h, ch);
    for c in 0..ch {
        let xc = x.channel(c);
        let yc = y.channel(c);
        let stats = channel_stats(xc.data(), yc.data(), w, h, &taps);
        let n = ow * oh;
        let mut g_mu = vec![S::zero(); n];
        let mut g_xx = vec![S::zero(); n];
        let mut g_xy = vec![S::zero(); n];
        for i in 0..n {
            let [a1, a2, b1, b2, s] = stats.terms[i];
            let wgt = weights[i] * inv;
            value += wgt * s;
            if wgt == S::zero() {
                continue;
            }
            let (mx, my) = (stats.mu_x[i], stats.mu_y[i]);
            // S = A1·A2 / (B1·B2) in raw moments m_x, E[x²], E[xy].
            g_mu[i] = wgt * s * (two * my / a1 - two * my / a2 - two * mx / b1 + two * mx / b2);
            g_xx[i] = -wgt * s / b2;
            g_xy[i] = wgt * two * s / a2;
        }
        let d_mu = filter_valid_adjoint(&g_mu, w, h, &taps);
        let d_xx = filter_valid_adjoint(&g_xx, w, h, &taps);
        let d_xy = filter_valid_adjoint(&g_xy, w, h, &taps);
        for p in 0..w * h {
            let v = d_mu[p] + two * xc.data()[p] * d_xx[p] + yc.data()[p] * d_xy[p];
            grad.data_mut()[p * ch + c] = v;
        }
    }
    Ok((value, grad))
}
