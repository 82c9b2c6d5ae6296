//! Trajectory and image quality metrics.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::{Image, Mask};
use crate::scalar::Scalar;

/// Least-squares rigid transform (no scale) mapping `src` points onto
/// `dst`: returns `(R, t)` with `dst ≈ R·src + t`.
pub fn align_rigid(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch(src.len(), dst.len()));
    }
    if src.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * v_t;
    Ok((r, mu_d - r * mu_s))
}

/// Absolute trajectory error: RMSE of camera positions after rigidly
/// aligning `estimate` onto `ground_truth`.
pub fn ate<S: Scalar>(estimate: &[Pose<S>], ground_truth: &[Pose<S>]) -> Result<f64> {
    if estimate.len() != ground_truth.len() {
        return Err(Error::LengthMismatch(estimate.len(), ground_truth.len()));
    }
    let to_vec = |p: &Pose<S>| {
        let c = p.center();
        Vector3::new(c.x.as_f64(), c.y.as_f64(), c.z.as_f64())
    };
    let est: Vec<_> = estimate.iter().map(to_vec).collect();
    let gt: Vec<_> = ground_truth.iter().map(to_vec).collect();
    let (r, t) = align_rigid(&est, &gt)?;
    let sq: f64 = est.iter().zip(&gt).map(|(e, g)| (r * e + t - g).norm_squared()).sum();
    Ok((sq / est.len() as f64).sqrt())
}

/// Root mean squared depth error over pixels with valid ground truth
/// (optionally also restricted to `mask`).
pub fn depth_rmse<S: Scalar>(rendered: &Image<S>, gt: &Image<S>, mask: Option<&Mask>) -> Result<f64> {
    if !rendered.same_shape(gt) {
        return Err(Error::Shape("depth images differ in shape".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (r, g)) in rendered.data().iter().zip(gt.data()).enumerate() {
        if *g <= S::zero() || mask.is_some_and(|m| !m.at(i)) {
            continue;
        }
        let e = (*r - *g).as_f64();
        sum += e * e;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok((sum / n as f64).sqrt())
}

/// Peak signal-to-noise ratio for images in `[0, 1]`; identical images give
/// `f64::INFINITY`.
pub fn psnr<S: Scalar>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("psnr inputs differ in shape".into()));
    }
    if a.data().is_empty() {
        return Err(Error::NoValidPixels);
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (*x - *y).as_f64();
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

/// PSNR restricted to masked pixels (all channels).
pub fn masked_psnr<S: Scalar>(a: &Image<S>, b: &Image<S>, mask: &Mask) -> Result<f64> {
    if !a.same_shape(b) || !mask.matches(a) {
        return Err(Error::Shape("psnr inputs differ in shape".into()));
    }
    let ch = a.channels();
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.pixel_count() {
        if !mask.at(i) {
            continue;
        }
        for c in 0..ch {
            let d = (a.data()[i * ch + c] - b.data()[i * ch + c]).as_f64();
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(psnr_from_mse(sum / n as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Quat, Vec3};

    #[test]
    fn identical_trajectories_have_zero_ate() {
        let traj: Vec<Pose<f64>> = (0..5)
            .map(|i| Pose::from_translation(Vec3::new(i as f64, (i * i) as f64, 0.5)))
            .collect();
        assert!(ate(&traj, &traj).unwrap() < 1e-12);
    }

    #[test]
    fn ate_length_mismatch() {
        let a = vec![Pose::<f64>::identity(); 3];
        assert!(matches!(ate(&a, &a[..2]), Err(Error::LengthMismatch(3, 2))));
    }

    #[test]
    fn reflection_is_not_used_for_alignment() {
        // Mirrored planar points cannot be aligned by a proper rotation.
        let src: Vec<_> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -2.0, 0.0]]
            .iter()
            .map(|p| Vector3::new(p[0], p[1], p[2]))
            .collect();
        let (r, _) = align_rigid(&src, &src).unwrap();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        let q = Quat::<f64>::identity();
        assert_eq!(q.w, 1.0);
    }

    #[test]
    fn psnr_closed_form() {
        let a = Image::<f64>::filled(4, 4, 3, 0.5);
        let b = Image::<f64>::filled(4, 4, 3, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn depth_rmse_offset() {
        let gt = Image::<f64>::filled(3, 3, 1, 2.0);
        let r = gt.map(|d| d + 0.003);
        assert!((depth_rmse(&r, &gt, None).unwrap() - 0.003).abs() < 1e-12);
        assert_eq!(depth_rmse(&gt, &gt, None).unwrap(), 0.0);
        let invalid = Image::<f64>::zeros(3, 3, 1);
        assert!(matches!(depth_rmse(&r, &invalid, None), Err(Error::NoValidPixels)));
    }
}
