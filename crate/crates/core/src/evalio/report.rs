use serde::Serialize;

use super::dataset::Dataset;
use super::metrics::{ate, depth_rmse, psnr};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::rasterizer::{render, RenderOptions};
use crate::refiner::ssim::ssim;
use crate::scalar::Scalar;
use crate::scene::GaussianMap;
use crate::tracker::prefilter_mask;

/// Reconstruction quality in the usual table columns. Lengths are reported
/// in millimeters; LPIPS is never computed and serializes as `null`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub frames_evaluated: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub depth_rmse_mm: f64,
    pub ate_mm: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let ate = self.ate_mm.map_or("-".to_string(), |v| format!("{v:.3}"));
        format!(
            "{:>8} {:>8} {:>8} {:>10} {:>8}\n{:>8.2} {:>8.3} {:>8} {:>10.3} {:>8}\n",
            "PSNR", "SSIM", "LPIPS", "RMSE(mm)", "ATE(mm)", self.psnr_db, self.ssim, "n/a", self.depth_rmse_mm, ate
        )
    }
}

/// Renders `map` at every `stride`-th estimated pose and compares against
/// the dataset frames. PSNR and SSIM use whole images (PSNR averaged over
/// frames in dB); depth RMSE is pooled over pixels with valid ground-truth
/// depth that pass the pre-filter. ATE is included when the dataset carries
/// ground-truth poses.
pub fn evaluate<S: Scalar>(
    map: &GaussianMap<S>,
    trajectory: &[Pose<S>],
    dataset: &Dataset<S>,
    stride: usize,
    delta: f64,
) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if trajectory.len() != dataset.len() {
        return Err(Error::LengthMismatch(trajectory.len(), dataset.len()));
    }
    let stride = stride.max(1);
    let opts = RenderOptions::default();
    let (mut psnr_sum, mut ssim_sum, mut sq_sum, mut n_depth, mut n) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for (frame, pose) in dataset.frames.iter().zip(trajectory).step_by(stride) {
        let out = render(map, pose, &dataset.camera, &opts)?;
        psnr_sum += psnr(&out.color, &frame.color)?;
        ssim_sum += ssim(&out.color, &frame.color)?.as_f64();
        let mask = prefilter_mask(frame, delta);
        let valid = mask.count();
        if valid > 0 {
            let r = depth_rmse(&out.depth, &frame.depth, Some(&mask))?;
            sq_sum += r * r * valid as f64;
            n_depth += valid;
        }
        n += 1;
    }
    let ate_mm = match dataset.gt_poses() {
        Some(gt) => Some(ate(trajectory, &gt)? * 1000.0),
        None => None,
    };
    if n_depth == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(MetricsReport {
        frames_evaluated: n,
        psnr_db: psnr_sum / n as f64,
        ssim: ssim_sum / n as f64,
        lpips: None,
        depth_rmse_mm: (sq_sum / n_depth as f64).sqrt() * 1000.0,
        ate_mm,
    })
}
