//! Dataset ingestion, the synthetic sequence generator and evaluation
//! metrics.

mod dataset;
mod metrics;
mod report;
mod synthetic;

pub use dataset::{
    color_path, depth_path, encode_png, load_dataset, max_encodable_depth, read_intrinsics, read_trajectory,
    save_dataset, save_png, to_rgb8, write_intrinsics, write_trajectory, Dataset, DatasetReader, GT_POSES_FILE,
    INTRINSICS_FILE,
};
pub use metrics::{align_rigid, ate, depth_rmse, masked_psnr, psnr, psnr_from_mse};
pub use report::{evaluate, MetricsReport};
pub use synthetic::{generate_synthetic, SyntheticScene, SyntheticSpec, SyntheticView};

/// Structural similarity, shared with the refinement loss.
pub use crate::refiner::ssim::ssim;
