//! Map initialization and expansion by pixel backprojection.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::Mask;
use crate::rasterizer::RenderOutput;
use crate::scalar::Scalar;
use crate::scene::{CameraModel, GaussianMap, IsotropicGaussian, RgbdFrame};
use crate::tracker::prefilter_mask;

/// Opacity assigned to freshly backprojected Gaussians.
pub const INITIAL_OPACITY: f64 = 0.5;

/// One Gaussian per masked pixel with valid depth: center on the
/// backprojected point, the pixel's color, a radius covering one pixel
/// (`depth / f`) and opacity 0.5.
pub fn backproject<S: Scalar>(
    frame: &RgbdFrame<S>,
    pose: &Pose<S>,
    cam: &CameraModel<S>,
    mask: &Mask,
) -> Result<Vec<IsotropicGaussian<S>>> {
    if !mask.matches(&frame.color) {
        return Err(Error::Shape(format!(
            "mask {}x{} vs frame {}x{}",
            mask.width(),
            mask.height(),
            frame.width(),
            frame.height()
        )));
    }
    if (cam.width, cam.height) != (frame.width(), frame.height()) {
        return Err(Error::Shape("camera and frame resolutions differ".into()));
    }
    let rot = pose.rotation.rotation_matrix();
    let focal = cam.focal();
    let w = frame.width();
    let mut out = Vec::with_capacity(mask.count());
    for y in 0..frame.height() {
        for x in 0..w {
            let i = y * w + x;
            let depth = frame.depth.data()[i];
            if !mask.at(i) || depth <= S::zero() {
                continue;
            }
            let p = cam.backproject(S::from_usize_lossy(x), S::from_usize_lossy(y), depth);
            let c = frame.color.pixel(i);
            out.push(IsotropicGaussian {
                mu: rot.mul_vec(p) + pose.translation,
                color: [c[0], c[1], c[2]],
                radius: depth / focal,
                opacity: S::lit(INITIAL_OPACITY),
                created_at: frame.index,
            });
        }
    }
    Ok(out)
}

/// Builds the first map at the identity pose from every pixel that passes
/// the pre-filter with valid depth.
pub fn initialize_map<S: Scalar>(
    frame: &RgbdFrame<S>,
    cam: &CameraModel<S>,
    delta: f64,
) -> Result<(GaussianMap<S>, Pose<S>)> {
    let pose = Pose::identity();
    let mask = prefilter_mask(frame, delta);
    let gaussians = backproject(frame, &pose, cam, &mask)?;
    if gaussians.is_empty() {
        return Err(Error::EmptyInitialization);
    }
    Ok((GaussianMap::from_gaussians(gaussians), pose))
}

/// Depth margin for the "new geometry in front" test: 1 cm or 2% of the
/// scene scale, whichever is larger.
pub fn depth_margin(scene_scale: f64) -> f64 {
    (0.02 * scene_scale).max(0.01)
}

const VISIBILITY_EPS: f64 = 1e-6;

/// Pixels to add to the map: pre-filter passing, valid depth, and either
/// poorly explained (`V < rho_e`) or observed in front of the rendered
/// surface by more than `margin` (rendered depth normalized by `V`).
pub fn expansion_mask<S: Scalar>(
    frame: &RgbdFrame<S>,
    render: &RenderOutput<S>,
    rho_e: f64,
    prefilter: &Mask,
    margin: f64,
) -> Result<Mask> {
    if !render.color.same_extent(&frame.color) || !prefilter.matches(&frame.color) {
        return Err(Error::Shape("expansion inputs disagree in size".into()));
    }
    let rho = S::lit(rho_e);
    let eps = S::lit(VISIBILITY_EPS);
    let margin = S::lit(margin);
    let w = frame.width();
    Ok(Mask::from_fn(w, frame.height(), |x, y| {
        let i = y * w + x;
        let d = frame.depth.data()[i];
        if !prefilter.at(i) || d <= S::zero() {
            return false;
        }
        let v = render.visibility.data()[i];
        if v < rho {
            return true;
        }
        let surface = render.depth.data()[i] / v.max(eps);
        d < surface - margin
    }))
}

/// Keeps only pixels on a `stride x stride` grid.
pub fn subsample_mask(mask: &Mask, stride: usize) -> Mask {
    if stride <= 1 {
        return mask.clone();
    }
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        x % stride == 0 && y % stride == 0 && mask.get(x, y)
    })
}

/// Appends the backprojection of `mask`; returns how many Gaussians were
/// added. Existing Gaussians are left untouched.
pub fn expand<S: Scalar>(
    map: &mut GaussianMap<S>,
    frame: &RgbdFrame<S>,
    pose: &Pose<S>,
    mask: &Mask,
    cam: &CameraModel<S>,
) -> Result<usize> {
    let added = backproject(frame, pose, cam, mask)?;
    let n = added.len();
    map.extend(added);
    Ok(n)
}
