//! RGB-D sequence directories.
//!
//! ```text
//! color/000000.png     8-bit RGB
//! depth/000000.png     16-bit gray, meters = value / depth_scale, 0 = invalid
//! intrinsics.txt       fx fy cx cy width height depth_scale
//! gt_poses.txt         optional, lines of `index tx ty tz qx qy qz qw`
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::Image;
use crate::scalar::Scalar;
use crate::scene::{CameraModel, RgbdFrame};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const GT_POSES_FILE: &str = "gt_poses.txt";

#[derive(Clone, Debug)]
pub struct Dataset<S> {
    pub camera: CameraModel<S>,
    /// Raw depth units per meter.
    pub depth_scale: f64,
    pub frames: Vec<RgbdFrame<S>>,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Ground-truth poses, if every frame carries one.
    pub fn gt_poses(&self) -> Option<Vec<Pose<S>>> {
        self.frames.iter().map(|f| f.gt_pose).collect()
    }
}

pub fn color_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("color").join(format!("{index:06}.png"))
}

pub fn depth_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("depth").join(format!("{index:06}.png"))
}

/// Parses `fx fy cx cy width height depth_scale` (blank lines and `#`
/// comments ignored).
pub fn read_intrinsics<S: Scalar>(path: &Path) -> Result<(CameraModel<S>, f64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let fields: Vec<&str> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .collect();
    if fields.len() != 7 {
        return Err(Error::file(
            path,
            format!(
                "expected 7 fields (fx fy cx cy width height depth_scale), found {}",
                fields.len()
            ),
        ));
    }
    let num = |i: usize| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .map_err(|e| Error::file(path, format!("field {} `{}`: {e}", i + 1, fields[i])))
    };
    let dim = |i: usize| -> Result<usize> {
        fields[i]
            .parse::<usize>()
            .map_err(|e| Error::file(path, format!("field {} `{}`: {e}", i + 1, fields[i])))
    };
    let depth_scale = num(6)?;
    if !(depth_scale.is_finite() && depth_scale > 0.0) {
        return Err(Error::file(path, "depth_scale must be positive"));
    }
    let cam = CameraModel::new(
        S::lit(num(0)?),
        S::lit(num(1)?),
        S::lit(num(2)?),
        S::lit(num(3)?),
        dim(4)?,
        dim(5)?,
    )
    .map_err(|e| Error::file(path, e))?;
    Ok((cam, depth_scale))
}

pub fn write_intrinsics<S: Scalar>(path: &Path, cam: &CameraModel<S>, depth_scale: f64) -> Result<()> {
    let line = format!(
        "{} {} {} {} {} {} {}\n",
        cam.fx.as_f64(),
        cam.fy.as_f64(),
        cam.cx.as_f64(),
        cam.cy.as_f64(),
        cam.width,
        cam.height,
        depth_scale
    );
    fs::write(path, line).map_err(|e| Error::file(path, e))
}

/// Reads `index tx ty tz qx qy qz qw` lines.
pub fn read_trajectory<S: Scalar>(path: &Path) -> Result<Vec<(u32, Pose<S>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let diag = |msg: String| Error::file(path, format!("line {}: {msg}", ln + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 8 {
            return Err(diag(format!("expected 8 fields, found {}", parts.len())));
        }
        let index = parts[0].parse::<u32>().map_err(|e| diag(format!("index: {e}")))?;
        let mut v = [0.0f64; 7];
        for (k, p) in parts[1..].iter().enumerate() {
            v[k] = p.parse().map_err(|e| diag(format!("`{p}`: {e}")))?;
        }
        let pose = Pose::from_tum(v.map(S::lit));
        if pose.rotation.norm() == S::zero() {
            return Err(diag("zero quaternion".into()));
        }
        out.push((index, pose.renormalized()));
    }
    Ok(out)
}

pub fn write_trajectory<S: Scalar>(path: &Path, poses: &[(u32, Pose<S>)]) -> Result<()> {
    let mut text = String::new();
    for (index, pose) in poses {
        let t = pose.to_tum();
        text.push_str(&index.to_string());
        for v in t {
            text.push(' ');
            text.push_str(&format!("{:.9}", v.as_f64()));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn count_pngs(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut n = 0;
    for e in entries {
        let e = e.map_err(|e| Error::file(dir, e))?;
        if e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            n += 1;
        }
    }
    Ok(n)
}

fn read_color<S: Scalar>(path: &Path, cam: &CameraModel<S>) -> Result<Image<S>> {
    let img = image::open(path).map_err(|e| Error::file(path, e))?.into_rgb8();
    if (img.width() as usize, img.height() as usize) != (cam.width, cam.height) {
        return Err(Error::file(
            path,
            format!(
                "size {}x{} differs from intrinsics {}x{}",
                img.width(),
                img.height(),
                cam.width,
                cam.height
            ),
        ));
    }
    let inv = S::lit(1.0 / 255.0);
    let data = img.into_raw().into_iter().map(|v| S::lit(v as f64) * inv).collect();
    Image::from_vec(cam.width, cam.height, 3, data)
}

fn read_depth<S: Scalar>(path: &Path, cam: &CameraModel<S>, depth_scale: f64) -> Result<Image<S>> {
    let img = image::open(path).map_err(|e| Error::file(path, e))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(Error::file(
                path,
                format!("expected 16-bit grayscale depth, found {:?}", other.color()),
            ))
        }
    };
    if (img.width() as usize, img.height() as usize) != (cam.width, cam.height) {
        return Err(Error::file(
            path,
            format!(
                "size {}x{} differs from intrinsics {}x{}",
                img.width(),
                img.height(),
                cam.width,
                cam.height
            ),
        ));
    }
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| S::lit(v as f64 / depth_scale))
        .collect();
    Image::from_vec(cam.width, cam.height, 1, data)
}

/// Lazily reads a sequence directory; intrinsics, frame counts and the
/// ground-truth file are validated up front.
#[derive(Clone, Debug)]
pub struct DatasetReader<S> {
    dir: PathBuf,
    camera: CameraModel<S>,
    depth_scale: f64,
    len: usize,
    gt: Option<Vec<Pose<S>>>,
}

impl<S: Scalar> DatasetReader<S> {
    pub fn open(dir: &Path) -> Result<Self> {
        let intr = dir.join(INTRINSICS_FILE);
        if !intr.is_file() {
            return Err(Error::file(&intr, "missing intrinsics file"));
        }
        let (camera, depth_scale) = read_intrinsics::<S>(&intr)?;
        let len = count_pngs(&dir.join("color"))?;
        let n_depth = count_pngs(&dir.join("depth"))?;
        if len != n_depth {
            return Err(Error::file(
                dir,
                format!("{len} color images but {n_depth} depth images"),
            ));
        }
        for i in 0..len {
            for p in [color_path(dir, i), depth_path(dir, i)] {
                if !p.is_file() {
                    return Err(Error::file(p, "missing frame (indices must be contiguous from 0)"));
                }
            }
        }
        let gt_path = dir.join(GT_POSES_FILE);
        let gt = if gt_path.is_file() {
            let poses = read_trajectory::<S>(&gt_path)?;
            if poses.len() != len {
                return Err(Error::file(&gt_path, format!("{} poses for {len} frames", poses.len())));
            }
            for (i, (idx, _)) in poses.iter().enumerate() {
                if *idx as usize != i {
                    return Err(Error::file(&gt_path, format!("entry {i} has index {idx}")));
                }
            }
            Some(poses.into_iter().map(|(_, p)| p).collect())
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            camera,
            depth_scale,
            len,
            gt,
        })
    }

    pub fn camera(&self) -> &CameraModel<S> {
        &self.camera
    }

    pub fn depth_scale(&self) -> f64 {
        self.depth_scale
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn gt_poses(&self) -> Option<&[Pose<S>]> {
        self.gt.as_deref()
    }

    pub fn frame(&self, i: usize) -> Result<RgbdFrame<S>> {
        if i >= self.len {
            return Err(Error::InvalidArgument(format!(
                "frame {i} out of range ({} frames)",
                self.len
            )));
        }
        let color = read_color(&color_path(&self.dir, i), &self.camera)?;
        let depth = read_depth(&depth_path(&self.dir, i), &self.camera, self.depth_scale)?;
        let frame = RgbdFrame::new(color, depth, i as u32)?;
        Ok(match &self.gt {
            Some(gt) => frame.with_gt_pose(gt[i]),
            None => frame,
        })
    }

    /// Frames in order, decoded on a background thread at most `ahead`
    /// frames in advance.
    pub fn prefetch(&self, ahead: usize) -> impl Iterator<Item = Result<RgbdFrame<S>>> {
        let (tx, rx) = mpsc::sync_channel(ahead.max(1));
        let reader = self.clone();
        thread::spawn(move || {
            for i in 0..reader.len {
                let frame = reader.frame(i);
                let failed = frame.is_err();
                if tx.send(frame).is_err() || failed {
                    break;
                }
            }
        });
        rx.into_iter()
    }
}

/// Loads every frame of a sequence directory in index order.
pub fn load_dataset<S: Scalar>(dir: &Path) -> Result<Dataset<S>> {
    let reader = DatasetReader::<S>::open(dir)?;
    let frames = (0..reader.len()).map(|i| reader.frame(i)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        camera: reader.camera,
        depth_scale: reader.depth_scale,
        frames,
    })
}

/// Largest depth (meters) representable with `depth_scale`.
pub fn max_encodable_depth(depth_scale: f64) -> f64 {
    u16::MAX as f64 / depth_scale
}

fn encode_depth(d: f64, depth_scale: f64) -> u16 {
    if !(d > 0.0) {
        return 0;
    }
    let raw = (d * depth_scale).round();
    if raw > u16::MAX as f64 {
        0
    } else {
        raw as u16
    }
}

/// Writes a sequence in the layout read by [`load_dataset`]. Colors are
/// quantized to 8 bits, depth to `1 / depth_scale` meters; depths beyond
/// the 16-bit range are stored as invalid.
pub fn save_dataset<S: Scalar>(dir: &Path, dataset: &Dataset<S>) -> Result<()> {
    fs::create_dir_all(dir.join("color")).map_err(|e| Error::file(dir, e))?;
    fs::create_dir_all(dir.join("depth")).map_err(|e| Error::file(dir, e))?;
    write_intrinsics(&dir.join(INTRINSICS_FILE), &dataset.camera, dataset.depth_scale)?;
    let (w, h) = (dataset.camera.width as u32, dataset.camera.height as u32);
    for (i, f) in dataset.frames.iter().enumerate() {
        if (f.width(), f.height()) != (dataset.camera.width, dataset.camera.height) {
            return Err(Error::Shape(format!("frame {i} does not match the camera")));
        }
        let rgb = to_rgb8(&f.color);
        let cp = color_path(dir, i);
        ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, rgb)
            .expect("buffer size matches")
            .save(&cp)
            .map_err(|e| Error::file(&cp, e))?;
        let raw: Vec<u16> = f
            .depth
            .data()
            .iter()
            .map(|d| encode_depth(d.as_f64(), dataset.depth_scale))
            .collect();
        let dp = depth_path(dir, i);
        ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
            .expect("buffer size matches")
            .save(&dp)
            .map_err(|e| Error::file(&dp, e))?;
    }
    if let Some(poses) = dataset.gt_poses() {
        let indexed: Vec<_> = poses.into_iter().enumerate().map(|(i, p)| (i as u32, p)).collect();
        write_trajectory(&dir.join(GT_POSES_FILE), &indexed)?;
    }
    Ok(())
}

/// 8-bit quantization of values in `[0, 1]`.
pub fn to_rgb8<S: Scalar>(img: &Image<S>) -> Vec<u8> {
    img.data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Saves an RGB image in `[0, 1]` as 8-bit PNG.
pub fn save_png<S: Scalar>(path: &Path, img: &Image<S>) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Shape("save_png expects 3 channels".into()));
    }
    let rgb = to_rgb8(img);
    ImageBuffer::<Rgb<u8>, _>::from_raw(img.width() as u32, img.height() as u32, rgb)
        .expect("buffer size matches")
        .save(path)
        .map_err(|e| Error::file(path, e))
}

/// Encodes an RGB image as PNG bytes.
pub fn encode_png<S: Scalar>(img: &Image<S>) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::Shape("encode_png expects 3 channels".into()));
    }
    let rgb = to_rgb8(img);
    let mut bytes = Vec::new();
    image::write_buffer_with_format(
        &mut std::io::Cursor::new(&mut bytes),
        &rgb,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(bytes)
}
