mod common;

use common::*;
use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use tissuesplat::evalio::{
    align_rigid, ate, depth_path, depth_rmse, generate_synthetic, load_dataset, masked_psnr, psnr, save_dataset,
    write_intrinsics, Dataset, SyntheticScene, SyntheticSpec, INTRINSICS_FILE,
};
use tissuesplat::tracker::brightness_mask;
use tissuesplat::{CameraModel, Error, Image, Mask, Pose, RgbdFrame};

fn small_dataset(frames: usize) -> Dataset<f64> {
    let mut r = rng(21);
    let cam = CameraModel::new(20.0, 21.0, 7.5, 5.5, 16, 12).unwrap();
    let frames = (0..frames)
        .map(|i| {
            let color = Image::from_fn(16, 12, 3, |_, _, _| r.random_range(0.0..1.0));
            let depth = Image::from_fn(
                16,
                12,
                1,
                |x, _, _| if x == 0 { 0.0 } else { r.random_range(0.01..0.5) },
            );
            RgbdFrame::new(color, depth, i as u32)
                .unwrap()
                .with_gt_pose(random_pose(&mut r, 0.3, 0.1))
        })
        .collect();
    Dataset {
        camera: cam,
        depth_scale: 100_000.0,
        frames,
    }
}

#[test]
fn dataset_round_trip_within_quantization() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(3);
    save_dataset(tmp.path(), &data).unwrap();
    let back = load_dataset::<f64>(tmp.path()).unwrap();
    assert_eq!(back.camera, data.camera);
    assert_eq!(back.depth_scale, data.depth_scale);
    assert_eq!(back.len(), 3);
    for (a, b) in data.frames.iter().zip(&back.frames) {
        assert_eq!(a.index, b.index);
        for (x, y) in a.color.data().iter().zip(b.color.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
        for (x, y) in a.depth.data().iter().zip(b.depth.data()) {
            assert!((x - y).abs() <= 0.5 / 100_000.0 + 1e-12);
        }
        let (pa, pb) = (a.gt_pose.unwrap(), b.gt_pose.unwrap());
        assert!(rotation_error_deg(&pa, &pb) < 1e-6);
        assert!(translation_error(&pa, &pb) < 1e-9);
    }
}

#[test]
fn depth_scale_converts_raw_units_to_meters() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cam = CameraModel::new(4.0, 4.0, 1.5, 1.5, 4, 4).unwrap();
    write_intrinsics(&dir.join(INTRINSICS_FILE), &cam, 1000.0).unwrap();
    std::fs::create_dir_all(dir.join("color")).unwrap();
    std::fs::create_dir_all(dir.join("depth")).unwrap();
    ImageBuffer::<Rgb<u8>, _>::from_pixel(4, 4, Rgb([128, 64, 32]))
        .save(dir.join("color/000000.png"))
        .unwrap();
    let mut depth = ImageBuffer::<Luma<u16>, _>::from_pixel(4, 4, Luma([2500]));
    depth.put_pixel(0, 0, Luma([0]));
    depth.save(depth_path(dir, 0)).unwrap();
    let data = load_dataset::<f64>(dir).unwrap();
    let f = &data.frames[0];
    assert_eq!(f.depth.get(1, 1, 0), 2.5);
    assert_eq!(f.depth.get(0, 0, 0), 0.0);
    assert!(!f.depth_valid(0));
    assert!((f.color.get(0, 0, 0) - 128.0 / 255.0).abs() < 1e-12);
    assert!(f.gt_pose.is_none());
}

#[test]
fn malformed_datasets_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(matches!(load_dataset::<f64>(dir), Err(Error::File { .. })));

    save_dataset(dir, &small_dataset(2)).unwrap();
    // Depth stored at the wrong bit depth.
    ImageBuffer::<Luma<u8>, _>::from_pixel(16, 12, Luma([9]))
        .save(depth_path(dir, 1))
        .unwrap();
    assert!(load_dataset::<f64>(dir).is_err());
    // Depth of the wrong size.
    ImageBuffer::<Luma<u16>, _>::from_pixel(8, 12, Luma([9]))
        .save(depth_path(dir, 1))
        .unwrap();
    assert!(load_dataset::<f64>(dir).is_err());
    // Missing depth file.
    std::fs::remove_file(depth_path(dir, 1)).unwrap();
    assert!(load_dataset::<f64>(dir).is_err());

    let other = tempfile::tempdir().unwrap();
    save_dataset(other.path(), &small_dataset(1)).unwrap();
    std::fs::write(other.path().join(INTRINSICS_FILE), "20 21 7.5\n").unwrap();
    assert!(load_dataset::<f64>(other.path()).is_err());
    std::fs::write(other.path().join(INTRINSICS_FILE), "20 21 7.5 5.5 16 12 -1\n").unwrap();
    assert!(load_dataset::<f64>(other.path()).is_err());
}

/// Ray/cylinder intersection written against nalgebra.
fn cylinder_depth(pose: &Pose<f64>, cam: &CameraModel<f64>, radius: f64, u: f64, v: f64) -> Option<f64> {
    let m = pose_matrix(pose);
    let rot: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let o = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    let d = rot * Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    // |o_xy + s d_xy|² = r², largest root.
    let a = d.x * d.x + d.y * d.y;
    let b = 2.0 * (o.x * d.x + o.y * d.y);
    let c = o.x * o.x + o.y * o.y - radius * radius;
    let disc = b * b - 4.0 * a * c;
    (a > 0.0 && disc >= 0.0)
        .then(|| (-b + disc.sqrt()) / (2.0 * a))
        .filter(|s| *s > 0.0)
}

/// First sign change of the folded-wall implicit function found by fine
/// marching plus bisection.
fn folded_depth(scene: &SyntheticScene, pose: &Pose<f64>, cam: &CameraModel<f64>, u: f64, v: f64) -> Option<f64> {
    let m = pose_matrix(pose);
    let rot: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let o = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    let d = rot * Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    let g = |s: f64| {
        let p = o + d * s;
        p.xy().norm() - scene.radius_at(p.z)
    };
    let step = 1e-5;
    let mut s = 0.0;
    while s < 1.0 {
        if g(s + step) >= 0.0 {
            let (mut lo, mut hi) = (s, s + step);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if g(mid) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        s += step;
    }
    None
}

#[test]
fn synthetic_depth_matches_ray_cast_oracle() {
    let spec = SyntheticSpec {
        frames: 30,
        width: 20,
        height: 16,
        focal: 10.0,
        max_depth: 0.6,
        ..Default::default()
    };
    let scene = SyntheticScene::new(spec.clone()).unwrap();
    let cam = scene.camera();
    for t in [0.0, 7.0, 29.0] {
        let pose = scene.pose_at(t);
        let view = scene.render(&pose, &cam);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let expect = cylinder_depth(&pose, &cam, spec.tube_radius, x as f64, y as f64)
                    .filter(|s| *s <= 0.6)
                    .unwrap_or(0.0);
                let got = view.depth.get(x, y, 0);
                assert!((got - expect).abs() < 1e-5, "t {t} ({x},{y}): {got} vs {expect}");
            }
        }
    }

    let folded = SyntheticScene::new(SyntheticSpec {
        fold_amplitude: 0.15,
        ..spec
    })
    .unwrap();
    let pose = folded.pose_at(3.0);
    for (x, y) in [(0, 0), (19, 15), (4, 12), (15, 3), (10, 2), (2, 8)] {
        let got = folded.ray_depth(&pose, &cam, x as f64, y as f64).unwrap();
        let expect = folded_depth(&folded, &pose, &cam, x as f64, y as f64).unwrap();
        assert!((got - expect).abs() < 1e-5, "({x},{y}): {got} vs {expect}");
    }
}

#[test]
fn static_sequence_repeats_its_frame() {
    let spec = SyntheticSpec {
        frames: 2,
        width: 24,
        height: 18,
        focal: 12.0,
        ..Default::default()
    }
    .static_camera();
    let data = SyntheticScene::new(spec).unwrap().dataset().unwrap();
    assert_eq!(data.frames[0].color, data.frames[1].color);
    assert_eq!(data.frames[0].depth, data.frames[1].depth);
    assert_eq!(data.frames[0].gt_pose, data.frames[1].gt_pose);
}

#[test]
fn synthetic_sequence_exercises_the_prefilter() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        frames: 2,
        width: 32,
        height: 24,
        focal: 16.0,
        ..Default::default()
    };
    let data = generate_synthetic(&spec, tmp.path()).unwrap();
    let frame = &data.frames[0];
    let bright = brightness_mask(&frame.color, 0.1);
    let rejected = frame.color.pixel_count() - bright.count();
    assert!(rejected > 0, "the dark far field should fail the brightness test");
    assert!(bright.count() > frame.color.pixel_count() / 2);
    assert_eq!(load_dataset::<f64>(tmp.path()).unwrap().len(), 2);
    assert!(SyntheticScene::new(SyntheticSpec { frames: 0, ..spec }).is_err());
}

fn random_rotation(r: &mut impl Rng) -> Matrix3<f64> {
    let axis = Vector3::new(
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
    );
    Rotation3::from_scaled_axis(axis.normalize() * r.random_range(0.0..3.0)).into_inner()
}

fn centered(p: Vector3<f64>) -> Pose<f64> {
    Pose::new(tissuesplat::Quat::identity(), tissuesplat::Vec3::new(p.x, p.y, p.z))
}

#[test]
fn ate_is_gauge_invariant() {
    let mut r = rng(31);
    let gt: Vec<_> = (0..50).map(|_| random_pose(&mut r, 1.0, 0.2)).collect();
    let rot = random_rotation(&mut r);
    let shift = Vector3::new(0.3, -1.0, 2.0);
    let moved: Vec<_> = gt
        .iter()
        .map(|p| {
            let c = p.center();
            centered(rot * Vector3::new(c.x, c.y, c.z) + shift)
        })
        .collect();
    assert!(ate(&moved, &gt).unwrap() < 1e-9);
    assert!(ate(&gt, &gt).unwrap() < 1e-12);

    let src: Vec<_> = moved
        .iter()
        .map(|p| Vector3::new(p.translation.x, p.translation.y, p.translation.z))
        .collect();
    let dst: Vec<_> = gt
        .iter()
        .map(|p| Vector3::new(p.translation.x, p.translation.y, p.translation.z))
        .collect();
    let (r_est, _) = align_rigid(&src, &dst).unwrap();
    assert!((r_est * rot - Matrix3::identity()).norm() < 1e-9);
    assert!((r_est.determinant() - 1.0).abs() < 1e-9);
}

#[test]
fn ate_of_isotropic_noise_matches_its_rms() {
    let mut r = rng(32);
    let sigma = 0.01;
    let noise = Normal::new(0.0, sigma).unwrap();
    let n = 4000;
    let gt: Vec<_> = (0..n).map(|_| random_pose(&mut r, 1.0, 1.0)).collect();
    let est: Vec<_> = gt
        .iter()
        .map(|p| {
            let c = p.center();
            centered(Vector3::new(
                c.x + noise.sample(&mut r),
                c.y + noise.sample(&mut r),
                c.z + noise.sample(&mut r),
            ))
        })
        .collect();
    let expect = sigma * 3f64.sqrt();
    let got = ate(&est, &gt).unwrap();
    assert!((got - expect).abs() < 0.03 * expect, "{got} vs {expect}");
    assert!(matches!(ate(&est[..3], &gt[..4]), Err(Error::LengthMismatch(3, 4))));
}

#[test]
fn image_metrics_match_loop_oracles() {
    let mut r = rng(33);
    let a: Image<f64> = Image::from_fn(9, 7, 3, |_, _, _| r.random_range(0.0..1.0));
    let b: Image<f64> = Image::from_fn(9, 7, 3, |_, _, _| r.random_range(0.0..1.0));
    let mut mse = 0.0f64;
    for y in 0..7 {
        for x in 0..9 {
            for c in 0..3 {
                mse += (a.get(x, y, c) - b.get(x, y, c)).powi(2);
            }
        }
    }
    mse /= 9.0 * 7.0 * 3.0;
    assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

    let mask = Mask::from_fn(9, 7, |x, y| x > y);
    let (mut sum, mut n) = (0.0f64, 0);
    for y in 0..7 {
        for x in 0..9 {
            if x > y {
                for c in 0..3 {
                    sum += (a.get(x, y, c) - b.get(x, y, c)).powi(2);
                    n += 1;
                }
            }
        }
    }
    let expect = 10.0 * (n as f64 / sum).log10();
    assert!((masked_psnr(&a, &b, &mask).unwrap() - expect).abs() < 1e-9);

    let da = Image::from_fn(9, 7, 1, |x, y, _| 0.01 * (x + y) as f64);
    let db = Image::from_fn(9, 7, 1, |x, y, _| {
        if x == 3 {
            0.0
        } else {
            0.02 * x as f64 + 0.001 * y as f64
        }
    });
    let (mut sq, mut cnt) = (0.0, 0);
    for y in 0..7 {
        for x in 0..9 {
            let g = db.get(x, y, 0);
            if g > 0.0 && x > y {
                sq += (da.get(x, y, 0) - g).powi(2);
                cnt += 1;
            }
        }
    }
    let expect = (sq / cnt as f64).sqrt();
    assert!((depth_rmse(&da, &db, Some(&mask)).unwrap() - expect).abs() < 1e-12);
    let none = Image::zeros(9, 7, 1);
    assert!(matches!(depth_rmse(&da, &none, None), Err(Error::NoValidPixels)));
}

#[test]
fn psnr_falls_as_noise_grows() {
    let mut r = rng(34);
    let clean = Image::from_fn(32, 32, 3, |_, _, _| r.random_range(0.2..0.8));
    let mut last = f64::INFINITY;
    for sigma in [0.001f64, 0.01, 0.03, 0.1] {
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut noisy = clean.clone();
        for v in noisy.data_mut() {
            *v += noise.sample(&mut r);
        }
        let p = psnr(&noisy, &clean).unwrap();
        assert!(p < last);
        assert!((p - 20.0 * (1.0 / sigma).log10()).abs() < 0.5, "sigma {sigma}: {p}");
        last = p;
    }
}
