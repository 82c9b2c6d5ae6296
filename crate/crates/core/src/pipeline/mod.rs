//! The per-frame SLAM loop: track, expand, refine.

mod config;
mod mapio;
mod snapshot;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{Preset, SlamConfig, PRESET_DEPTH_WEIGHT};
pub use mapio::{decode_map, encode_map, read_map, write_map, MAP_MAGIC, MAP_VERSION};
pub use snapshot::{Snapshot, SnapshotHub, StatusFrame};

use crate::error::{Error, Result};
use crate::evalio::{write_trajectory, DatasetReader};
use crate::geometry::{constant_velocity_extrapolate, Pose};
use crate::mapper::{depth_margin, expand, expansion_mask, initialize_map, subsample_mask};
use crate::rasterizer::{render, RenderOptions};
use crate::refiner::{refine, Keyframe};
use crate::scalar::Scalar;
use crate::scene::{CameraModel, GaussianMap, RgbdFrame};
use crate::tracker::{prefilter_mask, track_frame};

pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const MAP_FILE: &str = "map.bin";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameTiming {
    pub index: u32,
    pub tracking_ms: f64,
    pub mapping_ms: f64,
}

/// Everything the loop carries from frame to frame.
#[derive(Debug)]
pub struct SlamState<S> {
    pub map: GaussianMap<S>,
    pub camera: CameraModel<S>,
    /// Frame index and tracked pose of every processed frame.
    pub poses: Vec<(u32, Pose<S>)>,
    pub keyframes: Vec<Keyframe<S>>,
    pub timings: Vec<FrameTiming>,
    /// Frames whose tracking found no usable pixels and fell back to the
    /// constant-velocity pose.
    pub untrackable: Vec<u32>,
    /// Median depth of the first frame.
    pub scene_scale: f64,
    /// Gaussians added per frame.
    pub added: Vec<usize>,
    rng: ChaCha8Rng,
    hub: Option<Arc<SnapshotHub<S>>>,
}

impl<S: Scalar> SlamState<S> {
    pub fn frames_processed(&self) -> usize {
        self.poses.len()
    }

    pub fn trajectory(&self) -> Vec<Pose<S>> {
        self.poses.iter().map(|(_, p)| *p).collect()
    }

    pub fn last_pose(&self) -> Pose<S> {
        self.poses.last().map(|(_, p)| *p).unwrap_or_else(Pose::identity)
    }

    /// Publishes snapshots and status records to `hub` from now on.
    pub fn attach(&mut self, hub: Arc<SnapshotHub<S>>) {
        self.hub = Some(hub);
    }

    pub fn snapshot(&self) -> Snapshot<S> {
        Snapshot {
            frame_index: self.poses.last().map_or(0, |(i, _)| *i),
            map: Arc::new(self.map.clone()),
            pose: self.last_pose(),
            camera: self.camera,
        }
    }

    fn publish(&self, loss: Option<f64>) {
        let Some(hub) = &self.hub else { return };
        let timing = self.timings.last().expect("called after a frame");
        let status = StatusFrame {
            frame_index: timing.index,
            map_size: self.map.len(),
            pose: self.last_pose().to_tum().map(|v| v.as_f64()),
            tracking_loss: loss,
            tracking_ms: timing.tracking_ms,
            mapping_ms: timing.mapping_ms,
            untrackable: self.untrackable.last() == Some(&timing.index),
        };
        hub.publish(self.snapshot(), status);
    }

    pub fn timing_report(&self) -> TimingReport {
        TimingReport::new(&self.timings)
    }
}

/// Mean per-frame costs in the tracking / reconstruction columns, plus
/// the raw per-frame numbers.
#[derive(Clone, Debug, Serialize)]
pub struct TimingReport {
    pub frames: usize,
    pub tracking_ms_per_frame: f64,
    pub mapping_ms_per_frame: f64,
    pub per_frame: Vec<FrameTiming>,
}

impl TimingReport {
    pub fn new(timings: &[FrameTiming]) -> Self {
        // Frame 0 has no tracking step; keep it out of both means.
        let tail = if timings.len() > 1 { &timings[1..] } else { timings };
        let mean = |f: fn(&FrameTiming) -> f64| {
            if tail.is_empty() {
                0.0
            } else {
                tail.iter().map(f).sum::<f64>() / tail.len() as f64
            }
        };
        Self {
            frames: timings.len(),
            tracking_ms_per_frame: mean(|t| t.tracking_ms),
            mapping_ms_per_frame: mean(|t| t.mapping_ms),
            per_frame: timings.to_vec(),
        }
    }

    pub fn to_table(&self) -> String {
        format!(
            "{:>14} {:>20}\n{:>12.1}ms {:>18.1}ms\n",
            "Tracking/frame", "Reconstruction/frame", self.tracking_ms_per_frame, self.mapping_ms_per_frame
        )
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Starts a reconstruction from the first frame: backprojects it at the
/// identity pose, refines on it and makes it the first keyframe.
pub fn initialize<S: Scalar>(frame: RgbdFrame<S>, camera: CameraModel<S>, cfg: &SlamConfig) -> Result<SlamState<S>> {
    cfg.validate()?;
    check_frame(&frame, &camera)?;
    let start = Instant::now();
    let (mut map, pose) = initialize_map(&frame, &camera, cfg.tracking.delta)?;
    let scene_scale = frame.median_depth().map(|d| d.as_f64()).ok_or(Error::NoValidPixels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let added = map.len();
    let kf = Keyframe::new(frame, pose, cfg.refine.delta);
    refine(&mut map, &[], &kf, &camera, &cfg.refine, scene_scale, &mut rng)?;
    let index = kf.index();
    let state = SlamState {
        map,
        camera,
        poses: vec![(index, pose)],
        keyframes: vec![kf],
        timings: vec![FrameTiming {
            index,
            tracking_ms: 0.0,
            mapping_ms: elapsed_ms(start),
        }],
        untrackable: Vec::new(),
        scene_scale,
        added: vec![added],
        rng,
        hub: None,
    };
    Ok(state)
}

fn check_frame<S: Scalar>(frame: &RgbdFrame<S>, camera: &CameraModel<S>) -> Result<()> {
    if (frame.width(), frame.height()) != (camera.width, camera.height) {
        return Err(Error::Shape(format!(
            "frame {} is {}x{}, camera is {}x{}",
            frame.index,
            frame.width(),
            frame.height(),
            camera.width,
            camera.height
        )));
    }
    Ok(())
}

/// Tracks `frame`, expands the map where it is unexplained, refines on the
/// configured cadence and records keyframes, timings and a snapshot.
pub fn process_frame<S: Scalar>(state: &mut SlamState<S>, frame: RgbdFrame<S>, cfg: &SlamConfig) -> Result<()> {
    let (_, prev) = check_next(state, &frame)?;
    let prev_prev = state.poses.len().checked_sub(2).map_or(prev, |i| state.poses[i].1);

    let start = Instant::now();
    let scale = S::lit(state.scene_scale);
    let (pose, loss) = match track_frame(
        &state.map,
        &frame,
        &state.camera,
        &prev,
        &prev_prev,
        &cfg.tracking,
        scale,
    ) {
        Ok(r) => (r.pose, Some(r.loss.as_f64())),
        Err(Error::Untrackable) => {
            state.untrackable.push(frame.index);
            (constant_velocity_extrapolate(&prev, &prev_prev), None)
        }
        Err(e) => return Err(e),
    };
    let tracking_ms = elapsed_ms(start);
    map_frame(state, frame, pose, tracking_ms, loss, cfg)
}

/// Maps `frame` at a known `pose`: the non-tracking half of
/// [`process_frame`], also usable when poses come from elsewhere.
pub fn process_frame_at<S: Scalar>(
    state: &mut SlamState<S>,
    frame: RgbdFrame<S>,
    pose: Pose<S>,
    cfg: &SlamConfig,
) -> Result<()> {
    check_next(state, &frame)?;
    map_frame(state, frame, pose, 0.0, None, cfg)
}

fn check_next<S: Scalar>(state: &SlamState<S>, frame: &RgbdFrame<S>) -> Result<(u32, Pose<S>)> {
    check_frame(frame, &state.camera)?;
    let (last_index, prev) = *state.poses.last().ok_or(Error::EmptyDataset)?;
    if frame.index <= last_index {
        return Err(Error::InvalidArgument(format!(
            "frame index {} does not follow {last_index}",
            frame.index
        )));
    }
    Ok((last_index, prev))
}

fn map_frame<S: Scalar>(
    state: &mut SlamState<S>,
    frame: RgbdFrame<S>,
    pose: Pose<S>,
    tracking_ms: f64,
    loss: Option<f64>,
    cfg: &SlamConfig,
) -> Result<()> {
    let start = Instant::now();
    let position = state.poses.len();
    let rendered = render(&state.map, &pose, &state.camera, &RenderOptions::default())?;
    let prefilter = prefilter_mask(&frame, cfg.tracking.delta);
    let mask = expansion_mask(
        &frame,
        &rendered,
        cfg.rho_e,
        &prefilter,
        depth_margin(state.scene_scale),
    )?;
    let mask = subsample_mask(&mask, cfg.expansion_stride);
    let added = expand(&mut state.map, &frame, &pose, &mask, &state.camera)?;
    let index = frame.index;
    let current = Keyframe::new(frame, pose, cfg.refine.delta);
    if position.is_multiple_of(cfg.refine.refine_interval) {
        refine(
            &mut state.map,
            &state.keyframes,
            &current,
            &state.camera,
            &cfg.refine,
            state.scene_scale,
            &mut state.rng,
        )?;
    }
    if position.is_multiple_of(cfg.refine.keyframe_interval) {
        state.keyframes.push(current);
    }
    let mapping_ms = elapsed_ms(start);

    state.poses.push((index, pose));
    state.added.push(added);
    state.timings.push(FrameTiming {
        index,
        tracking_ms,
        mapping_ms,
    });
    state.publish(loss);
    Ok(())
}

/// Runs the whole loop over `frames`; the first frame initializes the map.
pub fn run<S: Scalar>(
    frames: impl IntoIterator<Item = Result<RgbdFrame<S>>>,
    camera: CameraModel<S>,
    cfg: &SlamConfig,
    hub: Option<Arc<SnapshotHub<S>>>,
) -> Result<SlamState<S>> {
    let mut frames = frames.into_iter();
    let first = frames.next().ok_or(Error::EmptyDataset)??;
    let mut state = initialize(first, camera, cfg)?;
    if let Some(hub) = hub {
        state.attach(hub);
        state.publish(None);
    }
    for frame in frames {
        process_frame(&mut state, frame?, cfg)?;
    }
    Ok(state)
}

/// Runs a dataset directory (frames decoded ahead on a helper thread).
pub fn run_dataset<S: Scalar>(dir: &Path, cfg: &SlamConfig, hub: Option<Arc<SnapshotHub<S>>>) -> Result<SlamState<S>> {
    let reader = DatasetReader::<S>::open(dir)?;
    if reader.is_empty() {
        return Err(Error::EmptyDataset);
    }
    run(reader.prefetch(4), *reader.camera(), cfg, hub)
}

/// Writes the trajectory, map and timing report into `out`.
pub fn write_outputs<S: Scalar>(state: &SlamState<S>, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    write_trajectory(&out.join(TRAJECTORY_FILE), &state.poses)?;
    write_map(&out.join(MAP_FILE), &state.map)?;
    let timing = serde_json::to_string_pretty(&state.timing_report()).expect("timing serializes");
    let path = out.join(TIMING_FILE);
    std::fs::write(&path, timing).map_err(|e| Error::file(&path, e))
}
