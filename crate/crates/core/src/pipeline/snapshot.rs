//! Single-writer, many-reader publication of map snapshots and per-frame
//! status records.

use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::scalar::Scalar;
use crate::scene::{CameraModel, GaussianMap};

/// Progress record published once per processed frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusFrame {
    pub frame_index: u32,
    pub map_size: usize,
    /// `tx ty tz qx qy qz qw`.
    pub pose: [f64; 7],
    pub tracking_loss: Option<f64>,
    pub tracking_ms: f64,
    pub mapping_ms: f64,
    pub untrackable: bool,
}

/// Immutable view of the reconstruction at one point in time.
#[derive(Clone, Debug)]
pub struct Snapshot<S> {
    pub frame_index: u32,
    pub map: Arc<GaussianMap<S>>,
    pub pose: Pose<S>,
    pub camera: CameraModel<S>,
}

#[derive(Debug)]
pub struct SnapshotHub<S> {
    latest: RwLock<Arc<Snapshot<S>>>,
    log: Mutex<Vec<StatusFrame>>,
    changed: Condvar,
}

impl<S: Scalar> SnapshotHub<S> {
    pub fn new(initial: Snapshot<S>) -> Arc<Self> {
        Arc::new(Self {
            latest: RwLock::new(Arc::new(initial)),
            log: Mutex::new(Vec::new()),
            changed: Condvar::new(),
        })
    }

    /// Hub for a finished map: one status record, then nothing more.
    pub fn for_saved_map(map: GaussianMap<S>, pose: Pose<S>, camera: CameraModel<S>) -> Arc<Self> {
        let status = StatusFrame {
            frame_index: 0,
            map_size: map.len(),
            pose: pose.to_tum().map(|v| v.as_f64()),
            tracking_loss: None,
            tracking_ms: 0.0,
            mapping_ms: 0.0,
            untrackable: false,
        };
        let hub = Self::new(Snapshot {
            frame_index: 0,
            map: Arc::new(map),
            pose,
            camera,
        });
        hub.log.lock().unwrap().push(status);
        hub
    }

    pub fn latest(&self) -> Arc<Snapshot<S>> {
        self.latest.read().unwrap().clone()
    }

    pub fn publish(&self, snapshot: Snapshot<S>, status: StatusFrame) {
        *self.latest.write().unwrap() = Arc::new(snapshot);
        self.log.lock().unwrap().push(status);
        self.changed.notify_all();
    }

    pub fn status_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    /// Status records from position `cursor` on.
    pub fn status_since(&self, cursor: usize) -> Vec<StatusFrame> {
        let log = self.log.lock().unwrap();
        log.get(cursor..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// Like [`status_since`](Self::status_since) but waits up to `timeout`
    /// for something new.
    pub fn wait_status(&self, cursor: usize, timeout: Duration) -> Vec<StatusFrame> {
        let log = self.log.lock().unwrap();
        let (log, _) = self
            .changed
            .wait_timeout_while(log, timeout, |l| l.len() <= cursor)
            .unwrap();
        log.get(cursor..).map(<[_]>::to_vec).unwrap_or_default()
    }
}
