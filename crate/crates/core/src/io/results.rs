//! JSON outputs: the results file, its timing sidecar, and scenario truth.
//!
//! Floats are rounded to 9 significant digits before writing, so a file read
//! back and written again is byte-identical. Wall-clock measurements live in
//! a separate [`TimingReport`] so results from identical runs compare equal.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::sig9;
use crate::association::{Cluster, TrackletKey};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::metrics::CountReport;
use crate::sim::GroundTruth;
use crate::tracker::Tracklet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackletRecord {
    pub camera_id: u32,
    pub track_id: u64,
    pub frames: Vec<u64>,
    pub boxes: Vec<BoundingBox>,
    pub mean_confidence: f64,
}

impl TrackletRecord {
    pub fn from_tracklet(t: &Tracklet) -> Self {
        TrackletRecord {
            camera_id: t.camera_id,
            track_id: t.track_id,
            frames: t.frames.clone(),
            boxes: t.boxes.clone(),
            mean_confidence: t.mean_confidence(),
        }
    }

    /// Geometry-only tracklet, enough for evaluation against truth.
    pub fn to_tracklet(&self) -> Tracklet {
        Tracklet {
            camera_id: self.camera_id,
            track_id: self.track_id,
            frames: self.frames.clone(),
            boxes: self.boxes.clone(),
            confidences: vec![self.mean_confidence; self.frames.len()],
            embeddings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterRecord {
    pub global_id: u32,
    /// `[camera_id, track_id]` pairs.
    pub members: Vec<TrackletKey>,
}

impl ClusterRecord {
    /// Clusters rebuilt from a file carry no embeddings.
    pub fn to_cluster(&self) -> Cluster {
        Cluster {
            global_id: self.global_id,
            members: self.members.clone(),
            member_embeddings: vec![Vec::new(); self.members.len()],
            centroid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameCount {
    /// Frames stepped through the trackers, summed over cameras.
    pub frames_processed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsFile {
    pub cameras: Vec<u32>,
    pub tracklets: Vec<TrackletRecord>,
    pub clusters: Vec<ClusterRecord>,
    pub unique_count: usize,
    /// Method that produced `clusters`.
    pub method: String,
    /// Unique counts of every method that was run.
    pub method_counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count_report: Option<CountReport>,
    pub timing: FrameCount,
}

impl ResultsFile {
    pub fn validate(&self) -> Result<()> {
        if self.unique_count != self.clusters.len() {
            return Err(Error::Domain(format!(
                "unique_count {} does not match {} listed clusters",
                self.unique_count,
                self.clusters.len()
            )));
        }
        Ok(())
    }

    pub fn tracklets_by_camera(&self) -> BTreeMap<u32, Vec<Tracklet>> {
        let mut out: BTreeMap<u32, Vec<Tracklet>> =
            self.cameras.iter().map(|&c| (c, Vec::new())).collect();
        for r in &self.tracklets {
            out.entry(r.camera_id).or_default().push(r.to_tracklet());
        }
        out
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn from_json(path: &Path, text: &str) -> Result<Self> {
        let r: ResultsFile = from_json(path, text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(path, &super::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::write_string(path, &self.to_json())
    }
}

/// Wall-clock measurements for one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames_processed: u64,
    pub wall_seconds: f64,
    pub fps: f64,
    pub threads: usize,
}

impl TimingReport {
    pub fn new(frames_processed: u64, wall_seconds: f64, threads: usize) -> Self {
        let fps = if wall_seconds > 0.0 {
            frames_processed as f64 / wall_seconds
        } else {
            0.0
        };
        TimingReport {
            frames_processed,
            wall_seconds,
            fps,
            threads,
        }
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    /// `results.json` gets `results.timing.json`.
    pub fn sidecar_path(results: &Path) -> std::path::PathBuf {
        results.with_extension("timing.json")
    }
}

pub fn truth_to_json(truth: &GroundTruth) -> String {
    to_json(truth)
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    from_json(path, &super::read_to_string(path)?)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = sig9(n.as_f64().expect("f64 number"));
            *n = serde_json::Number::from_f64(x).expect("finite");
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with floats rounded to 9 significant digits and a trailing LF.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("value serializes");
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("json serializes");
    s.push('\n');
    s
}

pub fn from_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::parse(path, e.line() as u64, e.to_string()))
}
