//! Single-camera online tracker (DeepSORT-style lifecycle).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::assignment::{self, CostMatrix, Matching, INFEASIBLE};
use crate::error::{Error, Result};
use crate::geometry::{nms, BoundingBox, Detection, Embedding};
use crate::kalman::{KalmanFilter, KalmanState, NoiseProfile, CHI2_95_4DOF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppearanceMetric {
    Euclidean,
    Cosine,
}

impl AppearanceMetric {
    pub fn distance(self, a: &Embedding, b: &Embedding) -> f64 {
        match self {
            AppearanceMetric::Euclidean => a.l2(b),
            AppearanceMetric::Cosine => a.cosine_distance(b),
        }
    }
}

/// How confirmed tracks are matched on appearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingMode {
    /// Age-ordered rounds, most recently updated tracks first.
    Cascade,
    /// One assignment over all confirmed tracks.
    Single,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Detections below this confidence never reach the tracker.
    pub min_confidence: f64,
    /// Suppress overlaps with IoU above this; 1.0 disables suppression.
    pub nms_threshold: f64,
    /// Steps a track survives without a matching detection.
    pub max_age: u32,
    /// Consecutive hits needed to confirm a tentative track.
    pub n_init: u32,
    pub nn_budget: usize,
    pub max_appearance_distance: f64,
    pub max_iou_distance: f64,
    pub appearance_metric: AppearanceMetric,
    pub matching: MatchingMode,
    pub gating_threshold: f64,
    pub noise: NoiseProfile,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            min_confidence: 0.3,
            nms_threshold: 1.0,
            max_age: 70,
            n_init: 3,
            nn_budget: 100,
            max_appearance_distance: 0.2,
            max_iou_distance: 0.7,
            appearance_metric: AppearanceMetric::Euclidean,
            matching: MatchingMode::Cascade,
            gating_threshold: CHI2_95_4DOF,
            noise: NoiseProfile::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("min_confidence", self.min_confidence)?;
        unit("nms_threshold", self.nms_threshold)?;
        unit("max_iou_distance", self.max_iou_distance)?;
        if self.max_age < 1 || self.n_init < 1 || self.nn_budget < 1 {
            return Err(Error::Config(
                "max_age, n_init and nn_budget must be >= 1".into(),
            ));
        }
        if self.max_appearance_distance.is_nan()
            || self.max_appearance_distance < 0.0
            || self.gating_threshold.is_nan()
            || self.gating_threshold <= 0.0
        {
            return Err(Error::Config(
                "max_appearance_distance must be >= 0 and gating_threshold > 0".into(),
            ));
        }
        self.noise.validate()
    }
}

/// Confidence filter followed by per-class NMS.
pub fn filter_detections(
    dets: &[Detection],
    min_confidence: f64,
    nms_threshold: f64,
) -> Vec<Detection> {
    let confident: Vec<Detection> = dets
        .iter()
        .filter(|d| d.confidence >= min_confidence)
        .cloned()
        .collect();
    nms(&confident, nms_threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub frame: u64,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub embedding: Option<Embedding>,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub track_id: u64,
    pub status: TrackStatus,
    pub kstate: KalmanState,
    pub gallery: VecDeque<Embedding>,
    pub hits: u32,
    pub age: u32,
    pub time_since_update: u32,
    pub history: Vec<HistoryEntry>,
    ever_confirmed: bool,
}

impl Track {
    /// Current box estimate from the filter.
    pub fn bbox(&self) -> BoundingBox {
        self.kstate.to_bbox()
    }

    pub fn is_confirmed(&self) -> bool {
        self.status == TrackStatus::Confirmed
    }

    pub fn last(&self) -> Option<&HistoryEntry> {
        self.history.last()
    }

    fn push_gallery(&mut self, e: Embedding, budget: usize) {
        self.gallery.push_back(e);
        while self.gallery.len() > budget {
            self.gallery.pop_front();
        }
    }
}

/// A finished (or end-of-stream) confirmed track, ready for association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub camera_id: u32,
    pub track_id: u64,
    pub frames: Vec<u64>,
    pub boxes: Vec<BoundingBox>,
    pub confidences: Vec<f64>,
    /// Per-frame embeddings; empty when the input carried none.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embeddings: Vec<Embedding>,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn mean_confidence(&self) -> f64 {
        if self.confidences.is_empty() {
            return 0.0;
        }
        self.confidences.iter().sum::<f64>() / self.confidences.len() as f64
    }

    pub fn key(&self) -> (u32, u64) {
        (self.camera_id, self.track_id)
    }

    fn from_track(camera_id: u32, t: &Track) -> Self {
        let all_embedded = t.history.iter().all(|h| h.embedding.is_some());
        Tracklet {
            camera_id,
            track_id: t.track_id,
            frames: t.history.iter().map(|h| h.frame).collect(),
            boxes: t.history.iter().map(|h| h.bbox).collect(),
            confidences: t.history.iter().map(|h| h.confidence).collect(),
            embeddings: if all_embedded {
                t.history
                    .iter()
                    .filter_map(|h| h.embedding.clone())
                    .collect()
            } else {
                Vec::new()
            },
        }
    }
}

fn nn_distance(gallery: &VecDeque<Embedding>, e: &Embedding, metric: AppearanceMetric) -> f64 {
    match metric {
        // Compare squared distances and take one square root at the end.
        AppearanceMetric::Euclidean => gallery
            .iter()
            .map(|g| g.squared_l2(e))
            .fold(f64::INFINITY, f64::min)
            .sqrt(),
        AppearanceMetric::Cosine => gallery
            .iter()
            .map(|g| metric.distance(g, e))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Nearest-neighbour appearance cost: entry `(i, j)` is the smallest distance
/// between any gallery embedding of track `i` and the embedding of detection `j`.
///
/// Fails with [`Error::MissingEmbeddings`] when a detection has no embedding
/// or a track has an empty gallery; callers fall back to IoU matching.
pub fn appearance_cost(
    tracks: &[&Track],
    dets: &[&Detection],
    metric: AppearanceMetric,
) -> Result<CostMatrix> {
    if let Some(t) = tracks.iter().find(|t| t.gallery.is_empty()) {
        return Err(Error::MissingEmbeddings(format!(
            "track {} has an empty gallery",
            t.track_id
        )));
    }
    let embs: Vec<&Embedding> = dets
        .iter()
        .map(|d| {
            d.embedding.as_ref().ok_or_else(|| {
                Error::MissingEmbeddings(format!("detection on frame {} has no embedding", d.frame))
            })
        })
        .collect::<Result<_>>()?;
    Ok(CostMatrix::from_fn(tracks.len(), dets.len(), |i, j| {
        nn_distance(&tracks[i].gallery, embs[j], metric)
    }))
}

/// Tracker state for one camera.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    kf: KalmanFilter,
    tracks: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            kf: KalmanFilter::new(cfg.noise)?,
            cfg,
            tracks: Vec::new(),
            finished: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live (not deleted) tracks.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Advance one step. `dets` must already be confidence- and NMS-filtered
    /// (see [`filter_detections`]). Returns the confirmed tracks updated on
    /// this frame.
    pub fn step(&mut self, frame: u64, dets: &[Detection]) -> Result<Vec<&Track>> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::Domain(format!(
                    "frame {frame} does not follow frame {last}"
                )));
            }
        }
        self.last_frame = Some(frame);

        for t in &mut self.tracks {
            t.kstate = self.kf.predict(&t.kstate);
            t.age += 1;
            t.time_since_update += 1;
        }

        let matching = self.associate(dets)?;

        for &(ti, di) in &matching.pairs {
            let d = &dets[di];
            let t = &mut self.tracks[ti];
            t.kstate = self.kf.update(&t.kstate, d.bbox.to_xyah()?)?;
            if let Some(e) = &d.embedding {
                t.push_gallery(e.clone(), self.cfg.nn_budget);
            }
            t.history.push(HistoryEntry {
                frame,
                bbox: d.bbox,
                confidence: d.confidence,
                embedding: d.embedding.clone(),
            });
            t.hits += 1;
            t.time_since_update = 0;
            if t.status == TrackStatus::Tentative && t.hits >= self.cfg.n_init {
                t.status = TrackStatus::Confirmed;
                t.ever_confirmed = true;
            }
        }

        for &ti in &matching.unmatched_rows {
            let t = &mut self.tracks[ti];
            if t.status == TrackStatus::Tentative || t.time_since_update > self.cfg.max_age {
                t.status = TrackStatus::Deleted;
            }
        }

        for &di in &matching.unmatched_cols {
            self.spawn(frame, &dets[di])?;
        }

        let (deleted, live): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.tracks)
            .into_iter()
            .partition(|t| t.status == TrackStatus::Deleted);
        self.tracks = live;
        self.finished
            .extend(deleted.into_iter().filter(|t| t.ever_confirmed));

        Ok(self
            .tracks
            .iter()
            .filter(|t| t.is_confirmed() && t.time_since_update == 0)
            .collect())
    }

    fn associate(&self, dets: &[Detection]) -> Result<Matching> {
        let all_tracks: Vec<usize> = (0..self.tracks.len()).collect();
        let confirmed: Vec<usize> = all_tracks
            .iter()
            .copied()
            .filter(|&i| self.tracks[i].is_confirmed())
            .collect();
        let unconfirmed: Vec<usize> = all_tracks
            .iter()
            .copied()
            .filter(|&i| !self.tracks[i].is_confirmed())
            .collect();
        let with_embedding: Vec<usize> = (0..dets.len())
            .filter(|&j| dets[j].embedding.is_some())
            .collect();
        let without_embedding: Vec<usize> = (0..dets.len())
            .filter(|&j| dets[j].embedding.is_none())
            .collect();

        let measurements = dets
            .iter()
            .map(|d| d.bbox.to_xyah())
            .collect::<Result<Vec<_>>>()?;

        // Appearance stage on confirmed tracks, Mahalanobis distance as a hard gate.
        let appearance_stage = !with_embedding.is_empty() && !confirmed.is_empty();
        let mut gate_error = None;
        let stage_a = if appearance_stage {
            let cost_fn = |ts: &[usize], ds: &[usize]| {
                let zs: Vec<_> = ds.iter().map(|&j| measurements[j]).collect();
                CostMatrix::from_fn_rows(ts.len(), ds.len(), |r| {
                    let track = &self.tracks[ts[r]];
                    let gates = match self.kf.gating_distance(&track.kstate, &zs) {
                        Ok(g) => g,
                        Err(e) => {
                            gate_error.get_or_insert(e);
                            vec![f64::INFINITY; zs.len()]
                        }
                    };
                    ds.iter()
                        .zip(&gates)
                        .map(|(&j, &g)| {
                            if g > self.cfg.gating_threshold || track.gallery.is_empty() {
                                INFEASIBLE
                            } else {
                                let e = dets[j].embedding.as_ref().expect("filtered on embedding");
                                nn_distance(&track.gallery, e, self.cfg.appearance_metric)
                            }
                        })
                        .collect()
                })
            };
            let tsu: Vec<u32> = self.tracks.iter().map(|t| t.time_since_update).collect();
            let thr = self.cfg.max_appearance_distance;
            match self.cfg.matching {
                MatchingMode::Cascade => assignment::matching_cascade(
                    &tsu,
                    &confirmed,
                    &with_embedding,
                    self.cfg.max_age,
                    thr,
                    cost_fn,
                ),
                MatchingMode::Single => {
                    assignment::min_cost_matching(&confirmed, &with_embedding, thr, cost_fn)
                }
            }
        } else {
            Matching {
                pairs: Vec::new(),
                unmatched_rows: confirmed.clone(),
                unmatched_cols: with_embedding.clone(),
            }
        };
        if let Some(e) = gate_error {
            return Err(e);
        }

        // IoU stage: tentative tracks plus confirmed tracks missed for exactly
        // one step. Without any appearance stage every track competes.
        let mut iou_tracks = unconfirmed;
        let mut left_unmatched = Vec::new();
        for &ti in &stage_a.unmatched_rows {
            if !appearance_stage || self.tracks[ti].time_since_update == 1 {
                iou_tracks.push(ti);
            } else {
                left_unmatched.push(ti);
            }
        }
        iou_tracks.sort_unstable();
        let mut iou_dets = stage_a.unmatched_cols.clone();
        iou_dets.extend(without_embedding);
        iou_dets.sort_unstable();

        let track_boxes: Vec<BoundingBox> = self.tracks.iter().map(Track::bbox).collect();
        let det_boxes: Vec<BoundingBox> = dets.iter().map(|d| d.bbox).collect();
        let stage_b = assignment::iou_matching(
            &track_boxes,
            &det_boxes,
            &iou_tracks,
            &iou_dets,
            self.cfg.max_iou_distance,
        );

        let mut pairs = stage_a.pairs;
        pairs.extend(stage_b.pairs);
        let mut unmatched_rows = left_unmatched;
        unmatched_rows.extend(stage_b.unmatched_rows);
        unmatched_rows.sort_unstable();
        Ok(Matching {
            pairs,
            unmatched_rows,
            unmatched_cols: stage_b.unmatched_cols,
        })
    }

    fn spawn(&mut self, frame: u64, d: &Detection) -> Result<()> {
        let kstate = self.kf.initiate(d.bbox.to_xyah()?)?;
        let mut track = Track {
            track_id: self.next_id,
            status: TrackStatus::Tentative,
            kstate,
            gallery: VecDeque::new(),
            hits: 1,
            age: 1,
            time_since_update: 0,
            history: vec![HistoryEntry {
                frame,
                bbox: d.bbox,
                confidence: d.confidence,
                embedding: d.embedding.clone(),
            }],
            ever_confirmed: false,
        };
        if let Some(e) = &d.embedding {
            track.push_gallery(e.clone(), self.cfg.nn_budget);
        }
        if track.hits >= self.cfg.n_init {
            track.status = TrackStatus::Confirmed;
            track.ever_confirmed = true;
        }
        self.next_id += 1;
        self.tracks.push(track);
        Ok(())
    }

    /// One tracklet per track that ever reached `Confirmed`, ordered by id.
    pub fn export_tracklets(&self, camera_id: u32) -> Vec<Tracklet> {
        let mut out: Vec<Tracklet> = self
            .finished
            .iter()
            .chain(self.tracks.iter().filter(|t| t.ever_confirmed))
            .map(|t| Tracklet::from_track(camera_id, t))
            .collect();
        out.sort_by_key(|t| t.track_id);
        out
    }
}
