//! End-to-end driver: per-camera tracking, association, refinement, counting.
//!
//! Cameras are independent until association, so they can be tracked on
//! separate threads; each worker owns its tracker and the results are
//! gathered in camera order, making the output independent of scheduling.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::association::{associate_multicamera, AssociationConfig, AssociationMethod, Cluster};
use crate::error::{Error, Result};
use crate::geometry::Detection;
use crate::io::config::PipelineConfig;
use crate::io::results::{ClusterRecord, FrameCount, ResultsFile, TimingReport, TrackletRecord};
use crate::metrics::{cluster_confusion, CountReport, TruthObservation};
use crate::refine::refine_clusters;
use crate::sim::{GroundTruth, Scenario};
use crate::tracker::{filter_detections, Tracker, Tracklet};

/// Detections of one camera, in any frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraInput {
    pub camera_id: u32,
    pub detections: Vec<Detection>,
    /// Number of frames in the stream; defaults to one past the last
    /// detection's frame. Frames without detections are still stepped.
    pub frame_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRun {
    pub camera_id: u32,
    pub tracklets: Vec<Tracklet>,
    pub frames_processed: u64,
}

pub fn track_camera(input: &CameraInput, cfg: &PipelineConfig) -> Result<CameraRun> {
    let mut by_frame: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in &input.detections {
        if d.confidence >= cfg.detection_threshold && cfg.decimation.keeps(d.frame) {
            by_frame.entry(d.frame).or_default().push(d.clone());
        }
    }
    let last = input
        .detections
        .iter()
        .map(|d| d.frame + 1)
        .max()
        .unwrap_or(0);
    let frame_count = input.frame_count.unwrap_or(last);
    if frame_count < last {
        return Err(Error::Domain(format!(
            "camera {} has detections on frame {} beyond frame_count {frame_count}",
            input.camera_id,
            last - 1
        )));
    }

    let mut tracker = Tracker::new(cfg.tracker.clone())?;
    let tc = tracker.config().clone();
    let mut frames_processed = 0;
    for frame in (0..frame_count).filter(|&f| cfg.decimation.keeps(f)) {
        let raw = by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        let dets = filter_detections(raw, tc.min_confidence, tc.nms_threshold);
        tracker.step(frame, &dets)?;
        frames_processed += 1;
    }
    Ok(CameraRun {
        camera_id: input.camera_id,
        tracklets: tracker.export_tracklets(input.camera_id),
        frames_processed,
    })
}

/// Track every camera, on up to `threads` worker threads. The result is in
/// input order and does not depend on `threads`.
pub fn track_cameras(
    inputs: &[CameraInput],
    cfg: &PipelineConfig,
    threads: usize,
) -> Result<Vec<CameraRun>> {
    let threads = threads.clamp(1, inputs.len().max(1));
    if threads == 1 {
        return inputs.iter().map(|i| track_camera(i, cfg)).collect();
    }
    let mut slots: Vec<Option<Result<CameraRun>>> = (0..inputs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                s.spawn(move || {
                    (w..inputs.len())
                        .step_by(threads)
                        .map(|i| (i, track_camera(&inputs[i], cfg)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("tracking worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every camera tracked"))
        .collect()
}

fn cluster_methods(
    per_camera: &BTreeMap<u32, Vec<Tracklet>>,
    cfg: &PipelineConfig,
    method: AssociationMethod,
) -> Result<Vec<Cluster>> {
    let acfg = AssociationConfig {
        method,
        ..cfg.association
    };
    let clusters = associate_multicamera(per_camera, &acfg)?;
    if !cfg.refine_enabled {
        return Ok(clusters);
    }
    let all: Vec<Tracklet> = per_camera.values().flatten().cloned().collect();
    Ok(refine_clusters(clusters, &all, &cfg.refine))
}

/// Associate tracklets with each listed method (the first one's clusters are
/// reported), refine if enabled, and assemble a results file.
pub fn associate(
    per_camera: &BTreeMap<u32, Vec<Tracklet>>,
    cfg: &PipelineConfig,
    methods: &[AssociationMethod],
    frames_processed: u64,
) -> Result<ResultsFile> {
    let Some((&primary, rest)) = methods.split_first() else {
        return Err(Error::Config("no association method selected".into()));
    };
    let clusters = cluster_methods(per_camera, cfg, primary)?;
    let mut method_counts = BTreeMap::new();
    method_counts.insert(primary.name().to_string(), clusters.len());
    for &m in rest {
        method_counts.insert(
            m.name().to_string(),
            cluster_methods(per_camera, cfg, m)?.len(),
        );
    }
    Ok(ResultsFile {
        cameras: per_camera.keys().copied().collect(),
        tracklets: per_camera
            .values()
            .flatten()
            .map(TrackletRecord::from_tracklet)
            .collect(),
        unique_count: clusters.len(),
        clusters: clusters
            .iter()
            .map(|c| ClusterRecord {
                global_id: c.global_id,
                members: c.members.clone(),
            })
            .collect(),
        method: primary.name().to_string(),
        method_counts,
        count_report: None,
        timing: FrameCount { frames_processed },
    })
}

/// Tracking plus association for a set of cameras.
pub fn run(
    inputs: &[CameraInput],
    cfg: &PipelineConfig,
    methods: &[AssociationMethod],
    threads: usize,
) -> Result<(ResultsFile, TimingReport)> {
    let start = Instant::now();
    let runs = track_cameras(inputs, cfg, threads)?;
    let frames: u64 = runs.iter().map(|r| r.frames_processed).sum();
    let mut per_camera = BTreeMap::new();
    for r in runs {
        if per_camera.insert(r.camera_id, r.tracklets).is_some() {
            return Err(Error::Domain(format!(
                "camera {} listed twice",
                r.camera_id
            )));
        }
    }
    let results = associate(&per_camera, cfg, methods, frames)?;
    let timing = TimingReport::new(
        frames,
        start.elapsed().as_secs_f64(),
        threads.clamp(1, inputs.len().max(1)),
    );
    Ok((results, timing))
}

pub fn scenario_inputs(s: &Scenario) -> Vec<CameraInput> {
    s.streams
        .iter()
        .map(|st| CameraInput {
            camera_id: st.camera_id,
            detections: st.detections.clone(),
            frame_count: Some(s.config.frames),
        })
        .collect()
}

/// Run a simulated scenario and attach its count report.
pub fn run_scenario(
    s: &Scenario,
    cfg: &PipelineConfig,
    methods: &[AssociationMethod],
    threads: usize,
) -> Result<(ResultsFile, TimingReport)> {
    let (mut results, timing) = run(&scenario_inputs(s), cfg, methods, threads)?;
    results.count_report = Some(evaluate(&[(&results, &s.truth)])?);
    Ok((results, timing))
}

/// Truth observations by camera.
pub fn truth_by_camera(truth: &GroundTruth) -> BTreeMap<u32, Vec<TruthObservation>> {
    truth
        .cameras
        .iter()
        .map(|c| (c.camera_id, c.observations.clone()))
        .collect()
}

/// One count per results/truth pair; confusion counts are summed over pairs.
pub fn evaluate(sets: &[(&ResultsFile, &GroundTruth)]) -> Result<CountReport> {
    let (mut predicted, mut actual) = (Vec::new(), Vec::new());
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (i, (results, truth)) in sets.iter().enumerate() {
        let truth_cams: Vec<u32> = truth.cameras.iter().map(|c| c.camera_id).collect();
        if results.cameras != truth_cams {
            return Err(Error::Domain(format!(
                "set {}: results cover cameras {:?} but truth covers {:?}",
                i + 1,
                results.cameras,
                truth_cams
            )));
        }
        let identities = truth.present_identities();
        let clusters: Vec<Cluster> = results
            .clusters
            .iter()
            .map(ClusterRecord::to_cluster)
            .collect();
        let c = cluster_confusion(
            &clusters,
            &results.tracklets_by_camera(),
            &truth_by_camera(truth),
            &identities,
        );
        tp += c.tp;
        fp += c.fp;
        fn_ += c.fn_;
        predicted.push(results.unique_count as u64);
        actual.push(identities.len() as u64);
    }
    CountReport::new(
        predicted,
        actual,
        crate::metrics::count_confusion(tp, fp, fn_),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate, ScenarioConfig};

    fn scenario(seed: u64, cameras: u32, identities: u32) -> Scenario {
        generate(&ScenarioConfig {
            seed,
            cameras,
            identities,
            frames: 120,
            embedding_dim: 32,
            ..ScenarioConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn single_identity_gives_one_track() {
        let s = scenario(4, 1, 1);
        let cfg = PipelineConfig::default();
        let run = track_camera(&scenario_inputs(&s)[0], &cfg).unwrap();
        assert_eq!(run.tracklets.len(), 1);
        assert_eq!(run.tracklets[0].frames, (0..120).collect::<Vec<_>>());
        assert_eq!(run.frames_processed, 120);
    }

    #[test]
    fn stride_decimates_stream() {
        let s = scenario(4, 1, 1);
        let mut cfg = PipelineConfig::default();
        cfg.decimation.stride = 4;
        let run = track_camera(&scenario_inputs(&s)[0], &cfg).unwrap();
        assert_eq!(run.frames_processed, 30);
        assert_eq!(run.tracklets.len(), 1);
        assert!(run.tracklets[0].frames.iter().all(|f| f % 4 == 0));
    }

    #[test]
    fn two_identities_three_cameras() {
        let s = scenario(9, 3, 2);
        let (r, t) = run_scenario(
            &s,
            &PipelineConfig::default(),
            &[AssociationMethod::Euclidean, AssociationMethod::Voting],
            1,
        )
        .unwrap();
        assert_eq!(r.unique_count, 2);
        assert_eq!(r.method_counts["voting"], 2);
        assert_eq!(t.frames_processed, 360);
        let report = r.count_report.unwrap();
        assert_eq!((report.tp, report.fp, report.fn_), (2, 0, 0));
        assert_eq!(report.l2_error, 0.0);
    }

    #[test]
    fn threads_do_not_change_output() {
        let s = scenario(2, 4, 5);
        let cfg = PipelineConfig::default();
        let m = [AssociationMethod::EuclideanVoting];
        let a = run_scenario(&s, &cfg, &m, 1).unwrap().0.to_json();
        let b = run_scenario(&s, &cfg, &m, 3).unwrap().0.to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input() {
        let input = CameraInput {
            camera_id: 0,
            detections: Vec::new(),
            frame_count: None,
        };
        let (r, _) = run(
            &[input],
            &PipelineConfig::default(),
            &[AssociationMethod::Euclidean],
            1,
        )
        .unwrap();
        assert_eq!(r.unique_count, 0);
        assert!(r.tracklets.is_empty());
    }

    #[test]
    fn camera_mismatch_is_rejected() {
        let s = scenario(1, 2, 2);
        let (r, _) = run_scenario(
            &s,
            &PipelineConfig::default(),
            &[AssociationMethod::Euclidean],
            1,
        )
        .unwrap();
        let other = scenario(1, 3, 2);
        assert!(evaluate(&[(&r, &other.truth)]).is_err());
    }
}
