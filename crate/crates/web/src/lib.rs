//! Browser demo: simulate a scene, track and count it, sweep the association
//! threshold, and draw the Kalman gating region.
//!
//! Every entry point takes and returns JSON strings, so the same functions
//! are exercised natively by the tests and through `wasm-bindgen` in the page.

use std::collections::BTreeMap;

use mcmot::association::AssociationMethod;
use mcmot::geometry::BoundingBox;
use mcmot::io::results::{to_json, ResultsFile};
use mcmot::io::PipelineConfig;
use mcmot::kalman::{KalmanFilter, NoiseProfile, CHI2_95_4DOF};
use mcmot::metrics::CountReport;
use mcmot::pipeline::{self, scenario_inputs};
use mcmot::sim::{self, Scenario, ScenarioConfig};
use mcmot::tracker::Tracklet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub seed: u64,
    pub cameras: u32,
    pub identities: u32,
    pub frames: u64,
    pub embedding_dim: usize,
    pub noise_sigma: f64,
    pub miss_prob: f64,
    pub false_positive_rate: f64,
    pub jitter_sigma: f64,
    pub presence_prob: f64,
    pub tau: f64,
    pub method: String,
    pub max_appearance_distance: f64,
    pub min_track_length: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            seed: 1,
            cameras: 3,
            identities: 8,
            frames: 200,
            embedding_dim: 64,
            noise_sigma: 0.1,
            miss_prob: 0.05,
            false_positive_rate: 0.2,
            jitter_sigma: 1.0,
            presence_prob: 0.7,
            tau: 0.5,
            method: "euclidean".into(),
            max_appearance_distance: 0.4,
            min_track_length: 10,
        }
    }
}

impl SceneParams {
    fn scenario(&self) -> Result<Scenario, String> {
        sim::generate(&ScenarioConfig {
            seed: self.seed,
            cameras: self.cameras,
            identities: self.identities,
            frames: self.frames,
            embedding_dim: self.embedding_dim,
            embedding_noise_sigma: self.noise_sigma,
            miss_prob: self.miss_prob,
            false_positive_rate: self.false_positive_rate,
            jitter_sigma: self.jitter_sigma,
            presence_prob: self.presence_prob,
            ..ScenarioConfig::default()
        })
        .map_err(|e| e.to_string())
    }

    fn pipeline(&self) -> Result<PipelineConfig, String> {
        let mut cfg = PipelineConfig::default();
        cfg.tracker.max_appearance_distance = self.max_appearance_distance;
        cfg.association.threshold = self.tau;
        cfg.association.method = self
            .method
            .parse()
            .map_err(|e: mcmot::Error| e.to_string())?;
        cfg.refine_enabled = self.min_track_length > 0;
        cfg.refine.min_track_length = self.min_track_length;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| format!("invalid parameters: {e}"))
}

fn track(s: &Scenario, cfg: &PipelineConfig) -> Result<BTreeMap<u32, Vec<Tracklet>>, String> {
    let runs = pipeline::track_cameras(&scenario_inputs(s), cfg, 1).map_err(|e| e.to_string())?;
    Ok(runs
        .into_iter()
        .map(|r| (r.camera_id, r.tracklets))
        .collect())
}

/// `[id, x, y, w, h]`
type Labelled = (u64, f64, f64, f64, f64);

#[derive(Serialize)]
struct FrameView {
    truth: Vec<Labelled>,
    /// Global identity of each tracked box; 0 when refined away.
    tracks: Vec<Labelled>,
}

#[derive(Serialize)]
struct CameraView {
    camera_id: u32,
    frames: Vec<FrameView>,
}

#[derive(Serialize)]
struct DemoOutput {
    image_width: f64,
    image_height: f64,
    unique_count: usize,
    truth_count: usize,
    report: CountReport,
    cameras: Vec<CameraView>,
}

fn labelled(id: u64, b: &BoundingBox) -> Labelled {
    (id, b.x, b.y, b.w, b.h)
}

/// Simulate, track, associate and evaluate one scene. Returns per-frame
/// truth and tracked boxes for every camera.
pub fn demo(params_json: &str) -> Result<String, String> {
    let p: SceneParams = parse(params_json)?;
    let s = p.scenario()?;
    let cfg = p.pipeline()?;
    let per_camera = track(&s, &cfg)?;
    let frames: u64 = s.config.frames * s.config.cameras as u64;
    let results: ResultsFile =
        pipeline::associate(&per_camera, &cfg, &[cfg.association.method], frames)
            .map_err(|e| e.to_string())?;
    let report = pipeline::evaluate(&[(&results, &s.truth)]).map_err(|e| e.to_string())?;

    let global: BTreeMap<(u32, u64), u32> = results
        .clusters
        .iter()
        .flat_map(|c| c.members.iter().map(move |&k| (k, c.global_id)))
        .collect();
    let cameras = s
        .truth
        .cameras
        .iter()
        .map(|ct| {
            let mut frames: Vec<FrameView> = (0..s.config.frames)
                .map(|_| FrameView {
                    truth: Vec::new(),
                    tracks: Vec::new(),
                })
                .collect();
            for o in &ct.observations {
                frames[o.frame as usize]
                    .truth
                    .push(labelled(o.identity as u64 + 1, &o.bbox));
            }
            for t in per_camera.get(&ct.camera_id).into_iter().flatten() {
                let gid = global.get(&t.key()).copied().unwrap_or(0) as u64;
                for (&f, b) in t.frames.iter().zip(&t.boxes) {
                    frames[f as usize].tracks.push(labelled(gid, b));
                }
            }
            CameraView {
                camera_id: ct.camera_id,
                frames,
            }
        })
        .collect();
    Ok(to_json(&DemoOutput {
        image_width: s.config.image_width,
        image_height: s.config.image_height,
        unique_count: results.unique_count,
        truth_count: s.truth.present_identities().len(),
        report,
        cameras,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepParams {
    #[serde(default)]
    scene: Option<SceneParams>,
    taus: Vec<f64>,
}

#[derive(Serialize)]
struct SweepOutput {
    truth_count: usize,
    taus: Vec<f64>,
    counts: BTreeMap<&'static str, Vec<usize>>,
}

/// Unique count per association method over a list of thresholds. The scene
/// is tracked once; only association is repeated.
pub fn tau_sweep(params_json: &str) -> Result<String, String> {
    let p: SweepParams = parse(params_json)?;
    let scene = p.scene.unwrap_or_default();
    let s = scene.scenario()?;
    let mut cfg = scene.pipeline()?;
    let per_camera = track(&s, &cfg)?;
    let methods = [
        AssociationMethod::Euclidean,
        AssociationMethod::Voting,
        AssociationMethod::EuclideanVoting,
    ];
    let mut counts: BTreeMap<&'static str, Vec<usize>> = BTreeMap::new();
    for &tau in &p.taus {
        cfg.association.threshold = tau;
        for m in methods {
            let r = pipeline::associate(&per_camera, &cfg, &[m], 0).map_err(|e| e.to_string())?;
            counts.entry(m.name()).or_default().push(r.unique_count);
        }
    }
    Ok(to_json(&SweepOutput {
        truth_count: s.truth.present_identities().len(),
        taus: p.taus,
        counts,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GatingParams {
    /// Box the track is initiated from.
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    /// Per-frame motion during the observed steps.
    vx: f64,
    vy: f64,
    observed_steps: u32,
    /// Frames predicted without a measurement afterwards.
    missed_steps: u32,
    width: f64,
    height: f64,
    cells: usize,
}

impl Default for GatingParams {
    fn default() -> Self {
        GatingParams {
            x: 300.0,
            y: 200.0,
            w: 80.0,
            h: 200.0,
            vx: 4.0,
            vy: 1.0,
            observed_steps: 10,
            missed_steps: 5,
            width: 960.0,
            height: 540.0,
            cells: 64,
        }
    }
}

#[derive(Serialize)]
struct GatingOutput {
    cols: usize,
    rows: usize,
    threshold: f64,
    predicted: (f64, f64, f64, f64),
    /// Squared Mahalanobis distance of a same-size box centred on each cell, row-major.
    values: Vec<f64>,
}

/// Gating distance over a grid of candidate positions around a coasting track.
pub fn gating_field(params_json: &str) -> Result<String, String> {
    let p: GatingParams = parse(params_json)?;
    if p.cells == 0 || p.cells > 256 || !(p.width > 0.0 && p.height > 0.0) {
        return Err("cells must be in 1..=256 and the field must have positive size".into());
    }
    let kf = KalmanFilter::new(NoiseProfile::default()).map_err(|e| e.to_string())?;
    let b0 = BoundingBox::new(p.x, p.y, p.w, p.h);
    let mut s = kf
        .initiate(b0.to_xyah().map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    for k in 1..=p.observed_steps {
        s = kf.predict(&s);
        let b = BoundingBox::new(p.x + p.vx * k as f64, p.y + p.vy * k as f64, p.w, p.h);
        s = kf
            .update(&s, b.to_xyah().expect("positive box"))
            .map_err(|e| e.to_string())?;
    }
    for _ in 0..p.missed_steps {
        s = kf.predict(&s);
    }
    let pred = s.to_bbox();
    let cols = p.cells;
    let rows = ((p.cells as f64 * p.height / p.width).round() as usize).max(1);
    let z0 = pred.to_xyah().map_err(|e| e.to_string())?;
    let zs: Vec<_> = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| mcmot::geometry::Xyah {
                cx: (c as f64 + 0.5) * p.width / cols as f64,
                cy: (r as f64 + 0.5) * p.height / rows as f64,
                ..z0
            })
        })
        .collect();
    let values = kf.gating_distance(&s, &zs).map_err(|e| e.to_string())?;
    Ok(to_json(&GatingOutput {
        cols,
        rows,
        threshold: CHI2_95_4DOF,
        predicted: (pred.x, pred.y, pred.w, pred.h),
        values,
    }))
}

#[cfg(target_arch = "wasm32")]
mod bindings {
    use wasm_bindgen::prelude::*;

    #[wasm_bindgen]
    pub fn demo(params_json: &str) -> Result<String, JsError> {
        super::demo(params_json).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen]
    pub fn tau_sweep(params_json: &str) -> Result<String, JsError> {
        super::tau_sweep(params_json).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen]
    pub fn gating_field(params_json: &str) -> Result<String, JsError> {
        super::gating_field(params_json).map_err(|e| JsError::new(&e))
    }
}
