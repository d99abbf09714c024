//! Pipeline configuration and the two named presets.
//!
//! The TOML file is flat: every key is optional and overrides the preset
//! named by `preset` (or the built-in defaults when absent). Unknown keys are
//! rejected.
//!
//! ```toml
//! preset = "study2"
//! max_age = 200
//! association_threshold = 0.4
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::association::{AssociationConfig, AssociationMethod};
use crate::error::{Error, Result};
use crate::refine::RefineConfig;
use crate::tracker::{AppearanceMetric, MatchingMode, TrackerConfig};

/// Which input frames reach the tracker: frame `f` is kept when
/// `f % stride == 0` and `f % block < keep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decimation {
    pub stride: u64,
    pub keep: u64,
    pub block: u64,
}

impl Default for Decimation {
    fn default() -> Self {
        Decimation {
            stride: 1,
            keep: 1,
            block: 1,
        }
    }
}

impl Decimation {
    pub fn keeps(&self, frame: u64) -> bool {
        frame.is_multiple_of(self.stride) && frame % self.block < self.keep
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride >= 1 && self.block >= 1 && (1..=self.block).contains(&self.keep) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "decimation needs stride >= 1 and 1 <= keep <= block, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Study1,
    Study2,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "study1" => Ok(Preset::Study1),
            "study2" => Ok(Preset::Study2),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    /// Raw detections below this confidence are discarded before decimation.
    pub detection_threshold: f64,
    pub decimation: Decimation,
    pub refine_enabled: bool,
    pub refine: RefineConfig,
    pub association: AssociationConfig,
    /// Parsed and carried through; no pose model is run.
    pub pose_threshold: Option<f64>,
    pub pose_variance: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tracker: TrackerConfig::default(),
            detection_threshold: 0.0,
            decimation: Decimation::default(),
            refine_enabled: false,
            refine: RefineConfig::default(),
            association: AssociationConfig::default(),
            pose_threshold: None,
            pose_variance: None,
        }
    }
}

impl PipelineConfig {
    pub fn preset(p: Preset) -> Self {
        let base = PipelineConfig::default();
        match p {
            Preset::Study1 => PipelineConfig {
                tracker: TrackerConfig {
                    nms_threshold: 0.4,
                    max_age: 180,
                    ..base.tracker
                },
                detection_threshold: 0.3,
                decimation: Decimation {
                    stride: 1,
                    keep: 270,
                    block: 300,
                },
                refine_enabled: true,
                refine: RefineConfig {
                    min_mean_confidence: 0.6,
                    ..RefineConfig::default()
                },
                ..base
            },
            Preset::Study2 => PipelineConfig {
                tracker: TrackerConfig {
                    max_age: 250,
                    nn_budget: 100,
                    appearance_metric: AppearanceMetric::Euclidean,
                    min_confidence: 0.65,
                    max_appearance_distance: 0.05,
                    ..base.tracker
                },
                detection_threshold: 0.25,
                decimation: Decimation {
                    stride: 4,
                    ..Decimation::default()
                },
                refine_enabled: true,
                refine: RefineConfig {
                    min_width: 60.0,
                    min_height: 50.0,
                    min_mean_confidence: 0.65,
                    ..RefineConfig::default()
                },
                pose_threshold: Some(0.25),
                pose_variance: Some(0.1),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        self.decimation.validate()?;
        self.refine.validate()?;
        self.association.validate()?;
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(Error::Config(format!(
                "detection_threshold must be in [0, 1], got {}",
                self.detection_threshold
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        file.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&super::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fully explicit TOML; `from_toml` reads it back to an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(&ConfigFile::from(self)).expect("config serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub min_confidence: Option<f64>,
    pub nms_threshold: Option<f64>,
    pub max_age: Option<u32>,
    pub n_init: Option<u32>,
    pub nn_budget: Option<usize>,
    pub max_appearance_distance: Option<f64>,
    pub max_iou_distance: Option<f64>,
    pub appearance_metric: Option<AppearanceMetric>,
    pub matching: Option<MatchingMode>,
    pub gating_threshold: Option<f64>,
    pub std_weight_position: Option<f64>,
    pub std_weight_velocity: Option<f64>,
    pub detection_threshold: Option<f64>,
    pub frame_stride: Option<u64>,
    pub frame_keep: Option<u64>,
    pub frame_block: Option<u64>,
    pub refine: Option<bool>,
    pub min_width: Option<f64>,
    pub min_height: Option<f64>,
    pub min_track_length: Option<usize>,
    pub min_mean_confidence: Option<f64>,
    pub association_method: Option<AssociationMethod>,
    pub association_threshold: Option<f64>,
    pub intra_camera_first: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose_variance: Option<f64>,
}

macro_rules! apply {
    ($($src:expr => $dst:expr),* $(,)?) => {
        $(if let Some(v) = $src { $dst = v; })*
    };
}

impl ConfigFile {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = self
            .preset
            .map_or_else(PipelineConfig::default, PipelineConfig::preset);
        apply! {
            self.min_confidence => c.tracker.min_confidence,
            self.nms_threshold => c.tracker.nms_threshold,
            self.max_age => c.tracker.max_age,
            self.n_init => c.tracker.n_init,
            self.nn_budget => c.tracker.nn_budget,
            self.max_appearance_distance => c.tracker.max_appearance_distance,
            self.max_iou_distance => c.tracker.max_iou_distance,
            self.appearance_metric => c.tracker.appearance_metric,
            self.matching => c.tracker.matching,
            self.gating_threshold => c.tracker.gating_threshold,
            self.std_weight_position => c.tracker.noise.std_weight_position,
            self.std_weight_velocity => c.tracker.noise.std_weight_velocity,
            self.detection_threshold => c.detection_threshold,
            self.frame_stride => c.decimation.stride,
            self.frame_keep => c.decimation.keep,
            self.frame_block => c.decimation.block,
            self.refine => c.refine_enabled,
            self.min_width => c.refine.min_width,
            self.min_height => c.refine.min_height,
            self.min_track_length => c.refine.min_track_length,
            self.min_mean_confidence => c.refine.min_mean_confidence,
            self.association_method => c.association.method,
            self.association_threshold => c.association.threshold,
            self.intra_camera_first => c.association.intra_first,
        }
        if self.pose_threshold.is_some() {
            c.pose_threshold = self.pose_threshold;
        }
        if self.pose_variance.is_some() {
            c.pose_variance = self.pose_variance;
        }
        c.validate()?;
        Ok(c)
    }
}

impl From<&PipelineConfig> for ConfigFile {
    fn from(c: &PipelineConfig) -> Self {
        ConfigFile {
            preset: None,
            min_confidence: Some(c.tracker.min_confidence),
            nms_threshold: Some(c.tracker.nms_threshold),
            max_age: Some(c.tracker.max_age),
            n_init: Some(c.tracker.n_init),
            nn_budget: Some(c.tracker.nn_budget),
            max_appearance_distance: Some(c.tracker.max_appearance_distance),
            max_iou_distance: Some(c.tracker.max_iou_distance),
            appearance_metric: Some(c.tracker.appearance_metric),
            matching: Some(c.tracker.matching),
            gating_threshold: Some(c.tracker.gating_threshold),
            std_weight_position: Some(c.tracker.noise.std_weight_position),
            std_weight_velocity: Some(c.tracker.noise.std_weight_velocity),
            detection_threshold: Some(c.detection_threshold),
            frame_stride: Some(c.decimation.stride),
            frame_keep: Some(c.decimation.keep),
            frame_block: Some(c.decimation.block),
            refine: Some(c.refine_enabled),
            min_width: Some(c.refine.min_width),
            min_height: Some(c.refine.min_height),
            min_track_length: Some(c.refine.min_track_length),
            min_mean_confidence: Some(c.refine.min_mean_confidence),
            association_method: Some(c.association.method),
            association_threshold: Some(c.association.threshold),
            intra_camera_first: Some(c.association.intra_first),
            pose_threshold: c.pose_threshold,
            pose_variance: c.pose_variance,
        }
    }
}
