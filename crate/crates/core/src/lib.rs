//! Deterministic multi-camera multi-object tracking.
//!
//! The pipeline runs a DeepSORT-style tracker independently per camera
//! (Kalman prediction, Mahalanobis gating, appearance cascade, IoU fallback),
//! exports the confirmed tracks as tracklets, and then groups tracklets into
//! global identities with a two-stage (intra-camera, then inter-camera)
//! association. Detections and appearance embeddings are read from files, or
//! produced by the seeded scenario generator in [`sim`].

pub mod assignment;
pub mod association;
pub mod error;
pub mod geometry;
pub mod io;
pub mod kalman;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod sim;
pub mod tracker;

pub use assignment::{CostMatrix, Matching, INFEASIBLE};
pub use association::{AssociationConfig, AssociationMethod, Cluster};
pub use error::{Error, Result};
pub use geometry::{BoundingBox, Detection, Embedding, Xyah};
pub use kalman::{KalmanFilter, KalmanState, NoiseProfile};
pub use metrics::{Confusion, CountReport};
pub use refine::RefineConfig;
pub use tracker::{Track, TrackStatus, Tracker, TrackerConfig, Tracklet};
