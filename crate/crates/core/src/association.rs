//! Grouping tracklets into global identities.
//!
//! Two methods operate on mean tracklet embeddings:
//!
//! * **Euclidean**: a greedy pass in `(camera_id, track_id)` order; each item
//!   joins the cluster with the nearest centroid when that L2 distance is at
//!   most `τ`, otherwise it opens a new cluster.
//! * **Voting**: cluster `A` is merged into `B` when strictly more than half of
//!   `A`'s member embeddings lie within `τ` of `B`'s centroid, repeated until
//!   no pair qualifies.
//!
//! With `intra_first`, each camera is clustered on its own first (re-joining
//! fragmented tracks of one person), and the per-camera clusters are then
//! associated across cameras.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracker::Tracklet;

pub type TrackletKey = (u32, u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssociationMethod {
    Euclidean,
    /// Majority-vote merging starting from singleton clusters.
    Voting,
    /// Euclidean clustering refined by a voting pass.
    EuclideanVoting,
}

impl AssociationMethod {
    pub fn name(self) -> &'static str {
        match self {
            AssociationMethod::Euclidean => "euclidean",
            AssociationMethod::Voting => "voting",
            AssociationMethod::EuclideanVoting => "euclidean-voting",
        }
    }
}

impl std::str::FromStr for AssociationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(AssociationMethod::Euclidean),
            "voting" => Ok(AssociationMethod::Voting),
            "euclidean-voting" | "euclidean+voting" => Ok(AssociationMethod::EuclideanVoting),
            other => Err(Error::Config(format!(
                "unknown association method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationConfig {
    pub method: AssociationMethod,
    pub threshold: f64,
    pub intra_first: bool,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            method: AssociationMethod::Euclidean,
            threshold: 0.5,
            intra_first: true,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold > 0.0 && self.threshold.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "association threshold must be positive, got {}",
                self.threshold
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub global_id: u32,
    pub members: Vec<TrackletKey>,
    /// Mean embedding of each member tracklet, parallel to `members`.
    pub member_embeddings: Vec<Vec<f64>>,
    pub centroid: Vec<f64>,
}

impl Cluster {
    fn new(global_id: u32, members: Vec<TrackletKey>, member_embeddings: Vec<Vec<f64>>) -> Self {
        let centroid = mean_of(&member_embeddings);
        Cluster {
            global_id,
            members,
            member_embeddings,
            centroid,
        }
    }

    fn absorb(&mut self, other: Cluster) {
        self.members.extend(other.members);
        self.member_embeddings.extend(other.member_embeddings);
        self.centroid = mean_of(&self.member_embeddings);
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn mean_of(vs: &[Vec<f64>]) -> Vec<f64> {
    let dim = vs.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; dim];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vs.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Arithmetic mean of a tracklet's embedding sequence.
pub fn mean_embedding(t: &Tracklet) -> Result<Vec<f64>> {
    if t.embeddings.is_empty() {
        return Err(Error::MissingEmbeddings(format!(
            "tracklet (camera {}, track {}) has no embeddings",
            t.camera_id, t.track_id
        )));
    }
    let dim = t.embeddings[0].dim();
    let mut acc = vec![0.0f64; dim];
    for e in &t.embeddings {
        if e.dim() != dim {
            return Err(Error::Domain(format!(
                "tracklet (camera {}, track {}) mixes embedding dimensions",
                t.camera_id, t.track_id
            )));
        }
        for (a, &x) in acc.iter_mut().zip(e.as_slice()) {
            *a += x as f64;
        }
    }
    let n = t.embeddings.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Greedy Euclidean clustering of pre-formed groups, in input order. Each
/// group is compared through its own centroid; its member embeddings are
/// carried into the cluster it joins.
fn greedy_clusters(groups: Vec<Cluster>, tau: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for g in groups {
        let nearest = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i, l2(&c.centroid, &g.centroid)))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            });
        match nearest {
            Some((i, d)) if d <= tau => clusters[i].absorb(g),
            _ => {
                let id = clusters.len() as u32 + 1;
                clusters.push(Cluster { global_id: id, ..g });
            }
        }
    }
    clusters
}

fn singletons(tracklets: &[&Tracklet]) -> Result<Vec<Cluster>> {
    let mut sorted: Vec<&Tracklet> = tracklets.to_vec();
    sorted.sort_by_key(|t| t.key());
    sorted
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(Cluster::new(
                i as u32 + 1,
                vec![t.key()],
                vec![mean_embedding(t)?],
            ))
        })
        .collect()
}

/// Greedy Euclidean association of tracklets ordered by `(camera_id, track_id)`.
pub fn euclidean_associate(tracklets: &[Tracklet], tau: f64) -> Result<Vec<Cluster>> {
    let refs: Vec<&Tracklet> = tracklets.iter().collect();
    Ok(greedy_clusters(singletons(&refs)?, tau))
}

fn majority_inside(a: &Cluster, b: &Cluster, tau: f64) -> bool {
    let inside = a
        .member_embeddings
        .iter()
        .filter(|e| l2(e, &b.centroid) <= tau)
        .count();
    2 * inside > a.member_embeddings.len()
}

/// Merge `A` into `B` while strictly more than half of `A`'s member
/// embeddings lie within `τ` of `B`'s centroid. Ordered pairs are scanned by
/// ascending `(global_id_A, global_id_B)`; the scan restarts after each merge.
pub fn voting_merge(clusters: Vec<Cluster>, tau: f64) -> Vec<Cluster> {
    let mut clusters = clusters;
    clusters.sort_by_key(|c| c.global_id);
    'scan: loop {
        for a in 0..clusters.len() {
            for b in 0..clusters.len() {
                if a != b && majority_inside(&clusters[a], &clusters[b], tau) {
                    let merged = clusters.remove(a);
                    let b = if b > a { b - 1 } else { b };
                    clusters[b].absorb(merged);
                    continue 'scan;
                }
            }
        }
        return clusters;
    }
}

fn run_method(groups: Vec<Cluster>, method: AssociationMethod, tau: f64) -> Vec<Cluster> {
    match method {
        AssociationMethod::Euclidean => greedy_clusters(groups, tau),
        AssociationMethod::Voting => voting_merge(renumber(groups), tau),
        AssociationMethod::EuclideanVoting => voting_merge(greedy_clusters(groups, tau), tau),
    }
}

/// Assign ids `1..=n` in the current order of discovery.
fn renumber(mut clusters: Vec<Cluster>) -> Vec<Cluster> {
    clusters.sort_by_key(|c| c.global_id);
    for (i, c) in clusters.iter_mut().enumerate() {
        c.global_id = i as u32 + 1;
    }
    clusters
}

/// Two-stage association over all cameras.
pub fn associate_multicamera(
    per_camera: &BTreeMap<u32, Vec<Tracklet>>,
    cfg: &AssociationConfig,
) -> Result<Vec<Cluster>> {
    cfg.validate()?;
    let tau = cfg.threshold;
    let clusters = if cfg.intra_first {
        let mut pooled = Vec::new();
        for tracklets in per_camera.values() {
            let refs: Vec<&Tracklet> = tracklets.iter().collect();
            let local = renumber(run_method(singletons(&refs)?, cfg.method, tau));
            pooled.extend(local);
        }
        // Camera order, then local discovery order.
        for (i, c) in pooled.iter_mut().enumerate() {
            c.global_id = i as u32 + 1;
        }
        run_method(pooled, cfg.method, tau)
    } else {
        let all: Vec<&Tracklet> = per_camera.values().flatten().collect();
        run_method(singletons(&all)?, cfg.method, tau)
    };
    Ok(renumber(clusters))
}

pub fn count_unique(clusters: &[Cluster]) -> usize {
    clusters.len()
}
