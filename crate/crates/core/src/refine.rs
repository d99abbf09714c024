//! Output refinement: drop tracklets that look like false positives.

use serde::{Deserialize, Serialize};

use crate::association::Cluster;
use crate::error::{Error, Result};
use crate::tracker::Tracklet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    /// Median box width must be strictly greater than this.
    pub min_width: f64,
    /// Median box height must be strictly greater than this.
    pub min_height: f64,
    pub min_track_length: usize,
    pub min_mean_confidence: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            min_width: 0.0,
            min_height: 0.0,
            min_track_length: 0,
            min_mean_confidence: 0.0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_width >= 0.0
            && self.min_height >= 0.0
            && (0.0..=1.0).contains(&self.min_mean_confidence)
        {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid refine settings {self:?}")))
        }
    }

    pub fn keeps(&self, t: &Tracklet) -> bool {
        let Some((w, h)) = median_size(t) else {
            return false;
        };
        w > self.min_width
            && h > self.min_height
            && t.len() >= self.min_track_length
            && t.mean_confidence() >= self.min_mean_confidence
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Per-dimension median of a tracklet's box sizes.
pub fn median_size(t: &Tracklet) -> Option<(f64, f64)> {
    if t.boxes.is_empty() {
        return None;
    }
    let mut ws: Vec<f64> = t.boxes.iter().map(|b| b.w).collect();
    let mut hs: Vec<f64> = t.boxes.iter().map(|b| b.h).collect();
    Some((median(&mut ws), median(&mut hs)))
}

/// Keep the tracklets that pass every filter, in their original order.
pub fn refine(tracklets: &[Tracklet], cfg: &RefineConfig) -> Vec<Tracklet> {
    tracklets.iter().filter(|t| cfg.keeps(t)).cloned().collect()
}

/// Remove refined-away tracklets from their clusters. Clusters left empty
/// disappear; ids are reassigned `1..=n` in order.
pub fn refine_clusters(
    clusters: Vec<Cluster>,
    tracklets: &[Tracklet],
    cfg: &RefineConfig,
) -> Vec<Cluster> {
    let dropped: std::collections::HashSet<(u32, u64)> = tracklets
        .iter()
        .filter(|t| !cfg.keeps(t))
        .map(Tracklet::key)
        .collect();
    let mut out = Vec::new();
    for c in clusters {
        let (members, member_embeddings): (Vec<_>, Vec<_>) = c
            .members
            .into_iter()
            .zip(c.member_embeddings)
            .filter(|(k, _)| !dropped.contains(k))
            .unzip();
        if members.is_empty() {
            continue;
        }
        let dim = member_embeddings[0].len();
        let mut centroid = vec![0.0; dim];
        for e in &member_embeddings {
            for (a, x) in centroid.iter_mut().zip(e.iter()) {
                *a += x;
            }
        }
        centroid
            .iter_mut()
            .for_each(|a| *a /= member_embeddings.len() as f64);
        out.push(Cluster {
            global_id: out.len() as u32 + 1,
            members,
            member_embeddings,
            centroid,
        });
    }
    out
}
