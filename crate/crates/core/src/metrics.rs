//! Counting metrics and identity bookkeeping against ground truth.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CostMatrix, INFEASIBLE};
use crate::association::Cluster;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::tracker::Tracklet;

/// Minimum IoU for a hypothesis box to correspond to a truth box.
pub const CORRESPONDENCE_IOU: f64 = 0.5;

/// Euclidean norm of the per-set count difference.
pub fn l2_count_error(pred: &[u64], truth: &[u64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Domain(format!(
            "{} predicted counts vs {} truth counts",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// Identity-level confusion counts and the ratios derived from them.
/// A ratio with a zero denominator is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// accuracy = TP/(TP+FP+FN), recall = TP/(TP+FN), F1 = 2TP/(2TP+FP+FN).
pub fn count_confusion(tp: u64, fp: u64, fn_: u64) -> Confusion {
    Confusion {
        tp,
        fp,
        fn_,
        accuracy: ratio(tp, tp + fp + fn_),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub per_set_predicted: Vec<u64>,
    pub per_set_truth: Vec<u64>,
    pub l2_error: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl CountReport {
    pub fn new(
        per_set_predicted: Vec<u64>,
        per_set_truth: Vec<u64>,
        confusion: Confusion,
    ) -> Result<Self> {
        let l2_error = l2_count_error(&per_set_predicted, &per_set_truth)?;
        Ok(CountReport {
            per_set_predicted,
            per_set_truth,
            l2_error,
            tp: confusion.tp,
            fp: confusion.fp,
            fn_: confusion.fn_,
            accuracy: confusion.accuracy,
            precision: confusion.precision,
            recall: confusion.recall,
            f1: confusion.f1,
        })
    }
}

/// One ground-truth object on one frame of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthObservation {
    pub frame: u64,
    pub identity: u32,
    pub bbox: BoundingBox,
}

/// Per-frame one-to-one correspondence between hypothesis boxes (tracklet
/// rows) and truth boxes of a single camera: maximum number of pairs with
/// IoU >= 0.5, then maximum total IoU. Returns `frame -> [(track_id, identity)]`.
pub fn frame_correspondence(
    hyp: &[Tracklet],
    truth: &[TruthObservation],
) -> BTreeMap<u64, Vec<(u64, u32)>> {
    let mut hyp_by_frame: BTreeMap<u64, Vec<(u64, BoundingBox)>> = BTreeMap::new();
    for t in hyp {
        for (&f, &b) in t.frames.iter().zip(&t.boxes) {
            hyp_by_frame.entry(f).or_default().push((t.track_id, b));
        }
    }
    let mut truth_by_frame: HashMap<u64, Vec<&TruthObservation>> = HashMap::new();
    for o in truth {
        truth_by_frame.entry(o.frame).or_default().push(o);
    }

    let mut out = BTreeMap::new();
    for (frame, hyps) in hyp_by_frame {
        let Some(objs) = truth_by_frame.get(&frame) else {
            continue;
        };
        let cost = CostMatrix::from_fn(objs.len(), hyps.len(), |r, c| {
            let v = objs[r].bbox.overlap(&hyps[c].1);
            if v >= CORRESPONDENCE_IOU {
                1.0 - v
            } else {
                INFEASIBLE
            }
        });
        let m = solve_assignment(&cost);
        let mut pairs: Vec<(u64, u32)> = m
            .pairs
            .iter()
            .map(|&(r, c)| (hyps[c].0, objs[r].identity))
            .collect();
        pairs.sort_unstable();
        if !pairs.is_empty() {
            out.insert(frame, pairs);
        }
    }
    out
}

/// Number of times a truth identity's corresponding hypothesis id changes
/// from the previous frame on which it had a correspondence.
pub fn id_switches(hyp: &[Tracklet], truth: &[TruthObservation]) -> usize {
    let mut last: HashMap<u32, u64> = HashMap::new();
    let mut switches = 0;
    for pairs in frame_correspondence(hyp, truth).values() {
        for &(track, identity) in pairs {
            if let Some(prev) = last.insert(identity, track) {
                if prev != track {
                    switches += 1;
                }
            }
        }
    }
    switches
}

/// Identity each tracklet covers most often (ties go to the lowest identity),
/// with the number of frames supporting it.
pub fn tracklet_identities(
    hyp: &[Tracklet],
    truth: &[TruthObservation],
) -> BTreeMap<u64, (u32, usize)> {
    let mut votes: BTreeMap<u64, BTreeMap<u32, usize>> = BTreeMap::new();
    for pairs in frame_correspondence(hyp, truth).values() {
        for &(track, identity) in pairs {
            *votes.entry(track).or_default().entry(identity).or_default() += 1;
        }
    }
    votes
        .into_iter()
        .filter_map(|(track, v)| {
            v.into_iter()
                .fold(None, |best: Option<(u32, usize)>, (id, n)| match best {
                    Some((_, bn)) if bn >= n => best,
                    _ => Some((id, n)),
                })
                .map(|b| (track, b))
        })
        .collect()
}

/// Map clusters to truth identities one-to-one by greedy best overlap
/// (frames of member tracklets covering the identity) and count TP/FP/FN.
///
/// `identities` is the set of truth identities present in the scene.
pub fn cluster_confusion(
    clusters: &[Cluster],
    tracklets: &BTreeMap<u32, Vec<Tracklet>>,
    truth: &BTreeMap<u32, Vec<TruthObservation>>,
    identities: &[u32],
) -> Confusion {
    let mut label: HashMap<(u32, u64), (u32, usize)> = HashMap::new();
    for (&cam, ts) in tracklets {
        let obs = truth.get(&cam).map(Vec::as_slice).unwrap_or(&[]);
        for (track, lab) in tracklet_identities(ts, obs) {
            label.insert((cam, track), lab);
        }
    }

    let mut overlaps: Vec<(usize, u32, u32)> = Vec::new();
    for c in clusters {
        let mut per_identity: BTreeMap<u32, usize> = BTreeMap::new();
        for key in &c.members {
            if let Some(&(id, n)) = label.get(key) {
                *per_identity.entry(id).or_default() += n;
            }
        }
        overlaps.extend(per_identity.into_iter().map(|(id, n)| (n, c.global_id, id)));
    }
    overlaps.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used_clusters = std::collections::HashSet::new();
    let mut used_ids = std::collections::HashSet::new();
    for (_, gid, id) in overlaps {
        if !identities.contains(&id) || used_clusters.contains(&gid) || used_ids.contains(&id) {
            continue;
        }
        used_clusters.insert(gid);
        used_ids.insert(id);
    }
    let tp = used_ids.len() as u64;
    let fp = clusters.len() as u64 - tp;
    let fn_ = identities.len() as u64 - tp;
    count_confusion(tp, fp, fn_)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn round1(x: Option<f64>) -> f64 {
        (x.unwrap() * 1000.0).round() / 10.0
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_count_error(&[3, 5], &[3, 5]).unwrap(), 0.0);
        assert_eq!(l2_count_error(&[4], &[6]).unwrap(), 2.0);
        assert_eq!(l2_count_error(&[3, 7], &[6, 3]).unwrap(), 5.0);
        assert!(matches!(
            l2_count_error(&[1], &[1, 2]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn confusion_reproduces_reported_columns() {
        let a = count_confusion(5, 1, 2);
        assert_eq!(
            (round1(a.accuracy), round1(a.recall), round1(a.f1)),
            (62.5, 71.4, 76.9)
        );
        let b = count_confusion(3, 0, 4);
        assert_eq!(
            (round1(b.accuracy), round1(b.recall), round1(b.f1)),
            (42.9, 42.9, 60.0)
        );
        let empty = count_confusion(0, 0, 0);
        assert_eq!(
            (empty.accuracy, empty.recall, empty.f1, empty.precision),
            (None, None, None, None)
        );
    }

    proptest! {
        #[test]
        fn f1_is_harmonic_mean(tp in 0u64..100, fp in 0u64..100, fn_ in 0u64..100) {
            let c = count_confusion(tp, fp, fn_);
            if let (Some(p), Some(r)) = (c.precision, c.recall) {
                if p + r > 0.0 {
                    prop_assert!((c.f1.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn l2_is_a_metric(
            a in prop::collection::vec(0u64..1000, 4),
            b in prop::collection::vec(0u64..1000, 4),
            c in prop::collection::vec(0u64..1000, 4),
        ) {
            let d = |x: &[u64], y: &[u64]| l2_count_error(x, y).unwrap();
            prop_assert!(d(&a, &b) >= 0.0);
            prop_assert_eq!(d(&a, &b) == 0.0, a == b);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }
    }

    fn track(id: u64, rows: &[(u64, f64)]) -> Tracklet {
        Tracklet {
            camera_id: 0,
            track_id: id,
            frames: rows.iter().map(|r| r.0).collect(),
            boxes: rows
                .iter()
                .map(|r| BoundingBox::new(r.1, 0.0, 10.0, 10.0))
                .collect(),
            confidences: vec![1.0; rows.len()],
            embeddings: Vec::new(),
        }
    }

    fn truth_of(id: u32, rows: &[(u64, f64)]) -> Vec<TruthObservation> {
        rows.iter()
            .map(|&(frame, x)| TruthObservation {
                frame,
                identity: id,
                bbox: BoundingBox::new(x, 0.0, 10.0, 10.0),
            })
            .collect()
    }

    #[test]
    fn id_switch_examples() {
        let rows: Vec<(u64, f64)> = (0..10).map(|f| (f, f as f64)).collect();
        let truth = truth_of(7, &rows);
        assert_eq!(id_switches(&[track(1, &rows)], &truth), 0);
        let split = [track(1, &rows[..4]), track(2, &rows[4..])];
        assert_eq!(id_switches(&split, &truth), 1);
    }

    /// Independent recount: per frame, enumerate every injective truth→hyp
    /// assignment, keep the best by (pairs, total IoU), then count changes.
    fn brute_switches(hyp: &[Tracklet], truth: &[TruthObservation]) -> usize {
        let frames: std::collections::BTreeSet<u64> = truth.iter().map(|o| o.frame).collect();
        let mut last: HashMap<u32, u64> = HashMap::new();
        let mut switches = 0;
        for f in frames {
            let objs: Vec<_> = truth.iter().filter(|o| o.frame == f).collect();
            let hyps: Vec<(u64, BoundingBox)> = hyp
                .iter()
                .flat_map(|t| {
                    t.frames
                        .iter()
                        .zip(&t.boxes)
                        .filter(|(&g, _)| g == f)
                        .map(move |(_, &b)| (t.track_id, b))
                })
                .collect();
            let mut best: (usize, f64, Vec<(usize, usize)>) = (0, 0.0, Vec::new());
            fn rec(
                objs: &[&TruthObservation],
                hyps: &[(u64, BoundingBox)],
                r: usize,
                used: &mut Vec<bool>,
                cur: &mut Vec<(usize, usize)>,
                score: f64,
                best: &mut (usize, f64, Vec<(usize, usize)>),
            ) {
                if r == objs.len() {
                    if cur.len() > best.0 || (cur.len() == best.0 && score > best.1 + 1e-12) {
                        *best = (cur.len(), score, cur.clone());
                    }
                    return;
                }
                rec(objs, hyps, r + 1, used, cur, score, best);
                for c in 0..hyps.len() {
                    let v = crate::geometry::iou(&objs[r].bbox, &hyps[c].1).unwrap();
                    if !used[c] && v >= 0.5 {
                        used[c] = true;
                        cur.push((r, c));
                        rec(objs, hyps, r + 1, used, cur, score + v, best);
                        cur.pop();
                        used[c] = false;
                    }
                }
            }
            rec(
                &objs,
                &hyps,
                0,
                &mut vec![false; hyps.len()],
                &mut Vec::new(),
                0.0,
                &mut best,
            );
            let mut pairs: Vec<(u64, u32)> = best
                .2
                .iter()
                .map(|&(r, c)| (hyps[c].0, objs[r].identity))
                .collect();
            pairs.sort_unstable();
            for (track, id) in pairs {
                if let Some(prev) = last.insert(id, track) {
                    if prev != track {
                        switches += 1;
                    }
                }
            }
        }
        switches
    }

    #[test]
    fn id_switches_match_brute_force_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut truth = Vec::new();
            for id in 0..3u32 {
                let base = rng.random_range(0.0..60.0);
                let rows: Vec<(u64, f64)> = (0..8).map(|f| (f, base + f as f64)).collect();
                truth.extend(truth_of(id, &rows));
            }
            // Hypotheses: truth boxes with jitter, random ids from a small pool.
            let mut by_id: BTreeMap<u64, Vec<(u64, f64)>> = BTreeMap::new();
            for o in &truth {
                if rng.random_bool(0.85) {
                    let id = rng.random_range(1..5u64);
                    let rows = by_id.entry(id).or_default();
                    if rows.last().is_none_or(|r| r.0 < o.frame) {
                        rows.push((o.frame, o.bbox.x + rng.random_range(-3.0..3.0)));
                    }
                }
            }
            let hyp: Vec<Tracklet> = by_id.iter().map(|(&id, rows)| track(id, rows)).collect();
            assert_eq!(id_switches(&hyp, &truth), brute_switches(&hyp, &truth));
        }
    }

    #[test]
    fn cluster_confusion_greedy_mapping() {
        let rows_a: Vec<(u64, f64)> = (0..5).map(|f| (f, 0.0)).collect();
        let rows_b: Vec<(u64, f64)> = (0..5).map(|f| (f, 100.0)).collect();
        let mut truth = truth_of(1, &rows_a);
        truth.extend(truth_of(2, &rows_b));
        let mut tracks = BTreeMap::new();
        tracks.insert(
            0,
            vec![
                track(10, &rows_a),
                track(11, &rows_b),
                track(12, &[(0, 500.0)]),
            ],
        );
        let mut truths = BTreeMap::new();
        truths.insert(0, truth);
        let c = |gid: u32, members: Vec<(u32, u64)>| Cluster {
            global_id: gid,
            member_embeddings: vec![vec![0.0]; members.len()],
            members,
            centroid: vec![0.0],
        };

        // Perfect: two clusters for two identities.
        let perfect = vec![c(1, vec![(0, 10)]), c(2, vec![(0, 11)])];
        let conf = cluster_confusion(&perfect, &tracks, &truths, &[1, 2]);
        assert_eq!((conf.tp, conf.fp, conf.fn_), (2, 0, 0));
        assert_eq!(conf.recall, Some(1.0));

        // Merged identities plus a false-positive cluster; identity 3 never seen.
        let merged = vec![c(1, vec![(0, 10), (0, 11)]), c(2, vec![(0, 12)])];
        let conf = cluster_confusion(&merged, &tracks, &truths, &[1, 2, 3]);
        assert_eq!((conf.tp, conf.fp, conf.fn_), (1, 1, 2));
    }
}
