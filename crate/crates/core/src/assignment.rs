//! Minimum-cost bipartite matching and the gated matching stages built on it.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use crate::error::{Error, Result};

/// Sentinel for pairs that must never be matched.
pub const INFEASIBLE: f64 = 1e18;

/// Dense row-major cost matrix. Entries `>= INFEASIBLE` (or NaN) are infeasible.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, fill: f64) -> Self {
        CostMatrix {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        CostMatrix { rows, cols, data }
    }

    /// Build row by row; `f(r)` must return `cols` entries.
    pub fn from_fn_rows(rows: usize, cols: usize, mut f: impl FnMut(usize) -> Vec<f64>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = f(r);
            assert_eq!(row.len(), cols, "row {r} has the wrong length");
            data.extend(row);
        }
        CostMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Domain("ragged cost matrix".into()));
        }
        Ok(CostMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_feasible(&self, r: usize, c: usize) -> bool {
        is_feasible(self.get(r, c))
    }

    /// Total cost of a set of pairs, summed in row order.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        let mut sorted = pairs.to_vec();
        sorted.sort_unstable();
        sorted.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

fn is_feasible(v: f64) -> bool {
    v < INFEASIBLE
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Mark entries where `feasible` is false as [`INFEASIBLE`].
pub fn gate(c: &CostMatrix, feasible: &[Vec<bool>]) -> Result<CostMatrix> {
    if feasible.len() != c.rows || feasible.iter().any(|r| r.len() != c.cols) {
        return Err(Error::Domain(format!(
            "mask shape does not match {}x{} cost matrix",
            c.rows, c.cols
        )));
    }
    let mut out = c.clone();
    for (r, row) in feasible.iter().enumerate() {
        for (col, &ok) in row.iter().enumerate() {
            if !ok {
                out.set(r, col, INFEASIBLE);
            }
        }
    }
    Ok(out)
}

/// Cost ordered first by the number of infeasible pairs used, then by the
/// finite total. Minimizing it maximizes feasible cardinality exactly,
/// without mixing a huge sentinel into floating-point sums.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LexCost {
    infeasible: i64,
    value: f64,
}

const LEX_INF: LexCost = LexCost {
    infeasible: i64::MAX / 4,
    value: 0.0,
};

impl LexCost {
    const ZERO: LexCost = LexCost {
        infeasible: 0,
        value: 0.0,
    };

    fn of(v: f64) -> Self {
        if is_feasible(v) {
            LexCost {
                infeasible: 0,
                value: v,
            }
        } else {
            LexCost {
                infeasible: 1,
                value: 0.0,
            }
        }
    }
}

impl PartialOrd for LexCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.infeasible.cmp(&other.infeasible) {
            Ordering::Equal => self.value.partial_cmp(&other.value),
            o => Some(o),
        }
    }
}

impl Add for LexCost {
    type Output = LexCost;
    fn add(self, o: LexCost) -> LexCost {
        LexCost {
            infeasible: self.infeasible + o.infeasible,
            value: self.value + o.value,
        }
    }
}

impl Sub for LexCost {
    type Output = LexCost;
    fn sub(self, o: LexCost) -> LexCost {
        LexCost {
            infeasible: self.infeasible - o.infeasible,
            value: self.value - o.value,
        }
    }
}

impl AddAssign for LexCost {
    fn add_assign(&mut self, o: LexCost) {
        *self = *self + o;
    }
}

impl SubAssign for LexCost {
    fn sub_assign(&mut self, o: LexCost) {
        *self = *self - o;
    }
}

/// Hungarian algorithm with potentials (shortest augmenting paths), for
/// `n <= m`. Returns the column assigned to each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> LexCost) -> Vec<usize> {
    debug_assert!(n <= m);
    // 1-based; index 0 is the virtual source column/row.
    let mut u = vec![LexCost::ZERO; n + 1];
    let mut v = vec![LexCost::ZERO; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![LEX_INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = LEX_INF;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of = vec![usize::MAX; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Minimum-cost matching of maximum feasible cardinality.
///
/// Infeasible pairs are never returned; rows and columns left without a
/// feasible partner are reported as unmatched. Pairs are sorted by row.
pub fn solve_assignment(c: &CostMatrix) -> Matching {
    let (n, m) = (c.rows, c.cols);
    let mut pairs = Vec::new();
    if n > 0 && m > 0 {
        if n <= m {
            let col_of = hungarian(n, m, |r, k| LexCost::of(c.get(r, k)));
            pairs.extend(
                col_of
                    .into_iter()
                    .enumerate()
                    .filter(|&(r, k)| c.is_feasible(r, k)),
            );
        } else {
            let row_of = hungarian(m, n, |k, r| LexCost::of(c.get(r, k)));
            pairs.extend(
                row_of
                    .into_iter()
                    .enumerate()
                    .map(|(k, r)| (r, k))
                    .filter(|&(r, k)| c.is_feasible(r, k)),
            );
            pairs.sort_unstable();
        }
    }
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    for &(r, k) in &pairs {
        row_used[r] = true;
        col_used[k] = true;
    }
    Matching {
        pairs,
        unmatched_rows: (0..n).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..m).filter(|&k| !col_used[k]).collect(),
    }
}

/// Solve over index subsets. `cost_fn(tracks, dets)` builds the
/// `tracks.len() x dets.len()` cost matrix; entries above `threshold` become
/// infeasible. The returned matching is expressed in the caller's indices.
pub fn min_cost_matching<F>(
    track_indices: &[usize],
    detection_indices: &[usize],
    threshold: f64,
    mut cost_fn: F,
) -> Matching
where
    F: FnMut(&[usize], &[usize]) -> CostMatrix,
{
    if track_indices.is_empty() || detection_indices.is_empty() {
        return Matching {
            pairs: Vec::new(),
            unmatched_rows: track_indices.to_vec(),
            unmatched_cols: detection_indices.to_vec(),
        };
    }
    let mut cost = cost_fn(track_indices, detection_indices);
    debug_assert_eq!(
        (cost.rows, cost.cols),
        (track_indices.len(), detection_indices.len())
    );
    for v in cost.data.iter_mut() {
        if v.is_nan() || *v > threshold {
            *v = INFEASIBLE;
        }
    }
    let local = solve_assignment(&cost);
    Matching {
        pairs: local
            .pairs
            .iter()
            .map(|&(r, k)| (track_indices[r], detection_indices[k]))
            .collect(),
        unmatched_rows: local
            .unmatched_rows
            .iter()
            .map(|&r| track_indices[r])
            .collect(),
        unmatched_cols: local
            .unmatched_cols
            .iter()
            .map(|&k| detection_indices[k])
            .collect(),
    }
}

/// Age-prioritized matching: at depth `d` only tracks whose
/// `time_since_update == d` compete for the detections still unmatched.
///
/// `time_since_update[i]` is indexed by track index (the values in
/// `track_indices`).
pub fn matching_cascade<F>(
    time_since_update: &[u32],
    track_indices: &[usize],
    detection_indices: &[usize],
    max_depth: u32,
    threshold: f64,
    mut cost_fn: F,
) -> Matching
where
    F: FnMut(&[usize], &[usize]) -> CostMatrix,
{
    let mut unmatched_dets = detection_indices.to_vec();
    let mut pairs = Vec::new();
    for depth in 1..=max_depth {
        if unmatched_dets.is_empty() {
            break;
        }
        let level: Vec<usize> = track_indices
            .iter()
            .copied()
            .filter(|&t| time_since_update[t] == depth)
            .collect();
        if level.is_empty() {
            continue;
        }
        let m = min_cost_matching(&level, &unmatched_dets, threshold, &mut cost_fn);
        pairs.extend(m.pairs);
        unmatched_dets = m.unmatched_cols;
    }
    let matched: std::collections::HashSet<usize> = pairs.iter().map(|&(t, _)| t).collect();
    Matching {
        unmatched_rows: track_indices
            .iter()
            .copied()
            .filter(|t| !matched.contains(t))
            .collect(),
        pairs,
        unmatched_cols: unmatched_dets,
    }
}

/// Match on `1 - IoU`; pairs with cost above `max_iou_distance` are infeasible.
pub fn iou_matching(
    track_boxes: &[crate::geometry::BoundingBox],
    detection_boxes: &[crate::geometry::BoundingBox],
    track_indices: &[usize],
    detection_indices: &[usize],
    max_iou_distance: f64,
) -> Matching {
    min_cost_matching(
        track_indices,
        detection_indices,
        max_iou_distance,
        |ts, ds| {
            CostMatrix::from_fn(ts.len(), ds.len(), |r, k| {
                1.0 - track_boxes[ts[r]].overlap(&detection_boxes[ds[k]])
            })
        },
    )
}
