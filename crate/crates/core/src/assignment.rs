//! Bipartite matching: optimal (Hungarian) and greedy score-ordered.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("cost matrix contains a non-finite value at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("cost matrix row {0} has {1} columns, expected {2}")]
    Ragged(usize, usize, usize),
}

/// Minimum-cost assignment of `min(n, m)` row/column pairs.
///
/// Shortest augmenting paths with dual potentials, `O(n² m)` for `n <= m`;
/// taller matrices are solved transposed. Pairs come back sorted by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>, AssignmentError> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    for (i, row) in cost.iter().enumerate() {
        if row.len() != m {
            return Err(AssignmentError::Ragged(i, row.len(), m));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(AssignmentError::NonFinite(i, j));
        }
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    if n > m {
        let transposed: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = solve_wide(&transposed).into_iter().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        return Ok(pairs);
    }
    Ok(solve_wide(cost))
}

/// Requires `rows <= cols`. Indices in the inner arrays are 1-based with 0
/// as the virtual source column.
fn solve_wide(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost[0].len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Outcome of greedy matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyMatch {
    /// Matched ground-truth index per detection; `None` is a false positive.
    pub detections: Vec<Option<usize>>,
    /// Whether each ground truth was matched.
    pub gt_matched: Vec<bool>,
}

impl GreedyMatch {
    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|d| d.is_some()).count()
    }
}

/// COCO-style greedy matching.
///
/// `detections` must already be in descending score order (ties by
/// ascending detection id). Each detection takes the unmatched ground truth
/// with the highest IoU at or above `threshold`; IoU ties go to the lower
/// ground-truth index.
pub fn greedy_match<D, G>(detections: &[D], gts: &[G], iou: impl Fn(&D, &G) -> f64, threshold: f64) -> GreedyMatch {
    let mut gt_matched = vec![false; gts.len()];
    let detections = detections
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if gt_matched[j] {
                    continue;
                }
                let v = iou(d, g);
                if v >= threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            best.map(|(j, _)| {
                gt_matched[j] = true;
                j
            })
        })
        .collect();
    GreedyMatch { detections, gt_matched }
}
