use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hungarian;
use crate::error::{Error, Result};
use crate::grid3d::Localization;

/// Threshold used throughout the evaluation protocol (nm).
pub const DEFAULT_MATCH_THRESHOLD: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Full 3D Euclidean distance.
    #[default]
    Euclidean3d,
    /// Distance in the x–y plane only.
    Lateral,
}

impl DistanceMode {
    pub fn distance(self, a: &Localization, b: &Localization) -> f64 {
        let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
        match self {
            DistanceMode::Euclidean3d => (dx * dx + dy * dy + dz * dz).sqrt(),
            DistanceMode::Lateral => (dx * dx + dy * dy).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt: usize,
    pub pred: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub threshold: f64,
    pub mode: DistanceMode,
}

/// Maximum-cardinality, minimum-total-distance matching between `gt` and
/// `pred` among pairs closer than `threshold`.
///
/// Disallowed pairs get a cost larger than any sum of allowed distances, so
/// the assignment first maximises the number of allowed pairs and then
/// minimises their total distance. Frames are ignored; see [`match_frames`].
pub fn match_points(
    gt: &[Localization],
    pred: &[Localization],
    threshold: f64,
    mode: DistanceMode,
) -> Result<MatchResult> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::config(format!("match threshold must be positive, got {threshold}")));
    }
    let gt_idx: Vec<usize> = (0..gt.len()).collect();
    let pred_idx: Vec<usize> = (0..pred.len()).collect();
    let pairs = assign(gt, pred, &gt_idx, &pred_idx, threshold, mode);
    Ok(summarize(pairs, gt.len(), pred.len(), threshold, mode))
}

/// Matches ground truth and predictions frame by frame and pools the result.
/// Pair indices refer to positions in the input slices.
pub fn match_frames(
    gt: &[Localization],
    pred: &[Localization],
    threshold: f64,
    mode: DistanceMode,
) -> Result<MatchResult> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::config(format!("match threshold must be positive, got {threshold}")));
    }
    let mut frames: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, l) in gt.iter().enumerate() {
        frames.entry(l.frame).or_default().0.push(i);
    }
    for (i, l) in pred.iter().enumerate() {
        frames.entry(l.frame).or_default().1.push(i);
    }
    let mut pairs = Vec::new();
    for (g, p) in frames.values() {
        pairs.extend(assign(gt, pred, g, p, threshold, mode));
    }
    Ok(summarize(pairs, gt.len(), pred.len(), threshold, mode))
}

fn assign(
    gt: &[Localization],
    pred: &[Localization],
    gt_idx: &[usize],
    pred_idx: &[usize],
    threshold: f64,
    mode: DistanceMode,
) -> Vec<MatchedPair> {
    let n = gt_idx.len().max(pred_idx.len());
    if gt_idx.is_empty() || pred_idx.is_empty() {
        return Vec::new();
    }
    let forbidden = threshold * (n as f64 + 1.0) + 1.0;
    let mut cost = vec![vec![forbidden; n]; n];
    let mut dist = vec![vec![f64::INFINITY; pred_idx.len()]; gt_idx.len()];
    for (r, &g) in gt_idx.iter().enumerate() {
        for (c, &p) in pred_idx.iter().enumerate() {
            let d = mode.distance(&gt[g], &pred[p]);
            dist[r][c] = d;
            if d <= threshold {
                cost[r][c] = d;
            }
        }
    }
    let assignment = hungarian::solve(&cost);
    let mut pairs = Vec::new();
    for (r, &c) in assignment.iter().enumerate() {
        if r < gt_idx.len() && c < pred_idx.len() && dist[r][c] <= threshold {
            pairs.push(MatchedPair { gt: gt_idx[r], pred: pred_idx[c], distance: dist[r][c] });
        }
    }
    pairs
}

fn summarize(
    mut pairs: Vec<MatchedPair>,
    n_gt: usize,
    n_pred: usize,
    threshold: f64,
    mode: DistanceMode,
) -> MatchResult {
    pairs.sort_by_key(|p| p.gt);
    let tp = pairs.len();
    MatchResult { pairs, tp, fp: n_pred - tp, fn_: n_gt - tp, threshold, mode }
}

/// `TP / (TP + FP + FN)`, defined as 1 when all three are zero.
pub fn jaccard(m: &MatchResult) -> f64 {
    jaccard_counts(m.tp, m.fp, m.fn_)
}

pub fn jaccard_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        tp as f64 / denom as f64
    }
}

/// Lateral and axial root-mean-square error over matched pairs, or `None`
/// when nothing matched.
pub fn rmse(m: &MatchResult, gt: &[Localization], pred: &[Localization]) -> Option<(f64, f64)> {
    if m.pairs.is_empty() {
        return None;
    }
    let n = m.pairs.len() as f64;
    let (mut lat, mut ax) = (0.0, 0.0);
    for p in &m.pairs {
        let (g, q) = (&gt[p.gt], &pred[p.pred]);
        lat += (g.x - q.x).powi(2) + (g.y - q.y).powi(2);
        ax += (g.z - q.z).powi(2);
    }
    Some(((lat / n).sqrt(), (ax / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(x: f64, y: f64, z: f64) -> Localization {
        Localization { frame: 0, x, y, z, photons: 1.0 }
    }

    #[test]
    fn identical_lists_match_completely() {
        let pts = vec![loc(0.0, 0.0, 0.0), loc(500.0, 10.0, -40.0), loc(900.0, 900.0, 300.0)];
        let m = match_points(&pts, &pts, 150.0, DistanceMode::Euclidean3d).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (3, 0, 0));
        assert!(m.pairs.iter().all(|p| p.distance == 0.0 && p.gt == p.pred));
        assert_eq!(rmse(&m, &pts, &pts), Some((0.0, 0.0)));
    }

    #[test]
    fn gate_excludes_distant_pairs() {
        let m = match_points(&[loc(0.0, 0.0, 0.0)], &[loc(0.0, 0.0, 200.0)], 150.0, DistanceMode::Euclidean3d)
            .unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
        let lateral =
            match_points(&[loc(0.0, 0.0, 0.0)], &[loc(0.0, 0.0, 200.0)], 150.0, DistanceMode::Lateral).unwrap();
        assert_eq!(lateral.tp, 1);
        assert!(match_points(&[], &[], 0.0, DistanceMode::Lateral).is_err());
    }

    #[test]
    fn empty_lists_are_valid() {
        let m = match_points(&[], &[loc(1.0, 1.0, 1.0)], 150.0, DistanceMode::Euclidean3d).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 0));
        assert_eq!(jaccard(&m), 0.0);
        assert_eq!(rmse(&m, &[], &[]), None);
        let none = match_points(&[], &[], 150.0, DistanceMode::Euclidean3d).unwrap();
        assert_eq!(jaccard(&none), 1.0);
    }

    #[test]
    fn jaccard_values() {
        assert_eq!(jaccard_counts(57, 2, 5), 0.890625);
        assert_eq!(format!("{:.2}", jaccard_counts(57, 2, 5)), "0.89");
        assert_eq!(jaccard_counts(5, 0, 0), 1.0);
        assert!((jaccard_counts(49, 1, 13) - 49.0 / 63.0).abs() < 1e-15);
        assert_eq!(format!("{:.3}", jaccard_counts(49, 1, 13)), "0.778");
    }

    #[test]
    fn rmse_of_a_single_pair() {
        let gt = [loc(0.0, 0.0, 0.0)];
        let pred = [loc(3.0, 4.0, 12.0)];
        let m = match_points(&gt, &pred, 150.0, DistanceMode::Euclidean3d).unwrap();
        let (lat, ax) = rmse(&m, &gt, &pred).unwrap();
        assert!((lat - 5.0).abs() < 1e-12 && (ax - 12.0).abs() < 1e-12);
    }

    #[test]
    fn frames_are_matched_separately() {
        let mut a = loc(0.0, 0.0, 0.0);
        let mut b = loc(0.0, 0.0, 0.0);
        a.frame = 0;
        b.frame = 1;
        let m = match_frames(&[a], &[b], 150.0, DistanceMode::Euclidean3d).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }
}
