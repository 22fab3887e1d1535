//! Detection and matching evaluation against synthetic ground truth.

mod scene;

pub use scene::*;

use crate::detect::Keypoint;
use crate::error::{Error, Result};
use crate::matching::Match;
use crate::synth::GroundTruth;

/// Detection-to-ground-truth acceptance tolerances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    /// Minimum spatial radius; the effective radius is `max(spatial_px, 0.25 sigma_gt)`.
    pub spatial_px: f64,
    pub scale_octaves: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            spatial_px: 3.0,
            scale_octaves: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub tpr: f64,
    /// `(gt index, keypoint index)` pairs.
    pub assignment: Vec<(usize, usize)>,
}

/// Greedy nearest-first one-to-one assignment of detections to ground truth.
pub fn classify_detections(gt: &GroundTruth, kps: &[Keypoint], tol: &Tolerance) -> ClassificationResult {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, g) in gt.features.iter().enumerate() {
        let radius = tol.spatial_px.max(0.25 * g.sigma);
        for (j, k) in kps.iter().enumerate() {
            let d = (k.u - g.u).hypot(k.v - g.v);
            if d <= radius && (k.sigma / g.sigma).log2().abs() <= tol.scale_octaves {
                pairs.push((d, i, j));
            }
        }
    }
    // Ties resolve on keypoint geometry so the result does not depend on
    // the order of `kps`.
    pairs.sort_by(|a, b| {
        let (ka, kb) = (&kps[a.2], &kps[b.2]);
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(ka.u.total_cmp(&kb.u))
            .then(ka.v.total_cmp(&kb.v))
            .then(ka.sigma.total_cmp(&kb.sigma))
            .then(ka.response.total_cmp(&kb.response))
            .then(ka.slope_v.cmp(&kb.slope_v))
            .then(ka.slope_u.cmp(&kb.slope_u))
    });
    let mut gt_used = vec![false; gt.features.len()];
    let mut kp_used = vec![false; kps.len()];
    let mut assignment = Vec::new();
    for (_, i, j) in pairs {
        if !gt_used[i] && !kp_used[j] {
            gt_used[i] = true;
            kp_used[j] = true;
            assignment.push((i, j));
        }
    }
    assignment.sort();
    let tp = assignment.len();
    ClassificationResult {
        tp,
        fp: kps.len() - tp,
        fn_count: gt.features.len() - tp,
        tpr: if gt.features.is_empty() { 0.0 } else { tp as f64 / gt.features.len() as f64 },
        assignment,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
}

impl RocPoint {
    /// Fraction of detections that are false; zero with no detections.
    pub fn fp_fraction(&self) -> f64 {
        let n = self.tp + self.fp;
        if n == 0 {
            0.0
        } else {
            self.fp as f64 / n as f64
        }
    }
}

/// Operating points ordered by descending threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    points: Vec<RocPoint>,
}

impl RocCurve {
    /// Checks ordering and monotonicity: as the threshold decreases neither
    /// tpr nor the false positive count may decrease.
    pub fn new(points: Vec<RocPoint>) -> Result<Self> {
        for w in points.windows(2) {
            let (hi, lo) = (&w[0], &w[1]);
            if !(hi.threshold > lo.threshold) {
                return Err(Error::InvalidParameter("ROC thresholds must be strictly descending".into()));
            }
            if lo.fp < hi.fp || lo.tpr < hi.tpr {
                return Err(Error::InvalidParameter(format!(
                    "ROC not monotone between thresholds {} and {}",
                    hi.threshold, lo.threshold
                )));
            }
        }
        Ok(RocCurve { points })
    }

    pub fn points(&self) -> &[RocPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,tpr,fp\n");
        for p in &self.points {
            s.push_str(&format!("{:.6e},{:.6},{}\n", p.threshold, p.tpr, p.fp));
        }
        s
    }
}

/// `n` thresholds from `hi` down to `lo`, geometrically spaced.
pub fn threshold_ladder(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![hi],
        _ => (0..n)
            .map(|i| hi * (lo / hi).powf(i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Classifies the subset of `kps` with `|response| >= t` for every threshold.
/// `kps` must come from one detection pass at or below the smallest threshold.
pub fn roc_from_detections(gt: &GroundTruth, kps: &[Keypoint], thresholds: &[f64], tol: &Tolerance) -> Result<RocCurve> {
    let mut sorted: Vec<&Keypoint> = kps.iter().collect();
    sorted.sort_by(|a, b| b.response.abs().total_cmp(&a.response.abs()));
    let points = thresholds
        .iter()
        .map(|&t| {
            let n = sorted.partition_point(|k| k.response.abs() >= t);
            let subset: Vec<Keypoint> = sorted[..n].iter().map(|k| **k).collect();
            let c = classify_detections(gt, &subset, tol);
            RocPoint {
                threshold: t,
                tpr: c.tpr,
                tp: c.tp,
                fp: c.fp,
            }
        })
        .collect();
    RocCurve::new(points)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdSelection {
    pub threshold: f64,
    pub point: RocPoint,
    /// False when no operating point met the budget; `threshold` is then the strictest one.
    pub within_budget: bool,
}

/// Among points with `fp / (tp + fp) <= fp_fraction`, the one with the
/// highest tpr, ties going to the higher threshold.
pub fn select_peak_threshold(roc: &RocCurve, fp_fraction: f64) -> Result<ThresholdSelection> {
    let first = *roc
        .points
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty ROC curve".into()))?;
    let mut best: Option<RocPoint> = None;
    for p in &roc.points {
        if p.fp_fraction() <= fp_fraction && best.is_none_or(|b| p.tpr > b.tpr) {
            best = Some(*p);
        }
    }
    Ok(match best {
        Some(p) => ThresholdSelection {
            threshold: p.threshold,
            point: p,
            within_budget: true,
        },
        None => ThresholdSelection {
            threshold: first.threshold,
            point: first,
            within_budget: false,
        },
    })
}

/// Table-style matching metrics between two views.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub keypoints_per_image: f64,
    pub putative_matches_per_image: f64,
    pub inlier_matches_per_image: f64,
    pub match_ratio: f64,
    pub match_score: f64,
    pub precision: f64,
    /// No keypoints in either view; all rates are zero.
    pub degenerate: bool,
}

/// `displacement` maps a position in view `a` to view `b`. Matches are
/// putative; an inlier lands within `inlier_tol_px` of the mapped position.
pub fn compute_match_metrics(
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    matches: &[Match],
    displacement: (f64, f64),
    inlier_tol_px: f64,
) -> Result<MetricsReport> {
    if !(inlier_tol_px > 0.0) {
        return Err(Error::InvalidParameter("inlier tolerance must be positive".into()));
    }
    let keypoints = 0.5 * (kps_a.len() + kps_b.len()) as f64;
    if keypoints == 0.0 {
        return Ok(MetricsReport {
            keypoints_per_image: 0.0,
            putative_matches_per_image: 0.0,
            inlier_matches_per_image: 0.0,
            match_ratio: 0.0,
            match_score: 0.0,
            precision: 0.0,
            degenerate: true,
        });
    }
    let mut inliers = 0usize;
    for m in matches {
        let (a, b) = match (kps_a.get(m.index_a), kps_b.get(m.index_b)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::InvalidParameter(format!("match ({}, {}) out of range", m.index_a, m.index_b))),
        };
        let (eu, ev) = (a.u + displacement.0, a.v + displacement.1);
        if (b.u - eu).hypot(b.v - ev) <= inlier_tol_px {
            inliers += 1;
        }
    }
    let putative = matches.len() as f64;
    let inliers = inliers as f64;
    Ok(MetricsReport {
        keypoints_per_image: keypoints,
        putative_matches_per_image: putative,
        inlier_matches_per_image: inliers,
        match_ratio: putative / keypoints,
        match_score: inliers / keypoints,
        precision: if putative > 0.0 { inliers / putative } else { 0.0 },
        degenerate: false,
    })
}
