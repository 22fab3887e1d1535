//! Nearest-neighbor descriptor matching with Lowe's ratio test.

use rayon::prelude::*;

use crate::describe::Descriptor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
    /// Best over second-best distance; 0 when `b` has a single entry.
    pub ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchOptions {
    pub ratio_threshold: f64,
    pub mutual: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            ratio_threshold: 0.8,
            mutual: false,
        }
    }
}

fn best_two(q: &Descriptor, set: &[Descriptor]) -> Option<(usize, f64, f64)> {
    let mut best = (usize::MAX, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (i, d) in set.iter().enumerate() {
        let dist = q.distance(d);
        if dist < best.1 {
            second = best.1;
            best = (i, dist);
        } else if dist < second {
            second = dist;
        }
    }
    (best.0 != usize::MAX).then_some((best.0, best.1, second))
}

fn ratio(best: f64, second: f64) -> f64 {
    if second.is_infinite() {
        0.0
    } else if second == 0.0 {
        1.0
    } else {
        best / second
    }
}

fn one_way(a: &[Descriptor], b: &[Descriptor], threshold: f64) -> Vec<Option<Match>> {
    a.par_iter()
        .enumerate()
        .map(|(i, q)| {
            let (j, d, s) = best_two(q, b)?;
            let r = ratio(d, s);
            (r < threshold).then_some(Match { index_a: i, index_b: j, distance: d, ratio: r })
        })
        .collect()
}

/// For each descriptor of `a`, its nearest neighbor in `b` if it passes the
/// ratio test. With `mutual`, the pair must also pass in the `b -> a`
/// direction with `a` as `b`'s nearest neighbor. Output is ordered by
/// `index_a`.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], opts: &MatchOptions) -> Vec<Match> {
    let forward = one_way(a, b, opts.ratio_threshold);
    if !opts.mutual {
        return forward.into_iter().flatten().collect();
    }
    let backward = one_way(b, a, opts.ratio_threshold);
    forward
        .into_iter()
        .flatten()
        .filter(|m| backward[m.index_b].is_some_and(|r| r.index_b == m.index_a))
        .collect()
}
