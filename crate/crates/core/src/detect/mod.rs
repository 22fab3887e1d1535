//! Joint scale and apparent-motion keypoint detection.
//!
//! Each octave becomes a [`JointVolume`] of DoG samples over space, level
//! and slope. Strict extrema of that volume are refined over
//! `(x, y, level)` with the slope held on its grid point.

mod extrema;
mod pipeline;
mod refine;

use std::collections::HashMap;

use rayon::prelude::*;

pub use extrema::{find_joint_extrema, Candidate, ExtremaOptions, JointVolume};
pub use refine::{refine_and_filter, Refined, RefineParams, Rejection};

pub(crate) use pipeline::{full_coverage_plane, Frames};

use crate::error::{Error, Result};
use crate::image::{Burst, Image};
use crate::motion::SlopeGrid;
use crate::scale_space::ScaleSpaceParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DetectorMode {
    Buff1D,
    Buff2D,
    Sift2D,
}

impl DetectorMode {
    pub fn name(self) -> &'static str {
        match self {
            DetectorMode::Buff1D => "buff-1d",
            DetectorMode::Buff2D => "buff-2d",
            DetectorMode::Sift2D => "sift-2d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "buff-1d" | "buff1d" => Some(DetectorMode::Buff1D),
            "buff-2d" | "buff2d" => Some(DetectorMode::Buff2D),
            "sift-2d" | "sift2d" | "sift" => Some(DetectorMode::Sift2D),
            _ => None,
        }
    }
}

/// Order in which the motion and scale operators are applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PipelineOrder {
    MotionFirst,
    ScaleFirst,
}

impl PipelineOrder {
    pub fn name(self) -> &'static str {
        match self {
            PipelineOrder::MotionFirst => "motion-first",
            PipelineOrder::ScaleFirst => "scale-first",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "motion-first" | "motion" => Some(PipelineOrder::MotionFirst),
            "scale-first" | "scale" => Some(PipelineOrder::ScaleFirst),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorParams {
    pub scale: ScaleSpaceParams,
    pub grid: SlopeGrid,
    /// Minimum |refined DoG response|.
    pub peak_threshold: f64,
    /// Principal curvature ratio bound.
    pub edge_threshold: f64,
    pub mode: DetectorMode,
    pub ordering: PipelineOrder,
    /// Allow extrema on the outermost slopes of the grid.
    pub slope_boundary: bool,
}

impl DetectorParams {
    pub fn new(mode: DetectorMode, grid: SlopeGrid) -> Self {
        DetectorParams {
            scale: ScaleSpaceParams::default(),
            grid,
            peak_threshold: 0.01,
            edge_threshold: 10.0,
            mode,
            ordering: PipelineOrder::MotionFirst,
            slope_boundary: true,
        }
    }

    /// Single-image detector with the default scale space.
    pub fn sift() -> Self {
        Self::new(DetectorMode::Sift2D, SlopeGrid::zero())
    }

    pub fn buff_1d(slopes: Vec<f64>) -> Result<Self> {
        Ok(Self::new(DetectorMode::Buff1D, SlopeGrid::new(slopes, vec![0.0])?))
    }

    pub fn buff_2d(grid: SlopeGrid) -> Self {
        Self::new(DetectorMode::Buff2D, grid)
    }

    pub fn with_threshold(self, peak_threshold: f64) -> Self {
        DetectorParams { peak_threshold, ..self }
    }

    pub fn with_scale(self, scale: ScaleSpaceParams) -> Self {
        DetectorParams { scale, ..self }
    }

    pub fn with_ordering(self, ordering: PipelineOrder) -> Self {
        DetectorParams { ordering, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        if !(self.peak_threshold >= 0.0) || !self.peak_threshold.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "peak threshold must be >= 0, got {}",
                self.peak_threshold
            )));
        }
        if !(self.edge_threshold >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "edge threshold must be >= 1, got {}",
                self.edge_threshold
            )));
        }
        if self.mode == DetectorMode::Buff1D && self.grid.slopes_v() != [0.0] {
            return Err(Error::InvalidParameter("1D mode requires vertical slopes {0}".into()));
        }
        Ok(())
    }

    fn refine_params(&self) -> RefineParams {
        RefineParams {
            peak_threshold: self.peak_threshold,
            edge_threshold: self.edge_threshold,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    /// Full-resolution position.
    pub u: f64,
    pub v: f64,
    /// Absolute scale in input pixels.
    pub sigma: f64,
    pub lambda_u: f64,
    pub lambda_v: f64,
    /// Refined DoG value.
    pub response: f64,
    pub octave: usize,
    /// Integer DoG level the fit converged on.
    pub level: usize,
    /// Fractional level within the octave.
    pub sublevel: f64,
    pub slope_u: usize,
    pub slope_v: usize,
    /// Radians; zero until oriented.
    pub orientation: f64,
    /// The slope sits on the outer edge of an active grid axis.
    pub on_slope_boundary: bool,
}

impl Keypoint {
    fn sort_key(&self) -> (usize, usize, usize, usize) {
        (self.octave, self.level, self.slope_v, self.slope_u)
    }
}

/// Detects keypoints in `burst`. In single-image mode only the reference
/// frame is used.
pub fn detect(burst: &Burst, params: &DetectorParams) -> Result<Vec<Keypoint>> {
    params.validate()?;
    if params.mode == DetectorMode::Sift2D {
        return detect_sift_baseline(burst.reference(), params);
    }
    let frames = Frames {
        frames: burst.frames(),
        offsets: burst.offsets().collect(),
    };
    run(&frames, &params.grid, params)
}

/// Single-image detection: the same machinery with both slope axes absent.
pub fn detect_sift_baseline(image: &Image, params: &DetectorParams) -> Result<Vec<Keypoint>> {
    params.validate()?;
    let frames = Frames {
        frames: std::slice::from_ref(image),
        offsets: vec![0],
    };
    let mut p = params.clone();
    p.grid = SlopeGrid::zero();
    run(&frames, &p.grid, &p)
}

fn run(frames: &Frames, grid: &SlopeGrid, params: &DetectorParams) -> Result<Vec<Keypoint>> {
    let (w, h) = frames.frames[0].dims();
    params.scale.check_size(w, h)?;
    let mut all = Vec::new();
    let visit = |o: usize, vol: &JointVolume| -> Result<()> {
        all.extend(keypoints_in_octave(o, vol, grid, params));
        Ok(())
    };
    match params.ordering {
        PipelineOrder::MotionFirst => pipeline::motion_first(frames, grid, &params.scale, visit)?,
        PipelineOrder::ScaleFirst => pipeline::scale_first(frames, grid, &params.scale, visit)?,
    }
    let mut kept = suppress_duplicates(all);
    sort_canonical(&mut kept);
    debug_assert!(kept.iter().all(|k| k.response.abs() >= params.peak_threshold));
    Ok(kept)
}

/// Extrema, refinement and scale filtering for one octave's volume.
pub fn keypoints_in_octave(octave: usize, vol: &JointVolume, grid: &SlopeGrid, params: &DetectorParams) -> Vec<Keypoint> {
    let opts = ExtremaOptions {
        slope_boundary: params.slope_boundary,
        min_abs: (0.5 * params.peak_threshold) as f32,
    };
    let rp = params.refine_params();
    let sp = &params.scale;
    let step = sp.octave_step(octave);
    let (lo, hi) = (sp.sigma0, sp.sigma0 * 2f64.powi(sp.octaves as i32));
    let (nu, nv) = (vol.slopes_u(), vol.slopes_v());
    find_joint_extrema(vol, &opts)
        .par_iter()
        .filter_map(|c| refine_and_filter(c, vol, &rp).ok())
        .filter_map(|r| {
            let sigma = sp.sigma(octave, r.level);
            if !(lo..=hi).contains(&sigma) {
                return None;
            }
            let (iu, iv) = (r.at.slope_u, r.at.slope_v);
            let (lu, lv) = grid.slope(iu, iv);
            let edge = |i: usize, n: usize| n > 1 && (i == 0 || i == n - 1);
            Some(Keypoint {
                u: r.x * step,
                v: r.y * step,
                sigma,
                lambda_u: lu,
                lambda_v: lv,
                response: r.response,
                octave,
                level: r.at.level,
                sublevel: r.level,
                slope_u: iu,
                slope_v: iv,
                orientation: 0.0,
                on_slope_boundary: edge(iu, nu) || edge(iv, nv),
            })
        })
        .collect()
}

const DUPLICATE_RADIUS: f64 = 0.5;

/// Among keypoints within 0.5 px sharing octave and level whose slope
/// cells touch, keeps the strongest |response|.
pub fn suppress_duplicates(mut kps: Vec<Keypoint>) -> Vec<Keypoint> {
    kps.sort_by(|a, b| {
        b.response
            .abs()
            .total_cmp(&a.response.abs())
            .then(a.sort_key().cmp(&b.sort_key()))
            .then(a.v.total_cmp(&b.v))
            .then(a.u.total_cmp(&b.u))
    });
    let mut buckets: HashMap<(usize, usize, i64, i64), Vec<usize>> = HashMap::new();
    let mut kept: Vec<Keypoint> = Vec::with_capacity(kps.len());
    for k in kps {
        let (bx, by) = (k.u.floor() as i64, k.v.floor() as i64);
        let mut dup = false;
        'scan: for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(ids) = buckets.get(&(k.octave, k.level, bx + dx, by + dy)) {
                    for &i in ids {
                        let o = &kept[i];
                        if o.slope_u.abs_diff(k.slope_u) <= 1
                            && o.slope_v.abs_diff(k.slope_v) <= 1
                            && (o.u - k.u).hypot(o.v - k.v) <= DUPLICATE_RADIUS
                        {
                            dup = true;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if !dup {
            buckets.entry((k.octave, k.level, bx, by)).or_default().push(kept.len());
            kept.push(k);
        }
    }
    kept
}

/// Sorts by (octave, level, slope indices, v, u).
pub fn sort_canonical(kps: &mut [Keypoint]) {
    kps.sort_by(|a, b| {
        a.sort_key()
            .cmp(&b.sort_key())
            .then(a.v.total_cmp(&b.v))
            .then(a.u.total_cmp(&b.u))
    });
}
