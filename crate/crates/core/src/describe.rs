//! Orientation assignment and gradient-histogram descriptors measured on
//! the Gaussian-blurred shift-sum surface at each keypoint's slope.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::detect::{full_coverage_plane, DetectorParams, Frames, Keypoint};
use crate::error::{Error, Result};
use crate::image::{Burst, Image};
use crate::motion::SlopeGrid;
use crate::scale_space::{build_gaussian_pyramid, GaussianPyramid, ScaleSpaceParams};

pub const DESCRIPTOR_LEN: usize = 128;

const ORIENTATION_BINS: usize = 36;
const ORIENTATION_WINDOW: f64 = 1.5;
const ORIENTATION_PEAK: f64 = 0.8;
const ORIENTATION_SMOOTHING: usize = 6;
const SPATIAL_BINS: usize = 4;
const ANGLE_BINS: usize = 8;
const MAGNIFICATION: f64 = 3.0;
const CLAMP: f32 = 0.2;

/// L1-root normalized 4x4x8 gradient histogram.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Descriptor {
    values: [f32; DESCRIPTOR_LEN],
}

impl Descriptor {
    pub fn values(&self) -> &[f32; DESCRIPTOR_LEN] {
        &self.values
    }

    /// Wraps already-normalized values.
    pub fn from_values(values: [f32; DESCRIPTOR_LEN]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("descriptor entries must be finite and >= 0".into()));
        }
        Ok(Descriptor { values })
    }

    /// Normalizes a raw histogram: unit L2, clamp, unit L2, then divide by
    /// the L1 norm and take square roots. `None` for an all-zero histogram.
    pub fn from_histogram(hist: &[f32; DESCRIPTOR_LEN]) -> Option<Self> {
        let l2 = |h: &[f32]| h.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        let n = l2(hist);
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        let mut v: Vec<f64> = hist.iter().map(|&x| (x as f64 / n).min(CLAMP as f64)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        let l1: f64 = v.iter().sum();
        let mut values = [0.0f32; DESCRIPTOR_LEN];
        for (o, x) in values.iter_mut().zip(&v) {
            *o = (x / l1).sqrt() as f32;
        }
        Some(Descriptor { values })
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// A described keypoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

/// What the description surfaces are built from.
#[derive(Clone, Copy, Debug)]
pub enum DescriptionSource<'a> {
    /// Shift-sum surfaces of a burst at grid slopes.
    Burst { burst: &'a Burst, grid: &'a SlopeGrid },
    /// A single image: input frame or merged burst.
    Image(&'a Image),
}

/// Lazily built Gaussian pyramids, one per slope cell.
pub struct PyramidCache<'a> {
    source: DescriptionSource<'a>,
    scale: ScaleSpaceParams,
    pyramids: HashMap<(usize, usize), GaussianPyramid>,
}

impl<'a> PyramidCache<'a> {
    pub fn new(source: DescriptionSource<'a>, scale: ScaleSpaceParams) -> Self {
        PyramidCache {
            source,
            scale,
            pyramids: HashMap::new(),
        }
    }

    fn cell_of(&self, k: &Keypoint) -> Result<(usize, usize)> {
        match self.source {
            DescriptionSource::Image(_) => Ok((0, 0)),
            DescriptionSource::Burst { grid, .. } => grid
                .index_of((k.lambda_u, k.lambda_v))
                .ok_or(Error::SlopeNotInGrid(k.lambda_u, k.lambda_v)),
        }
    }

    /// Pyramid for a slope cell, built on first use.
    pub fn pyramid(&mut self, cell: (usize, usize)) -> Result<&GaussianPyramid> {
        if !self.pyramids.contains_key(&cell) {
            let p = build_surface_pyramid(self.source, cell, &self.scale)?;
            self.pyramids.insert(cell, p);
        }
        Ok(&self.pyramids[&cell])
    }

    pub fn evict(&mut self, cell: (usize, usize)) {
        self.pyramids.remove(&cell);
    }
}

fn build_surface_pyramid(source: DescriptionSource, cell: (usize, usize), scale: &ScaleSpaceParams) -> Result<GaussianPyramid> {
    match source {
        DescriptionSource::Image(img) => build_gaussian_pyramid(img, scale),
        DescriptionSource::Burst { burst, grid } => {
            let frames = Frames {
                frames: burst.frames(),
                offsets: burst.offsets().collect(),
            };
            let slope = grid.slope(cell.0, cell.1);
            let surface = full_coverage_plane(&frames, slope).to_image();
            if surface.valid_count() == 0 {
                return Err(Error::NoValidPixels(slope.0, slope.1));
            }
            build_gaussian_pyramid(&surface, scale)
        }
    }
}

/// The Gaussian level image on which the keypoint is described.
pub fn description_image(cache: &mut PyramidCache, keypoint: &Keypoint) -> Result<Image> {
    let cell = cache.cell_of(keypoint)?;
    let p = cache.pyramid(cell)?;
    Ok(level_of(p, keypoint)?.clone())
}

fn level_of<'p>(p: &'p GaussianPyramid, k: &Keypoint) -> Result<&'p Image> {
    if k.octave >= p.octaves() || k.level >= p.octave(k.octave).len() {
        return Err(Error::InvalidParameter(format!(
            "keypoint octave {} level {} outside the pyramid",
            k.octave, k.level
        )));
    }
    Ok(p.level(k.octave, k.level))
}

/// Keypoint geometry in the sampling grid of its octave.
struct Local {
    x: f64,
    y: f64,
    sigma: f64,
}

fn local(k: &Keypoint, scale: &ScaleSpaceParams) -> Local {
    let step = scale.octave_step(k.octave);
    Local {
        x: k.u / step,
        y: k.v / step,
        sigma: scale.octave_sigma(k.sublevel),
    }
}

/// Central-difference gradient `(gx, gy)` at an interior pixel whose
/// four neighbors are valid.
#[inline]
fn gradient(img: &Image, x: i64, y: i64) -> Option<(f64, f64)> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if x < 1 || y < 1 || x >= w - 1 || y >= h - 1 {
        return None;
    }
    let (x, y) = (x as usize, y as usize);
    let ok = img.is_valid(x, y)
        && img.is_valid(x - 1, y)
        && img.is_valid(x + 1, y)
        && img.is_valid(x, y - 1)
        && img.is_valid(x, y + 1);
    if !ok {
        return None;
    }
    let gx = 0.5 * (img.get(x + 1, y) as f64 - img.get(x - 1, y) as f64);
    let gy = 0.5 * (img.get(x, y + 1) as f64 - img.get(x, y - 1) as f64);
    Some((gx, gy))
}

/// Dominant gradient orientations. Every histogram peak within 80% of the
/// maximum yields one copy of the keypoint. A window without valid
/// gradients yields nothing; a valid but flat window yields one copy at
/// angle zero.
pub fn assign_orientations(keypoint: &Keypoint, image: &Image, scale: &ScaleSpaceParams) -> Vec<Keypoint> {
    let l = local(keypoint, scale);
    let sw = ORIENTATION_WINDOW * l.sigma;
    let r = (3.0 * sw).round().max(1.0) as i64;
    let (cx, cy) = (l.x.round() as i64, l.y.round() as i64);
    let mut hist = [0.0f64; ORIENTATION_BINS];
    let mut any = false;
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            let (dx, dy) = (x as f64 - l.x, y as f64 - l.y);
            let d2 = dx * dx + dy * dy;
            if d2 > (r * r) as f64 + 0.6 {
                continue;
            }
            let Some((gx, gy)) = gradient(image, x, y) else {
                continue;
            };
            any = true;
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let wgt = (-d2 / (2.0 * sw * sw)).exp() * mag;
            let t = gy.atan2(gx).rem_euclid(TAU) / TAU * ORIENTATION_BINS as f64;
            let b = t.floor();
            let f = t - b;
            let b = (b as i64).rem_euclid(ORIENTATION_BINS as i64) as usize;
            hist[b] += (1.0 - f) * wgt;
            hist[(b + 1) % ORIENTATION_BINS] += f * wgt;
        }
    }
    if !any {
        return Vec::new();
    }
    for _ in 0..ORIENTATION_SMOOTHING {
        let prev = hist;
        for i in 0..ORIENTATION_BINS {
            let a = prev[(i + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
            let c = prev[(i + 1) % ORIENTATION_BINS];
            hist[i] = (a + prev[i] + c) / 3.0;
        }
    }
    let max = hist.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![Keypoint { orientation: 0.0, ..*keypoint }];
    }
    let mut out = Vec::new();
    for i in 0..ORIENTATION_BINS {
        let a = hist[(i + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
        let c = hist[(i + 1) % ORIENTATION_BINS];
        let v = hist[i];
        if v > a && v > c && v >= ORIENTATION_PEAK * max {
            let den = a - 2.0 * v + c;
            let off = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
            let theta = ((i as f64 + off) / ORIENTATION_BINS as f64 * TAU).rem_euclid(TAU);
            out.push(Keypoint { orientation: theta, ..*keypoint });
        }
    }
    if out.is_empty() {
        // A perfectly flat top without a strict peak.
        let i = hist.iter().position(|&v| v == max).unwrap();
        let theta = i as f64 / ORIENTATION_BINS as f64 * TAU;
        out.push(Keypoint { orientation: theta, ..*keypoint });
    }
    out
}

/// Gradient histogram over a window rotated to the keypoint orientation.
/// `None` when the window has no usable gradient.
pub fn compute_descriptor(keypoint: &Keypoint, image: &Image, scale: &ScaleSpaceParams) -> Option<Descriptor> {
    let l = local(keypoint, scale);
    let bin = MAGNIFICATION * l.sigma;
    let nb = SPATIAL_BINS as f64;
    let half = (std::f64::consts::SQRT_2 * bin * (nb + 1.0) * 0.5 + 0.5).floor() as i64;
    let (c, s) = (keypoint.orientation.cos(), keypoint.orientation.sin());
    let (cx, cy) = (l.x.round() as i64, l.y.round() as i64);
    let win = nb / 2.0;
    let mut hist = [0.0f32; DESCRIPTOR_LEN];
    for y in cy - half..=cy + half {
        for x in cx - half..=cx + half {
            let (dx, dy) = (x as f64 - l.x, y as f64 - l.y);
            // Offset in the keypoint frame, in bin units.
            let nx = (c * dx + s * dy) / bin;
            let ny = (-s * dx + c * dy) / bin;
            let bx = nx + win - 0.5;
            let by = ny + win - 0.5;
            if bx <= -1.0 || by <= -1.0 || bx >= nb || by >= nb {
                continue;
            }
            let Some((gx, gy)) = gradient(image, x, y) else {
                continue;
            };
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let wgt = (-(nx * nx + ny * ny) / (2.0 * win * win)).exp() * mag;
            let ang = (gy.atan2(gx) - keypoint.orientation).rem_euclid(TAU);
            let bt = ang / TAU * ANGLE_BINS as f64;
            let (x0, y0, t0) = (bx.floor(), by.floor(), bt.floor());
            let (fx, fy, ft) = (bx - x0, by - y0, bt - t0);
            for (ix, wx) in [(x0 as i64, 1.0 - fx), (x0 as i64 + 1, fx)] {
                if ix < 0 || ix >= SPATIAL_BINS as i64 || wx == 0.0 {
                    continue;
                }
                for (iy, wy) in [(y0 as i64, 1.0 - fy), (y0 as i64 + 1, fy)] {
                    if iy < 0 || iy >= SPATIAL_BINS as i64 || wy == 0.0 {
                        continue;
                    }
                    for (it, wt) in [(t0 as i64, 1.0 - ft), (t0 as i64 + 1, ft)] {
                        let it = it.rem_euclid(ANGLE_BINS as i64) as usize;
                        let idx = (iy as usize * SPATIAL_BINS + ix as usize) * ANGLE_BINS + it;
                        hist[idx] += (wgt * wx * wy * wt) as f32;
                    }
                }
            }
        }
    }
    Descriptor::from_histogram(&hist)
}

/// Orients and describes keypoints. Output follows input order, with
/// multiple orientations of one keypoint adjacent.
pub fn describe_keypoints(
    source: DescriptionSource,
    keypoints: &[Keypoint],
    scale: &ScaleSpaceParams,
) -> Result<Vec<Feature>> {
    let mut cache = PyramidCache::new(source, *scale);
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, k) in keypoints.iter().enumerate() {
        groups.entry(cache.cell_of(k)?).or_default().push(i);
    }
    let mut per_kp: Vec<Vec<Feature>> = vec![Vec::new(); keypoints.len()];
    for (cell, ids) in groups {
        let pyr = cache.pyramid(cell)?;
        let described: Vec<(usize, Vec<Feature>)> = ids
            .par_iter()
            .map(|&i| -> Result<(usize, Vec<Feature>)> {
                let k = &keypoints[i];
                let img = level_of(pyr, k)?;
                let feats = assign_orientations(k, img, scale)
                    .into_iter()
                    .filter_map(|ok| {
                        compute_descriptor(&ok, img, scale).map(|descriptor| Feature { keypoint: ok, descriptor })
                    })
                    .collect();
                Ok((i, feats))
            })
            .collect::<Result<_>>()?;
        for (i, f) in described {
            per_kp[i] = f;
        }
        cache.evict(cell);
    }
    Ok(per_kp.into_iter().flatten().collect())
}

/// Detection followed by description with matching surfaces.
pub fn detect_and_describe(burst: &Burst, params: &DetectorParams) -> Result<Vec<Feature>> {
    use crate::detect::DetectorMode;
    let kps = crate::detect::detect(burst, params)?;
    let source = match params.mode {
        DetectorMode::Sift2D => DescriptionSource::Image(burst.reference()),
        _ => DescriptionSource::Burst { burst, grid: &params.grid },
    };
    describe_keypoints(source, &kps, &params.scale)
}

#[cfg(test)]
mod tests;
