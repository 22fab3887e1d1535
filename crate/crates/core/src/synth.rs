//! Synthetic disk targets with known ground truth, burst simulation under
//! linear apparent motion, and seeded sensor noise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::{Burst, Image};

/// Largest total apparent motion over a burst, in pixels.
pub const MAX_TOTAL_SHIFT: f64 = 30.0;

/// Default foreground/background contrast ratio of generated targets.
pub const DEFAULT_CONTRAST: f32 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disk {
    pub center: (f64, f64),
    pub radius: f64,
    pub foreground: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSpec {
    pub width: usize,
    pub height: usize,
    pub background: f32,
    pub disks: Vec<Disk>,
}

impl TargetSpec {
    pub fn new(width: usize, height: usize, background: f32) -> Self {
        TargetSpec {
            width,
            height,
            background,
            disks: Vec::new(),
        }
    }

    /// Adds a disk whose foreground is `contrast * background`.
    pub fn with_disk(mut self, center: (f64, f64), radius: f64, contrast: f32) -> Self {
        self.disks.push(Disk {
            center,
            radius,
            foreground: self.background * contrast,
        });
        self
    }

    fn validate(&self) -> Result<()> {
        for (i, d) in self.disks.iter().enumerate() {
            if !(d.radius > 0.0) {
                return Err(Error::Layout {
                    index: i,
                    reason: format!("radius {} must be positive", d.radius),
                });
            }
            let m = 2.0 * d.radius;
            let (u, v) = d.center;
            if u < m || v < m || u > self.width as f64 - 1.0 - m || v > self.height as f64 - 1.0 - m {
                return Err(Error::Layout {
                    index: i,
                    reason: format!(
                        "center ({u}, {v}) closer than 2*radius to the border of a {}x{} image",
                        self.width, self.height
                    ),
                });
            }
            for (j, e) in self.disks.iter().enumerate().take(i) {
                let dist = (d.center.0 - e.center.0).hypot(d.center.1 - e.center.1);
                if dist < d.radius + e.radius {
                    return Err(Error::Layout {
                        index: i,
                        reason: format!("overlaps disk {j}"),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtFeature {
    pub u: f64,
    pub v: f64,
    pub sigma: f64,
    pub lambda_u: f64,
    pub lambda_v: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub features: Vec<GtFeature>,
}

/// Blob scale matched to a disk of the given radius.
pub fn disk_sigma(radius: f64) -> f64 {
    radius / std::f64::consts::SQRT_2
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Plain-text sidecar, one `u v sigma lambda_u lambda_v` line per feature.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.features {
            writeln!(
                s,
                "{:.6} {:.6} {:.6} {:.6} {:.6}",
                f.u, f.v, f.sigma, f.lambda_u, f.lambda_v
            )
            .unwrap();
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<GroundTruth> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut features = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::malformed(path, format!("line {}: bad number", n + 1)))?;
            let [u, v, sigma, lambda_u, lambda_v] = vals[..] else {
                return Err(Error::malformed(path, format!("line {}: expected 5 fields", n + 1)));
            };
            features.push(GtFeature {
                u,
                v,
                sigma,
                lambda_u,
                lambda_v,
            });
        }
        Ok(GroundTruth { features })
    }
}

/// Fraction of the unit pixel centered at `(px, py)` covered by a disk,
/// estimated on a `ss x ss` grid of subsamples.
fn coverage(px: f64, py: f64, center: (f64, f64), radius: f64, ss: usize) -> f64 {
    let dx = (px - center.0).abs();
    let dy = (py - center.1).abs();
    // Fast paths: pixel entirely inside or outside.
    let half_diag = std::f64::consts::FRAC_1_SQRT_2;
    let d = dx.hypot(dy);
    if d + half_diag <= radius {
        return 1.0;
    }
    if d - half_diag >= radius {
        return 0.0;
    }
    let r2 = radius * radius;
    let step = 1.0 / ss as f64;
    let mut inside = 0usize;
    for j in 0..ss {
        let sy = py - 0.5 + (j as f64 + 0.5) * step - center.1;
        for i in 0..ss {
            let sx = px - 0.5 + (i as f64 + 0.5) * step - center.0;
            if sx * sx + sy * sy <= r2 {
                inside += 1;
            }
        }
    }
    inside as f64 / (ss * ss) as f64
}

fn paint_disks(
    width: usize,
    height: usize,
    background: f32,
    disks: impl Iterator<Item = Disk>,
    supersample: usize,
) -> Image {
    let mut data = vec![background as f64; width * height];
    for disk in disks {
        let r = disk.radius + 1.0;
        let x0 = (disk.center.0 - r).floor().max(0.0) as usize;
        let y0 = (disk.center.1 - r).floor().max(0.0) as usize;
        let x1 = ((disk.center.0 + r).ceil() as usize).min(width - 1);
        let y1 = ((disk.center.1 + r).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let c = coverage(x as f64, y as f64, disk.center, disk.radius, supersample);
                if c > 0.0 {
                    let i = y * width + x;
                    data[i] = data[i] * (1.0 - c) + disk.foreground as f64 * c;
                }
            }
        }
    }
    Image::from_parts(
        width,
        height,
        data.into_iter().map(|v| v as f32).collect(),
        vec![true; width * height],
    )
}

/// Renders anti-aliased disks by supersampled area coverage.
pub fn render_target(spec: &TargetSpec, supersample: usize) -> Result<(Image, GroundTruth)> {
    if supersample == 0 {
        return Err(Error::InvalidParameter("supersample must be >= 1".into()));
    }
    spec.validate()?;
    let img = paint_disks(
        spec.width,
        spec.height,
        spec.background,
        spec.disks.iter().copied(),
        supersample,
    );
    let gt = GroundTruth {
        features: spec
            .disks
            .iter()
            .map(|d| GtFeature {
                u: d.center.0,
                v: d.center.1,
                sigma: disk_sigma(d.radius),
                lambda_u: 0.0,
                lambda_v: 0.0,
            })
            .collect(),
    };
    Ok((img, gt))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionMode {
    OneD,
    TwoD,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionSpec {
    pub mode: MotionMode,
    /// Per-frame displacement `(du, dv)` in pixels per frame.
    pub shift: (f64, f64),
    pub frames: usize,
}

impl MotionSpec {
    pub fn one_d(du: f64, frames: usize) -> Self {
        MotionSpec {
            mode: MotionMode::OneD,
            shift: (du, 0.0),
            frames,
        }
    }

    pub fn two_d(du: f64, dv: f64, frames: usize) -> Self {
        MotionSpec {
            mode: MotionMode::TwoD,
            shift: (du, dv),
            frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::InvalidParameter(format!(
                "burst needs at least 2 frames, got {}",
                self.frames
            )));
        }
        if self.mode == MotionMode::OneD && self.shift.1 != 0.0 {
            return Err(Error::InvalidParameter(format!(
                "1D motion must have zero vertical shift, got {}",
                self.shift.1
            )));
        }
        let total = (self.frames - 1) as f64 * self.shift.0.hypot(self.shift.1);
        if total > MAX_TOTAL_SHIFT {
            return Err(Error::InvalidParameter(format!(
                "total apparent motion {total:.2} px exceeds {MAX_TOTAL_SHIFT} px"
            )));
        }
        Ok(())
    }
}

fn check_disk_in_frame(gt: &GroundTruth, width: usize, height: usize, offsets: &[(f64, f64)]) -> Result<()> {
    for (i, f) in gt.features.iter().enumerate() {
        let r = f.sigma * std::f64::consts::SQRT_2;
        for &(du, dv) in offsets {
            let (u, v) = (f.u + du, f.v + dv);
            if u - r < 0.0 || v - r < 0.0 || u + r > (width - 1) as f64 || v + r > (height - 1) as f64 {
                return Err(Error::Layout {
                    index: i,
                    reason: format!("shift ({du:.2}, {dv:.2}) moves it out of frame"),
                });
            }
        }
    }
    Ok(())
}

/// Translates `target` by `(t - ref) * shift` for every frame with bilinear
/// resampling; the reference is the middle frame.
pub fn simulate_burst(target: &Image, gt: &GroundTruth, motion: &MotionSpec) -> Result<(Burst, GroundTruth)> {
    motion.validate()?;
    let (w, h) = target.dims();
    let n = motion.frames;
    let reference = n / 2;
    let offsets: Vec<(f64, f64)> = (0..n)
        .map(|t| {
            let k = t as f64 - reference as f64;
            (k * motion.shift.0, k * motion.shift.1)
        })
        .collect();
    check_disk_in_frame(gt, w, h, &offsets)?;
    let frames = offsets
        .iter()
        .map(|&(du, dv)| {
            Image::from_fn(w, h, |x, y| {
                // Scene content beyond the border continues as the edge pixel.
                let sx = (x as f64 - du).clamp(0.0, (w - 1) as f64);
                let sy = (y as f64 - dv).clamp(0.0, (h - 1) as f64);
                target.sample_bilinear(sx, sy).expect("clamped inside image")
            })
        })
        .collect();
    let burst = Burst::with_reference(frames, reference)?;
    let mut out = gt.clone();
    for f in &mut out.features {
        f.lambda_u = motion.shift.0;
        f.lambda_v = motion.shift.1;
    }
    Ok((burst, out))
}

/// Renders every frame analytically with each disk moving at its own
/// per-frame slope (depth-dependent parallax). Frame `t` places disk `i` at
/// `center_i + (t - ref) * slope_i`.
pub fn render_parallax_burst(
    spec: &TargetSpec,
    slopes: &[(f64, f64)],
    offsets: &[i64],
    supersample: usize,
) -> Result<(Burst, GroundTruth)> {
    if slopes.len() != spec.disks.len() {
        return Err(Error::InvalidParameter(format!(
            "{} slopes for {} disks",
            slopes.len(),
            spec.disks.len()
        )));
    }
    let reference = offsets
        .iter()
        .position(|&k| k == 0)
        .ok_or_else(|| Error::InvalidParameter("offsets must include the reference 0".into()))?;
    let (_, mut gt) = render_target(spec, 1)?;
    for (f, &(lu, lv)) in gt.features.iter_mut().zip(slopes) {
        f.lambda_u = lu;
        f.lambda_v = lv;
        let max_k = offsets.iter().map(|k| k.unsigned_abs()).max().unwrap_or(0) as f64;
        if max_k * lu.hypot(lv) * 2.0 > MAX_TOTAL_SHIFT + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "slope ({lu}, {lv}) exceeds the total motion bound"
            )));
        }
    }
    for (i, f) in gt.features.iter().enumerate() {
        let single = GroundTruth { features: vec![*f] };
        let offs: Vec<(f64, f64)> = offsets
            .iter()
            .map(|&k| (k as f64 * f.lambda_u, k as f64 * f.lambda_v))
            .collect();
        check_disk_in_frame(&single, spec.width, spec.height, &offs).map_err(|e| match e {
            Error::Layout { reason, .. } => Error::Layout { index: i, reason },
            e => e,
        })?;
    }
    let frames = offsets
        .iter()
        .map(|&k| {
            let moved = spec.disks.iter().zip(slopes).map(|(d, &(lu, lv))| Disk {
                center: (d.center.0 + k as f64 * lu, d.center.1 + k as f64 * lv),
                ..*d
            });
            paint_disks(spec.width, spec.height, spec.background, moved, supersample)
        })
        .collect();
    Ok((Burst::with_reference(frames, reference)?, gt))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    pub read_std: f64,
    /// Signal-dependent variance coefficient: variance = read_std^2 + photon_scale * x.
    pub photon_scale: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn new(read_std: f64, photon_scale: f64, seed: u64) -> Self {
        NoiseParams {
            read_std,
            photon_scale,
            seed,
        }
    }

    /// Derived parameters for a frame at signed offset `k` from the reference.
    /// Seeds depend only on `(seed, k)`, so shorter bursts taken around the
    /// same reference see identical noise on shared frames.
    pub fn for_frame(&self, k: i64) -> NoiseParams {
        NoiseParams {
            seed: mix_seed(self.seed, k as u64),
            ..*self
        }
    }
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Adds signal-dependent Gaussian noise and clips to `[0, 1.5]`.
pub fn add_noise(image: &Image, params: &NoiseParams) -> Result<Image> {
    if params.read_std < 0.0 || params.photon_scale < 0.0 {
        return Err(Error::InvalidParameter("noise parameters must be non-negative".into()));
    }
    if params.read_std == 0.0 && params.photon_scale == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let read_var = params.read_std * params.read_std;
    image.map(|x| {
        let std = (read_var + params.photon_scale * (x.max(0.0) as f64)).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        (x as f64 + std * z).clamp(0.0, 1.5) as f32
    })
}

/// Adds independent noise to every frame; frame seeds derive from the
/// signed offset to the reference frame.
pub fn add_burst_noise(burst: &Burst, params: &NoiseParams) -> Result<Burst> {
    let frames = burst
        .frames()
        .iter()
        .zip(burst.offsets())
        .map(|(f, k)| add_noise(f, &params.for_frame(k)))
        .collect::<Result<Vec<_>>>()?;
    Burst::with_reference(frames, burst.ref_index())
}

/// `n` radii log-spaced between `min` and `max`, inclusive.
pub fn log_spaced_radii(n: usize, min: f64, max: f64) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![min],
        _ => (0..n)
            .map(|i| min * (max / min).powf(i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Random disk layout parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayoutParams {
    pub width: usize,
    pub height: usize,
    pub radii: Vec<f64>,
    pub background: f32,
    pub contrast: f32,
    /// Center distance must be at least `spacing * (r_a + r_b) + gap`.
    pub spacing: f64,
    pub gap: f64,
    /// Border margin added on top of `2 * radius`.
    pub extra_margin: f64,
    pub seed: u64,
}

/// Places disks at seeded random positions, largest first. Fails if any disk
/// cannot be placed.
pub fn random_layout(p: &LayoutParams) -> Result<TargetSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut order: Vec<usize> = (0..p.radii.len()).collect();
    order.sort_by(|&a, &b| p.radii[b].total_cmp(&p.radii[a]));
    let mut placed: Vec<Disk> = Vec::with_capacity(p.radii.len());
    for i in order {
        let r = p.radii[i];
        let m = 2.0 * r + p.extra_margin;
        let (lo_u, hi_u) = (m, p.width as f64 - 1.0 - m);
        let (lo_v, hi_v) = (m, p.height as f64 - 1.0 - m);
        if lo_u > hi_u || lo_v > hi_v {
            return Err(Error::Layout {
                index: i,
                reason: format!("radius {r} does not fit the image"),
            });
        }
        let mut ok = false;
        for _ in 0..50_000 {
            let c = (rng.random_range(lo_u..=hi_u), rng.random_range(lo_v..=hi_v));
            let fits = placed.iter().all(|d| {
                (d.center.0 - c.0).hypot(d.center.1 - c.1) >= p.spacing * (d.radius + r) + p.gap
            });
            if fits {
                placed.push(Disk {
                    center: c,
                    radius: r,
                    foreground: p.background * p.contrast,
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Layout {
                index: i,
                reason: format!("could not place radius {r}"),
            });
        }
    }
    Ok(TargetSpec {
        width: p.width,
        height: p.height,
        background: p.background,
        disks: placed,
    })
}
