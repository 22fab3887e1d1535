//! Shift-sum motion filtering: resample every frame of a burst along a
//! putative linear apparent motion and average, producing one higher-SNR
//! image per slope.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Burst, Image};

/// Grid of putative slopes in pixels per frame, relative to the reference frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeGrid {
    slopes_u: Vec<f64>,
    slopes_v: Vec<f64>,
}

fn check_axis(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} slope axis is empty")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} slope axis has a non-finite value")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "{name} slopes must be strictly increasing: {values:?}"
        )));
    }
    Ok(())
}

impl SlopeGrid {
    pub fn new(slopes_u: Vec<f64>, slopes_v: Vec<f64>) -> Result<Self> {
        check_axis("horizontal", &slopes_u)?;
        check_axis("vertical", &slopes_v)?;
        Ok(SlopeGrid { slopes_u, slopes_v })
    }

    /// The single-slope grid `{0} x {0}`.
    pub fn zero() -> Self {
        SlopeGrid {
            slopes_u: vec![0.0],
            slopes_v: vec![0.0],
        }
    }

    /// Integer slopes `u_range x v_range`.
    pub fn integer(u: std::ops::RangeInclusive<i32>, v: std::ops::RangeInclusive<i32>) -> Result<Self> {
        Self::new(u.map(f64::from).collect(), v.map(f64::from).collect())
    }

    /// Evenly spaced `min, min + step, ..., max` (inclusive, within 1e-9).
    pub fn axis(min: f64, step: f64, max: f64) -> Result<Vec<f64>> {
        if !(step > 0.0) || max < min {
            if min == max {
                return Ok(vec![min]);
            }
            return Err(Error::InvalidParameter(format!(
                "bad slope range {min}:{step}:{max}"
            )));
        }
        let n = ((max - min) / step + 1e-9).floor() as usize;
        if n > 10_000 {
            return Err(Error::InvalidParameter("slope range too long".into()));
        }
        Ok((0..=n).map(|i| min + i as f64 * step).collect())
    }

    pub fn slopes_u(&self) -> &[f64] {
        &self.slopes_u
    }

    pub fn slopes_v(&self) -> &[f64] {
        &self.slopes_v
    }

    pub fn len(&self) -> usize {
        self.slopes_u.len() * self.slopes_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slope at grid indices `(iu, iv)`.
    pub fn slope(&self, iu: usize, iv: usize) -> (f64, f64) {
        (self.slopes_u[iu], self.slopes_v[iv])
    }

    /// Grid points in stack order: row-major over `(iv, iu)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, (f64, f64))> + '_ {
        (0..self.slopes_v.len()).flat_map(move |iv| {
            (0..self.slopes_u.len()).map(move |iu| (iu, iv, self.slope(iu, iv)))
        })
    }

    pub fn index_of(&self, slope: (f64, f64)) -> Option<(usize, usize)> {
        let find = |axis: &[f64], s: f64| axis.iter().position(|&a| (a - s).abs() < 1e-9);
        Some((find(&self.slopes_u, slope.0)?, find(&self.slopes_v, slope.1)?))
    }

    pub fn is_one_d(&self) -> bool {
        self.slopes_v == [0.0]
    }

    pub fn is_integer(&self) -> bool {
        self.slopes_u
            .iter()
            .chain(&self.slopes_v)
            .all(|s| s.fract() == 0.0)
    }

    pub fn contains_hull(&self, slope: (f64, f64)) -> bool {
        let (u0, u1) = (self.slopes_u[0], *self.slopes_u.last().unwrap());
        let (v0, v1) = (self.slopes_v[0], *self.slopes_v.last().unwrap());
        (u0..=u1).contains(&slope.0) && (v0..=v1).contains(&slope.1)
    }

    /// Largest per-frame displacement magnitude on the grid.
    pub fn max_abs(&self) -> f64 {
        let m = |a: &[f64]| a.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
        m(&self.slopes_u).hypot(m(&self.slopes_v))
    }
}

/// Result of averaging a burst along one slope.
pub(crate) struct ShiftSum {
    pub data: Vec<f32>,
    pub counts: Vec<u16>,
}

/// Accumulates frames sampled at `(x + du_t, y + dv_t)` with bilinear
/// weights. Sums run in f64 so integer shifts of identical frames reproduce
/// the input exactly.
pub(crate) fn accumulate_shift_sum(burst: &Burst, slope: (f64, f64)) -> ShiftSum {
    accumulate_frames(burst.frames(), &burst.offsets().collect::<Vec<_>>(), slope)
}

pub(crate) fn accumulate_frames(frames: &[Image], offsets: &[i64], slope: (f64, f64)) -> ShiftSum {
    let (w, h) = frames[0].dims();
    let mut sum = vec![0.0f64; w * h];
    let mut counts = vec![0u16; w * h];
    for (frame, &k) in frames.iter().zip(offsets) {
        let du = slope.0 * k as f64;
        let dv = slope.1 * k as f64;
        accumulate_frame(frame, du, dv, &mut sum, &mut counts);
    }
    let data = sum
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { (s / c as f64) as f32 } else { 0.0 })
        .collect();
    ShiftSum { data, counts }
}

fn accumulate_frame(frame: &Image, du: f64, dv: f64, sum: &mut [f64], counts: &mut [u16]) {
    let (w, h) = frame.dims();
    let data = frame.data();
    let mask = frame.mask();
    let iu = du.floor();
    let iv = dv.floor();
    let fx = du - iu;
    let fy = dv - iv;
    let (iu, iv) = (iu as i64, iv as i64);
    let nx = if fx > 0.0 { 1 } else { 0 };
    let ny = if fy > 0.0 { 1 } else { 0 };
    // Output x is valid when x + iu >= 0 and x + iu + nx <= w - 1.
    let x_lo = (-iu).max(0);
    let x_hi = (w as i64 - 1 - nx - iu).min(w as i64 - 1);
    let y_lo = (-iv).max(0);
    let y_hi = (h as i64 - 1 - ny - iv).min(h as i64 - 1);
    if x_lo > x_hi || y_lo > y_hi {
        return;
    }
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    for y in y_lo..=y_hi {
        let sy = (y + iv) as usize;
        let row0 = sy * w;
        let row1 = (sy + ny as usize) * w;
        let out_row = y as usize * w;
        for x in x_lo..=x_hi {
            let sx = (x + iu) as usize;
            let sx1 = sx + nx as usize;
            let (i00, i10, i01, i11) = (row0 + sx, row0 + sx1, row1 + sx, row1 + sx1);
            if !(mask[i00] && mask[i10] && mask[i01] && mask[i11]) {
                continue;
            }
            let v = if nx == 0 && ny == 0 {
                data[i00] as f64
            } else {
                w00 * data[i00] as f64
                    + w10 * data[i10] as f64
                    + w01 * data[i01] as f64
                    + w11 * data[i11] as f64
            };
            let o = out_row + x as usize;
            sum[o] += v;
            counts[o] += 1;
        }
    }
}

/// Averages the burst along `slope`: output pixel `(u, v)` is the mean over
/// frames of `frame_t(u + lambda_u (t - ref), v + lambda_v (t - ref))`,
/// renormalized by the number of in-bounds contributions. Pixels with no
/// contribution are masked out.
pub fn shift_sum(burst: &Burst, slope: (f64, f64)) -> Result<Image> {
    let (w, h) = burst.dims();
    let s = accumulate_shift_sum(burst, slope);
    let mask: Vec<bool> = s.counts.iter().map(|&c| c > 0).collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::NoValidPixels(slope.0, slope.1));
    }
    Ok(Image::from_parts(w, h, s.data, mask))
}

/// One shift-sum image per slope of a grid.
#[derive(Clone, Debug)]
pub struct MotionStack {
    grid: SlopeGrid,
    images: Vec<Image>,
    source_n: usize,
}

impl MotionStack {
    pub fn grid(&self) -> &SlopeGrid {
        &self.grid
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    pub fn get(&self, iu: usize, iv: usize) -> &Image {
        &self.images[iv * self.grid.slopes_u.len() + iu]
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Shift-sums the burst at every grid slope, in row-major `(iv, iu)` order.
pub fn build_motion_stack(burst: &Burst, grid: &SlopeGrid) -> Result<MotionStack> {
    let slopes: Vec<(f64, f64)> = grid.iter().map(|(_, _, s)| s).collect();
    let images = slopes
        .par_iter()
        .map(|&s| shift_sum(burst, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(MotionStack {
        grid: grid.clone(),
        images,
        source_n: burst.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{image_stats, Rect};
    use crate::synth::{add_noise, render_target, simulate_burst, MotionSpec, NoiseParams, TargetSpec};

    fn noise_burst(n: usize, w: usize, h: usize, std: f64, seed: u64) -> Burst {
        let base = Image::filled(w, h, 0.5);
        let p = NoiseParams::new(std, 0.0, seed);
        let frames = (0..n)
            .map(|t| add_noise(&base, &p.for_frame(t as i64)).unwrap())
            .collect();
        Burst::new(frames).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(SlopeGrid::new(vec![], vec![0.0]).is_err());
        assert!(SlopeGrid::new(vec![0.0, 0.0], vec![0.0]).is_err());
        assert!(SlopeGrid::new(vec![1.0, 0.0], vec![0.0]).is_err());
        let g = SlopeGrid::integer(-3..=3, 0..=0).unwrap();
        assert!(g.is_one_d() && g.is_integer());
        assert_eq!(g.index_of((2.0, 0.0)), Some((5, 0)));
        assert_eq!(g.index_of((2.5, 0.0)), None);
        assert_eq!(SlopeGrid::axis(-1.0, 0.5, 1.0).unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(SlopeGrid::axis(0.0, 0.0, 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn identical_frames_zero_slope_is_exact() {
        let f = Image::from_fn(31, 17, |x, y| ((x * 7 + y * 13) % 97) as f32 / 97.0 + 0.1);
        let burst = Burst::new(vec![f.clone(); 7]).unwrap();
        let out = shift_sum(&burst, (0.0, 0.0)).unwrap();
        assert_eq!(out.data(), f.data());
        assert!(out.mask().iter().all(|&m| m));
    }

    #[test]
    fn true_slope_recovers_target() {
        let spec = TargetSpec::new(160, 120, 0.5).with_disk((80.0, 60.0), 12.0, 1.2);
        let (target, gt) = render_target(&spec, 8).unwrap();
        let (burst, _) = simulate_burst(&target, &gt, &MotionSpec::one_d(2.0, 5)).unwrap();
        let out = shift_sum(&burst, (2.0, 0.0)).unwrap();
        let mut se = 0.0f64;
        let mut n = 0usize;
        // Jointly valid region: every frame contributed from inside the image.
        for y in 0..120 {
            for x in 8..152 {
                let d = (out.get(x, y) - target.get(x, y)) as f64;
                se += d * d;
                n += 1;
            }
        }
        assert!((se / n as f64).sqrt() < 1e-3);
    }

    #[test]
    fn fractional_slope_band_limited_rms() {
        // A smooth sinusoid is band-limited enough for bilinear resampling.
        let target = Image::from_fn(128, 96, |x, y| {
            0.5 + 0.1 * ((x as f32 * 0.15).sin() * (y as f32 * 0.11).cos())
        });
        let (burst, _) =
            simulate_burst(&target, &Default::default(), &MotionSpec::two_d(0.5, 0.5, 5)).unwrap();
        let out = shift_sum(&burst, (0.5, 0.5)).unwrap();
        let mut se = 0.0f64;
        let mut n = 0;
        for y in 4..92 {
            for x in 4..124 {
                let d = (out.get(x, y) - target.get(x, y)) as f64;
                se += d * d;
                n += 1;
            }
        }
        assert!((se / n as f64).sqrt() < 1e-3, "{}", (se / n as f64).sqrt());
    }

    #[test]
    fn sqrt_n_noise_reduction() {
        let burst = noise_burst(9, 400, 300, 0.05, 4);
        let single = image_stats(&burst.frames()[0], None).unwrap().std;
        let out = shift_sum(&burst, (0.0, 0.0)).unwrap();
        let s = image_stats(&out, None).unwrap().std;
        assert!((single / s / 3.0 - 1.0).abs() < 0.05, "{single} {s}");
    }

    #[test]
    fn snr_monotone_in_burst_size() {
        let full = noise_burst(10, 200, 150, 0.05, 8);
        let mut last = f64::INFINITY;
        for n in [2, 4, 6, 8, 10] {
            let burst = Burst::new(full.frames()[..n].to_vec()).unwrap();
            let s = image_stats(&shift_sum(&burst, (1.0, 0.0)).unwrap(), Some(Rect::new(20, 0, 160, 150)))
                .unwrap()
                .std;
            assert!(s <= last, "n={n}: {s} > {last}");
            last = s;
        }
    }

    #[test]
    fn linearity() {
        let a = noise_burst(4, 40, 30, 0.1, 1);
        let b = noise_burst(4, 40, 30, 0.1, 2);
        let (ca, cb) = (0.7f32, -1.3f32);
        let combo = Burst::new(
            a.frames()
                .iter()
                .zip(b.frames())
                .map(|(fa, fb)| {
                    Image::new(40, 30, fa.data().iter().zip(fb.data()).map(|(x, y)| ca * x + cb * y).collect())
                        .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let slope = (0.6, -0.3);
        let lhs = shift_sum(&combo, slope).unwrap();
        let sa = shift_sum(&a, slope).unwrap();
        let sb = shift_sum(&b, slope).unwrap();
        for i in 0..lhs.data().len() {
            assert_eq!(lhs.mask()[i], sa.mask()[i]);
            if lhs.mask()[i] {
                let rhs = ca * sa.data()[i] + cb * sb.data()[i];
                assert!((lhs.data()[i] - rhs).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reversal_symmetry() {
        for n in [5, 6] {
            let burst = noise_burst(n, 50, 40, 0.1, 3);
            for slope in [(1.0, -2.0), (0.4, 0.7)] {
                let fwd = shift_sum(&burst, slope).unwrap();
                let rev = shift_sum(&burst.reversed(), (-slope.0, -slope.1)).unwrap();
                assert_eq!(fwd, rev, "n={n} slope={slope:?}");
            }
        }
    }

    #[test]
    fn too_large_slope_errors() {
        let masked = Image::with_mask(10, 10, vec![0.5; 100], vec![false; 100]).unwrap();
        let open = Image::filled(10, 10, 0.5);
        let burst = Burst::new(vec![open.clone(), masked, open]).unwrap();
        assert!(shift_sum(&burst, (2.0, 0.0)).is_ok());
        assert!(matches!(shift_sum(&burst, (20.0, 0.0)), Err(Error::NoValidPixels(..))));
        let grid = SlopeGrid::new(vec![0.0, 20.0], vec![0.0]).unwrap();
        assert!(matches!(
            build_motion_stack(&burst, &grid),
            Err(Error::NoValidPixels(s, _)) if s == 20.0
        ));
    }

    #[test]
    fn partial_coverage_is_renormalized() {
        let burst = Burst::new(vec![Image::filled(10, 4, 0.25); 3]).unwrap();
        let out = shift_sum(&burst, (2.0, 0.0)).unwrap();
        // Columns 0..2 and 8..10 see fewer frames but keep the intensity.
        assert!(out.data().iter().all(|&v| v == 0.25));
        assert!(out.mask().iter().all(|&m| m));
    }

    #[test]
    fn stack_shapes_and_order() {
        let burst = noise_burst(4, 40, 30, 0.05, 1);
        let single = build_motion_stack(&burst, &SlopeGrid::zero()).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.get(0, 0), &shift_sum(&burst, (0.0, 0.0)).unwrap());

        let g2 = SlopeGrid::integer(-3..=3, -3..=3).unwrap();
        let s2 = build_motion_stack(&burst, &g2).unwrap();
        assert_eq!(s2.len(), 49);
        assert_eq!(s2.get(1, 4), &shift_sum(&burst, (-2.0, 1.0)).unwrap());

        let g1 = SlopeGrid::integer(-3..=3, 0..=0).unwrap();
        let s1 = build_motion_stack(&burst, &g1).unwrap();
        assert_eq!(s1.len(), 7);
        assert_eq!(s1.grid().slopes_v(), &[0.0]);
        assert_eq!(s1.source_n(), 4);
    }
}
