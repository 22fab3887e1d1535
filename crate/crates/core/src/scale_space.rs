//! Gaussian scale space and difference-of-Gaussians pyramids.
//!
//! Blurring is normalized convolution: every plane carries a certainty map
//! (the fraction of kernel mass that landed on valid input), propagated
//! through the whole cascade. A pixel is valid when its certainty is at
//! least [`VALID_CERTAINTY`]. Samples outside the image count as invalid.

use crate::error::{Error, Result};
use crate::image::Image;

/// Minimum fraction of valid kernel mass for a blurred pixel to be valid.
pub const VALID_CERTAINTY: f32 = 0.99;

const KERNEL_TRUNCATION: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleSpaceParams {
    pub octaves: usize,
    pub levels_per_octave: usize,
    pub sigma0: f64,
    /// Blur already present in the input, in input pixels.
    pub input_blur: f64,
    /// Double the input before building the first octave.
    pub upsample: bool,
}

impl Default for ScaleSpaceParams {
    fn default() -> Self {
        ScaleSpaceParams {
            octaves: 6,
            levels_per_octave: 4,
            sigma0: 1.6,
            input_blur: 0.5,
            upsample: false,
        }
    }
}

impl ScaleSpaceParams {
    pub fn with_octaves(self, octaves: usize) -> Self {
        ScaleSpaceParams { octaves, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.octaves < 1 {
            return Err(Error::InvalidParameter("octaves must be >= 1".into()));
        }
        if self.levels_per_octave < 3 {
            return Err(Error::InvalidParameter("levels per octave must be >= 3".into()));
        }
        let input_blur = if self.upsample { 2.0 * self.input_blur } else { self.input_blur };
        let sigma0 = if self.upsample { 2.0 * self.sigma0 } else { self.sigma0 };
        if !(sigma0 > input_blur) || self.input_blur < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma0 {} must exceed the assumed input blur {}",
                self.sigma0, self.input_blur
            )));
        }
        Ok(())
    }

    /// Gaussian levels per octave, `levels + 3`, giving `levels + 2` DoG images.
    pub fn gaussian_levels(&self) -> usize {
        self.levels_per_octave + 3
    }

    pub fn dog_levels(&self) -> usize {
        self.levels_per_octave + 2
    }

    /// Absolute scale in input pixels at octave `o`, (fractional) level `l`.
    pub fn sigma(&self, o: usize, l: f64) -> f64 {
        self.sigma0 * 2f64.powf(o as f64 + l / self.levels_per_octave as f64)
    }

    /// Scale of a level relative to its own octave's sampling grid.
    pub fn octave_sigma(&self, l: f64) -> f64 {
        let s = self.sigma0 * 2f64.powf(l / self.levels_per_octave as f64);
        if self.upsample {
            2.0 * s
        } else {
            s
        }
    }

    /// Input pixels per sample at octave `o`.
    pub fn octave_step(&self, o: usize) -> f64 {
        let s = (1u64 << o) as f64;
        if self.upsample {
            s / 2.0
        } else {
            s
        }
    }

    pub fn check_size(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        let need = (1usize << self.octaves) * 8;
        let have = width.min(height) * if self.upsample { 2 } else { 1 };
        if have < need {
            return Err(Error::InvalidParameter(format!(
                "{width}x{height} image too small for {} octaves (min dimension {need})",
                self.octaves
            )));
        }
        Ok(())
    }

    /// Initial blur applied to the (possibly upsampled) input.
    pub(crate) fn initial_blur(&self) -> f64 {
        let (s0, b) = if self.upsample {
            (2.0 * self.sigma0, 2.0 * self.input_blur)
        } else {
            (self.sigma0, self.input_blur)
        };
        (s0 * s0 - b * b).sqrt()
    }

    /// Incremental blur from level `l - 1` to `l`, in octave pixels.
    pub(crate) fn increment(&self, l: usize) -> f64 {
        let a = self.octave_sigma(l as f64 - 1.0);
        let b = self.octave_sigma(l as f64);
        (b * b - a * a).sqrt()
    }
}

/// Normalized sampled Gaussian, radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let r = (KERNEL_TRUNCATION * sigma).ceil().max(1.0) as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| (v / s) as f32).collect()
}

/// A sampled plane with a propagated certainty map.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Plane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
    pub cert: Vec<f32>,
}

impl Plane {
    pub fn empty() -> Plane {
        Plane {
            w: 0,
            h: 0,
            data: Vec::new(),
            cert: Vec::new(),
        }
    }

    pub fn from_image(img: &Image) -> Plane {
        Plane {
            w: img.width(),
            h: img.height(),
            data: img.data().to_vec(),
            cert: img.mask().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn to_image(&self) -> Image {
        let mask = self.cert.iter().map(|&c| c >= VALID_CERTAINTY).collect();
        Image::from_parts(self.w, self.h, self.data.clone(), mask)
    }

    /// Normalized-convolution Gaussian blur.
    pub fn blur(&self, sigma: f64) -> Plane {
        let k = gaussian_kernel(sigma);
        let num: Vec<f32> = self.data.iter().zip(&self.cert).map(|(&v, &c)| v * c).collect();
        let num = convolve_separable(&num, self.w, self.h, &k);
        let cert = convolve_separable(&self.cert, self.w, self.h, &k);
        let data = num
            .iter()
            .zip(&cert)
            .map(|(&n, &c)| if c > 1e-6 { n / c } else { 0.0 })
            .collect();
        Plane {
            w: self.w,
            h: self.h,
            data,
            cert,
        }
    }

    /// Keeps samples `(2q + px, 2r + py)`.
    pub fn decimate(&self, px: usize, py: usize) -> Plane {
        let w = (self.w - px).div_ceil(2);
        let h = (self.h - py).div_ceil(2);
        let mut data = Vec::with_capacity(w * h);
        let mut cert = Vec::with_capacity(w * h);
        for y in 0..h {
            let row = (2 * y + py) * self.w;
            for x in 0..w {
                data.push(self.data[row + 2 * x + px]);
                cert.push(self.cert[row + 2 * x + px]);
            }
        }
        Plane { w, h, data, cert }
    }

    /// Bilinear 2x upsampling; output sample `i` sits at input position `i / 2`.
    pub fn upsample2(&self) -> Plane {
        let (w, h) = (2 * self.w - 1, 2 * self.h - 1);
        let mut data = Vec::with_capacity(w * h);
        let mut cert = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64 / 2.0, y as f64 / 2.0);
                data.push(crate::image::bilinear(&self.data, None, self.w, self.h, fx, fy).unwrap());
                cert.push(crate::image::bilinear(&self.cert, None, self.w, self.h, fx, fy).unwrap());
            }
        }
        Plane { w, h, data, cert }
    }
}

/// Separable convolution with zero contribution outside the buffer.
pub(crate) fn convolve_separable(src: &[f32], w: usize, h: usize, k: &[f32]) -> Vec<f32> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let kk = &k[lo + r - x..=hi + r - x];
            *o = row[lo..=hi].iter().zip(kk).map(|(a, b)| a * b).sum();
        }
    }
    let mut dst = vec![0.0f32; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        let out = &mut dst[y * w..(y + 1) * w];
        for sy in lo..=hi {
            let kv = k[sy + r - y];
            let row = &tmp[sy * w..(sy + 1) * w];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += kv * v;
            }
        }
    }
    dst
}

/// Gaussian blur of an image with mask-aware normalization.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    Plane::from_image(image).blur(sigma).to_image()
}

/// Builds the `levels + 3` Gaussian planes of one octave from its level-0 plane.
pub(crate) fn octave_planes(level0: Plane, params: &ScaleSpaceParams) -> Vec<Plane> {
    let mut levels = Vec::with_capacity(params.gaussian_levels());
    levels.push(level0);
    for l in 1..params.gaussian_levels() {
        let next = levels[l - 1].blur(params.increment(l));
        levels.push(next);
    }
    levels
}

/// Level-0 plane of octave 0 for an input image.
pub(crate) fn base_plane(image: &Image, params: &ScaleSpaceParams) -> Plane {
    let mut p = Plane::from_image(image);
    if params.upsample {
        p = p.upsample2();
    }
    p.blur(params.initial_blur())
}

/// DoG planes `G(l + 1) - G(l)`; valid where both inputs are valid.
pub(crate) fn dog_planes(gauss: &[Plane]) -> Vec<Plane> {
    gauss
        .windows(2)
        .map(|pair| {
            let (a, b) = (&pair[0], &pair[1]);
            Plane {
                w: a.w,
                h: a.h,
                data: b.data.iter().zip(&a.data).map(|(x, y)| x - y).collect(),
                cert: b.cert.iter().zip(&a.cert).map(|(x, y)| x.min(*y)).collect(),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct GaussianPyramid {
    params: ScaleSpaceParams,
    octaves: Vec<Vec<Image>>,
}

impl GaussianPyramid {
    pub fn params(&self) -> &ScaleSpaceParams {
        &self.params
    }

    pub fn octaves(&self) -> usize {
        self.octaves.len()
    }

    pub fn level(&self, o: usize, l: usize) -> &Image {
        &self.octaves[o][l]
    }

    pub fn octave(&self, o: usize) -> &[Image] {
        &self.octaves[o]
    }

    pub fn sigma(&self, o: usize, l: usize) -> f64 {
        self.params.sigma(o, l as f64)
    }
}

/// Incrementally blurred octaves; octave `o + 1` starts from level
/// `levels_per_octave` of octave `o` (scale `2 sigma0`), decimated by two.
pub fn build_gaussian_pyramid(image: &Image, params: &ScaleSpaceParams) -> Result<GaussianPyramid> {
    params.check_size(image.width(), image.height())?;
    let mut seed = base_plane(image, params);
    let mut octaves = Vec::with_capacity(params.octaves);
    for o in 0..params.octaves {
        let planes = octave_planes(seed, params);
        seed = planes[params.levels_per_octave].decimate(0, 0);
        octaves.push(planes.iter().map(Plane::to_image).collect());
        if o + 1 == params.octaves {
            break;
        }
    }
    Ok(GaussianPyramid {
        params: *params,
        octaves,
    })
}

#[derive(Clone, Debug)]
pub struct DogPyramid {
    params: ScaleSpaceParams,
    octaves: Vec<Vec<Image>>,
}

impl DogPyramid {
    pub fn params(&self) -> &ScaleSpaceParams {
        &self.params
    }

    pub fn octaves(&self) -> usize {
        self.octaves.len()
    }

    pub fn level(&self, o: usize, l: usize) -> &Image {
        &self.octaves[o][l]
    }

    pub fn octave(&self, o: usize) -> &[Image] {
        &self.octaves[o]
    }

    /// Scale attached to DoG level `l` (that of its lower Gaussian).
    pub fn sigma(&self, o: usize, l: usize) -> f64 {
        self.params.sigma(o, l as f64)
    }
}

/// Adjacent-level differences `G(l + 1) - G(l)`.
pub fn build_dog(pyramid: &GaussianPyramid) -> DogPyramid {
    let octaves = pyramid
        .octaves
        .iter()
        .map(|levels| {
            levels
                .windows(2)
                .map(|pair| {
                    let (a, b) = (&pair[0], &pair[1]);
                    let data = b.data().iter().zip(a.data()).map(|(x, y)| x - y).collect();
                    let mask = b.mask().iter().zip(a.mask()).map(|(x, y)| *x && *y).collect();
                    Image::from_parts(a.width(), a.height(), data, mask)
                })
                .collect()
        })
        .collect();
    DogPyramid {
        params: pyramid.params,
        octaves,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f32>())
    }

    fn rms_interior(a: &Image, b: &Image, margin: usize) -> f64 {
        let mut se = 0.0f64;
        let mut n = 0usize;
        for y in margin..a.height() - margin {
            for x in margin..a.width() - margin {
                let d = (a.get(x, y) - b.get(x, y)) as f64;
                se += d * d;
                n += 1;
            }
        }
        (se / n as f64).sqrt()
    }

    #[test]
    fn params_validation() {
        assert!(ScaleSpaceParams::default().validate().is_ok());
        assert!(ScaleSpaceParams { octaves: 0, ..Default::default() }.validate().is_err());
        assert!(ScaleSpaceParams { levels_per_octave: 2, ..Default::default() }.validate().is_err());
        assert!(ScaleSpaceParams { input_blur: 1.6, ..Default::default() }.validate().is_err());
        let p = ScaleSpaceParams::default();
        assert!(p.check_size(511, 600).is_err());
        assert!(p.check_size(512, 512).is_ok());
    }

    #[test]
    fn delta_impulse_gives_sampled_gaussian() {
        let (w, h) = (65, 65);
        let mut img = Image::filled(w, h, 0.0);
        img = Image::from_fn(w, h, |x, y| if x == 32 && y == 32 { 1.0 } else { img.get(x, y) });
        let p = ScaleSpaceParams::default().with_octaves(1);
        let pyr = build_gaussian_pyramid(&img, &p).unwrap();
        let s = (1.6f64 * 1.6 - 0.25).sqrt();
        let l0 = pyr.level(0, 0);
        let mut worst = 0.0f64;
        for y in 20..45 {
            for x in 20..45 {
                let r2 = ((x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2)) / (2.0 * s * s);
                let g = (-r2).exp() / (2.0 * std::f64::consts::PI * s * s);
                worst = worst.max((l0.get(x, y) as f64 - g).abs());
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn constant_image_flat_levels_zero_dog() {
        let img = Image::filled(128, 128, 0.37);
        let p = ScaleSpaceParams::default().with_octaves(3);
        let pyr = build_gaussian_pyramid(&img, &p).unwrap();
        for o in 0..3 {
            for l in 0..p.gaussian_levels() {
                let lvl = pyr.level(o, l);
                for (v, &m) in lvl.data().iter().zip(lvl.mask()) {
                    if m {
                        assert!((v - 0.37).abs() < 1e-6);
                    }
                }
            }
        }
        let dog = build_dog(&pyr);
        for o in 0..3 {
            assert_eq!(dog.octave(o).len(), p.dog_levels());
            for lvl in dog.octave(o) {
                assert!(lvl.data().iter().all(|v| v.abs() < 1e-6));
            }
        }
    }

    #[test]
    fn six_octaves_four_levels() {
        let img = Image::filled(512, 512, 0.5);
        let p = ScaleSpaceParams::default();
        let pyr = build_gaussian_pyramid(&img, &p).unwrap();
        assert_eq!(pyr.octaves(), 6);
        assert_eq!(pyr.octave(0).len(), 7);
        for o in 0..5 {
            assert!((pyr.sigma(o + 1, 0) / pyr.sigma(o, 0) - 2.0).abs() < 1e-12);
            assert_eq!(pyr.level(o + 1, 0).width(), pyr.level(o, 0).width().div_ceil(2));
        }
        assert!((pyr.sigma(0, 4) - 3.2).abs() < 1e-12);
    }

    #[test]
    fn too_small_for_octaves() {
        let img = Image::filled(100, 100, 0.5);
        assert!(build_gaussian_pyramid(&img, &ScaleSpaceParams::default().with_octaves(4)).is_err());
    }

    #[test]
    fn blur_semigroup() {
        let img = random_image(96, 96, 1);
        let (a, b) = (1.2, 1.7);
        let twice = gaussian_blur(&gaussian_blur(&img, a), b);
        let once = gaussian_blur(&img, (a * a + b * b).sqrt());
        let rms = rms_interior(&twice, &once, 20);
        assert!(rms < 1e-4, "{rms}");
    }

    #[test]
    fn linear_ramp_has_zero_interior_dog() {
        let img = Image::from_fn(128, 128, |x, y| 0.001 * x as f32 + 0.002 * y as f32);
        let p = ScaleSpaceParams::default().with_octaves(2);
        let dog = build_dog(&build_gaussian_pyramid(&img, &p).unwrap());
        for l in 0..p.dog_levels() {
            let lvl = dog.level(0, l);
            for y in 40..88 {
                for x in 40..88 {
                    assert!(lvl.get(x, y).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn dog_scales_linearly_with_intensity() {
        let img = random_image(64, 64, 5);
        let scaled = img.map(|v| 4.0 * v).unwrap();
        let p = ScaleSpaceParams::default().with_octaves(2);
        let d1 = build_dog(&build_gaussian_pyramid(&img, &p).unwrap());
        let d2 = build_dog(&build_gaussian_pyramid(&scaled, &p).unwrap());
        for o in 0..2 {
            for l in 0..p.dog_levels() {
                for (a, b) in d1.level(o, l).data().iter().zip(d2.level(o, l).data()) {
                    assert!((4.0 * a - b).abs() <= 1e-6 * (1.0 + b.abs()));
                }
            }
        }
    }

    #[test]
    fn border_validity_grows_with_scale() {
        let img = Image::filled(128, 128, 0.5);
        let pyr = build_gaussian_pyramid(&img, &ScaleSpaceParams::default().with_octaves(2)).unwrap();
        let v0 = pyr.level(0, 0);
        let v5 = pyr.level(0, 5);
        assert!(v0.is_valid(64, 64) && !v0.is_valid(0, 64));
        assert!(v0.valid_count() > v5.valid_count());
    }

    #[test]
    fn disk_dog_peaks_near_radius_over_sqrt2() {
        use crate::synth::{render_target, TargetSpec};
        // Brute-force scan of the center DoG response against scale.
        for r in [4.0, 6.0, 9.0] {
            let spec = TargetSpec::new(160, 160, 0.5).with_disk((80.0, 80.0), r, 1.2);
            let (img, _) = render_target(&spec, 8).unwrap();
            let base = gaussian_blur(&img, (1.0f64 - 0.25).sqrt());
            let k = 2f64.powf(0.125);
            let mut best = (0.0f64, 0.0f64);
            let mut s = 1.0f64;
            while s < 20.0 {
                let g1 = gaussian_blur(&base, (s * s - 1.0).max(1e-6).sqrt());
                let s2 = s * k;
                let g2 = gaussian_blur(&base, (s2 * s2 - 1.0).sqrt());
                let d = (g2.get(80, 80) - g1.get(80, 80)).abs() as f64;
                if d > best.1 {
                    best = (s, d);
                }
                s = s2;
            }
            let expected = r / 2f64.sqrt();
            let ratio = best.0.log2() - expected.log2();
            assert!(ratio.abs() < 0.25, "r={r}: peak at {} vs {expected}", best.0);
        }
    }

    #[test]
    fn upsampled_pyramid_reports_half_step() {
        let p = ScaleSpaceParams {
            upsample: true,
            octaves: 2,
            ..Default::default()
        };
        assert_eq!(p.octave_step(0), 0.5);
        let pyr = build_gaussian_pyramid(&Image::filled(40, 40, 0.2), &p).unwrap();
        assert_eq!(pyr.level(0, 0).width(), 79);
    }
}
