//! Single-channel floating-point rasters, bursts, and grayscale file I/O.
//!
//! Samples are linear intensities normalized to `[0, 1]` by the container's
//! maximum code value. Every image carries a per-pixel validity mask.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl Image {
    /// Builds a fully valid image from row-major samples.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let mask = vec![true; data.len()];
        Self::with_mask(width, height, data, mask)
    }

    pub fn with_mask(width: usize, height: usize, data: Vec<f32>, mask: Vec<bool>) -> Result<Self> {
        if data.len() != width * height || mask.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "{}x{} image needs {} samples, got {} samples and {} mask entries",
                width,
                height,
                width * height,
                data.len(),
                mask.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Image {
            width,
            height,
            data,
            mask,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
            mask: vec![true; width * height],
        }
    }

    /// Builds an image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            data,
            mask: vec![true; width * height],
        }
    }

    /// Crate-internal constructor; callers guarantee lengths and finiteness.
    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f32>, mask: Vec<bool>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert_eq!(mask.len(), width * height);
        Image {
            width,
            height,
            data,
            mask,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Applies `f` to every sample, keeping the mask.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Result<Image> {
        Image::with_mask(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
            self.mask.clone(),
        )
    }

    /// Bilinear sample at a subpixel position.
    ///
    /// Returns `None` outside `[0, w-1] x [0, h-1]` or when any neighbor with
    /// non-zero weight is masked out.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f32> {
        bilinear(&self.data, Some(&self.mask), self.width, self.height, x, y)
    }

    /// Rotates by 90 degrees counter-clockwise; pixel `(x, y)` moves to
    /// `(y, w - 1 - x)`.
    pub fn rotate90_ccw(&self) -> Image {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0; w * h];
        let mut mask = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = (y, w - 1 - x);
                data[ny * h + nx] = self.data[y * w + x];
                mask[ny * h + nx] = self.mask[y * w + x];
            }
        }
        Image::from_parts(h, w, data, mask)
    }
}

/// Bilinear interpolation over a row-major buffer.
pub(crate) fn bilinear(
    data: &[f32],
    mask: Option<&[bool]>,
    width: usize,
    height: usize,
    x: f64,
    y: f64,
) -> Option<f32> {
    if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
    let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
    let i00 = y0 * width + x0;
    let i10 = y0 * width + x1;
    let i01 = y1 * width + x0;
    let i11 = y1 * width + x1;
    if let Some(m) = mask {
        if !(m[i00] && m[i10] && m[i01] && m[i11]) {
            return None;
        }
    }
    if fx == 0.0 && fy == 0.0 {
        return Some(data[i00]);
    }
    let top = (1.0 - fx) * data[i00] as f64 + fx * data[i10] as f64;
    let bottom = (1.0 - fx) * data[i01] as f64 + fx * data[i11] as f64;
    Some(((1.0 - fy) * top + fy * bottom) as f32)
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Rect {
            x,
            y,
            width,
            height,
        }
    }
}

/// An ordered set of equally sized frames with a reference frame index.
#[derive(Clone, Debug)]
pub struct Burst {
    frames: Vec<Image>,
    ref_index: usize,
}

impl Burst {
    /// Builds a burst whose reference is the middle frame, `floor(N / 2)`.
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        let r = frames.len() / 2;
        Self::with_reference(frames, r)
    }

    pub fn with_reference(frames: Vec<Image>, ref_index: usize) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a burst needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if ref_index >= frames.len() {
            return Err(Error::InvalidParameter(format!(
                "reference index {ref_index} out of range for {} frames",
                frames.len()
            )));
        }
        let dims = frames[0].dims();
        if let Some(f) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: f.dims(),
            });
        }
        Ok(Burst { frames, ref_index })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn ref_index(&self) -> usize {
        self.ref_index
    }

    pub fn reference(&self) -> &Image {
        &self.frames[self.ref_index]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    /// Signed frame offset `t - ref` for each frame.
    pub fn offsets(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.frames.len()).map(move |t| t as i64 - self.ref_index as i64)
    }

    /// Same physical burst with frame order reversed; the reference frame is
    /// preserved, so the offsets flip sign.
    pub fn reversed(&self) -> Burst {
        let mut frames = self.frames.clone();
        frames.reverse();
        Burst {
            ref_index: self.frames.len() - 1 - self.ref_index,
            frames,
        }
    }

    /// Per-frame map, keeping the reference index.
    pub fn map_frames(&self, f: impl Fn(&Image) -> Result<Image>) -> Result<Burst> {
        let frames = self.frames.iter().map(f).collect::<Result<Vec<_>>>()?;
        Burst::with_reference(frames, self.ref_index)
    }

    /// Per-pixel mean over frames at zero motion.
    pub fn mean_frame(&self) -> Image {
        let (w, h) = self.dims();
        let n = self.frames.len() as f64;
        let mut data = vec![0.0f32; w * h];
        let mut mask = vec![true; w * h];
        for i in 0..w * h {
            let mut acc = 0.0f64;
            for f in &self.frames {
                acc += f.data[i] as f64;
                mask[i] &= f.mask[i];
            }
            data[i] = (acc / n) as f32;
        }
        Image::from_parts(w, h, data, mask)
    }
}

/// Storage bit depth of a grayscale container, or the effective depth of
/// data stored in one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Twelve,
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            12 => Ok(BitDepth::Twelve),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::InvalidParameter(format!(
                "bit depth must be 8, 12 or 16, got {other}"
            ))),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Twelve => 12,
            BitDepth::Sixteen => 16,
        }
    }
}

/// Loads an 8/16-bit binary PGM (P5) or grayscale PNG.
///
/// Codes are divided by the container's maximum code value, except that
/// 16-bit containers read with [`BitDepth::Twelve`] are divided by 4095.
pub fn load_image(path: impl AsRef<Path>, hint: BitDepth) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, codes, container_max) = if bytes.starts_with(b"P5") {
        decode_pgm(path, &bytes)?
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(path, &bytes)?
    } else {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "expected binary PGM (P5) or PNG".into(),
        });
    };
    let scale = match (hint, container_max > 255) {
        (BitDepth::Twelve, true) => 4095.0,
        (BitDepth::Eight, true) => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "8-bit hint given for a 16-bit container".into(),
            })
        }
        _ => container_max as f32,
    };
    let data = codes.into_iter().map(|c| c as f32 / scale).collect();
    Image::new(width, height, data)
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u16>, u32)> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comment lines.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::malformed(path, "bad PGM header"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::malformed(path, "bad PGM header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::malformed(path, format!("PGM maxval {maxval}")));
    }
    let n = width * height;
    let payload = &bytes[pos..];
    let codes: Vec<u16> = if maxval < 256 {
        if payload.len() < n {
            return Err(Error::malformed(path, "truncated PGM payload"));
        }
        payload[..n].iter().map(|&b| b as u16).collect()
    } else {
        if payload.len() < 2 * n {
            return Err(Error::malformed(path, "truncated PGM payload"));
        }
        payload[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if codes.iter().any(|&c| c as usize > maxval) {
        return Err(Error::malformed(path, "PGM code exceeds maxval"));
    }
    Ok((width, height, codes, maxval as u32))
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u16>, u32)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => Ok((
            w,
            h,
            buf.into_raw().into_iter().map(u16::from).collect(),
            255,
        )),
        image::DynamicImage::ImageLuma16(buf) => Ok((w, h, buf.into_raw(), 65535)),
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("{:?} is not single-channel grayscale", other.color()),
        }),
    }
}

fn quantize(image: &Image, maxval: u32) -> Vec<u16> {
    image
        .data
        .iter()
        .map(|&v| (v as f64 * maxval as f64).round().clamp(0.0, maxval as f64) as u16)
        .collect()
}

/// Writes a binary PGM with maxval 255 or 65535. Samples are clamped to `[0, 1]`.
pub fn save_pgm(image: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let maxval = match depth {
        BitDepth::Eight => 255,
        BitDepth::Twelve => 4095,
        BitDepth::Sixteen => 65535,
    };
    let codes = quantize(image, maxval);
    let mut out = format!("P5\n{} {}\n{}\n", image.width, image.height, maxval).into_bytes();
    if maxval < 256 {
        out.extend(codes.iter().map(|&c| c as u8));
    } else {
        for c in codes {
            out.extend_from_slice(&c.to_be_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Writes a grayscale PNG (8 or 16 bit container).
pub fn save_png(image: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (image.width as u32, image.height as u32);
    let res = match depth {
        BitDepth::Eight => {
            let raw = quantize(image, 255).into_iter().map(|c| c as u8).collect();
            image::GrayImage::from_raw(w, h, raw)
                .expect("buffer sized to image")
                .save_with_format(path, image::ImageFormat::Png)
        }
        BitDepth::Twelve | BitDepth::Sixteen => {
            let maxval = if depth == BitDepth::Twelve { 4095 } else { 65535 };
            let raw = quantize(image, maxval);
            image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(w, h, raw)
                .expect("buffer sized to image")
                .save_with_format(path, image::ImageFormat::Png)
        }
    };
    res.map_err(|e| Error::malformed(path, e.to_string()))
}

/// Per-pixel `max(image - bias, 0)`; the image's mask is kept.
pub fn subtract_bias(image: &Image, bias: &Image) -> Result<Image> {
    if image.dims() != bias.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            actual: bias.dims(),
        });
    }
    let data = image
        .data
        .iter()
        .zip(&bias.data)
        .map(|(&s, &b)| (s - b).max(0.0))
        .collect();
    Ok(Image::from_parts(
        image.width,
        image.height,
        data,
        image.mask.clone(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageStats {
    pub mean: f64,
    /// Unbiased (n - 1) standard deviation; zero for a single sample.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Statistics over the valid pixels of `image`, optionally restricted to `region`.
pub fn image_stats(image: &Image, region: Option<Rect>) -> Result<ImageStats> {
    let r = region.unwrap_or(Rect::new(0, 0, image.width, image.height));
    if r.x + r.width > image.width || r.y + r.height > image.height {
        return Err(Error::InvalidParameter(format!(
            "region {r:?} exceeds {}x{} image",
            image.width, image.height
        )));
    }
    let mut count = 0usize;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for y in r.y..r.y + r.height {
        for x in r.x..r.x + r.width {
            let i = y * image.width + x;
            if !image.mask[i] {
                continue;
            }
            let v = image.data[i] as f64;
            count += 1;
            let d = v - mean;
            mean += d / count as f64;
            m2 += d * (v - mean);
            min = min.min(v);
            max = max.max(v);
        }
    }
    if count == 0 {
        return Err(Error::EmptyRegion);
    }
    let std = if count > 1 {
        (m2 / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ImageStats {
        mean,
        std,
        min,
        max,
        count,
    })
}
