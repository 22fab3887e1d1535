//! Feature, slope and match files.
//!
//! The feature text file is the 128-column keypoint format understood by
//! common SfM importers: a header `N 128`, then one line per feature,
//! `u v sigma orientation d0 ... d127`, positions with six decimals and
//! descriptor entries quantized to `round(512 * value)` clamped to 0..=255.
//! Slopes have no column there, so they go to a `<path>.slopes` sidecar
//! with `lambda_u lambda_v` per line.
//!
//! The native format keeps every keypoint field and full-precision
//! descriptors, for passing detections between pipeline stages.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::describe::{Descriptor, Feature, DESCRIPTOR_LEN};
use crate::detect::Keypoint;
use crate::error::{Error, Result};
use crate::matching::Match;

const QUANT: f32 = 512.0;
const NATIVE_MAGIC: &str = "buff-features 1";

/// One parsed line of the feature text file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportedFeature {
    pub u: f64,
    pub v: f64,
    pub sigma: f64,
    pub orientation: f64,
    pub quantized: [u8; DESCRIPTOR_LEN],
}

impl ExportedFeature {
    /// Dequantized descriptor entries.
    pub fn descriptor_values(&self) -> [f32; DESCRIPTOR_LEN] {
        self.quantized.map(|q| q as f32 / QUANT)
    }
}

pub fn quantize(value: f32) -> u8 {
    (value * QUANT).round().clamp(0.0, 255.0) as u8
}

fn finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter("non-finite value in feature".into()))
    }
}

pub fn format_features_text(kps: &[Keypoint], descs: &[Descriptor]) -> Result<String> {
    if kps.len() != descs.len() {
        return Err(Error::LengthMismatch(kps.len(), descs.len()));
    }
    let mut s = format!("{} {}\n", kps.len(), DESCRIPTOR_LEN);
    for (k, d) in kps.iter().zip(descs) {
        finite(&[k.u, k.v, k.sigma, k.orientation])?;
        write!(s, "{:.6} {:.6} {:.6} {:.6}", k.u, k.v, k.sigma, k.orientation).unwrap();
        for &x in d.values() {
            write!(s, " {}", quantize(x)).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn format_slopes(kps: &[Keypoint]) -> Result<String> {
    let mut s = String::new();
    for k in kps {
        finite(&[k.lambda_u, k.lambda_v])?;
        writeln!(s, "{:.6} {:.6}", k.lambda_u, k.lambda_v).unwrap();
    }
    Ok(s)
}

/// Sidecar path: the feature path with `.slopes` appended.
pub fn slopes_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".slopes");
    PathBuf::from(p)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes the feature text file and its slope sidecar.
pub fn export_features_text(kps: &[Keypoint], descs: &[Descriptor], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_features_text(kps, descs)?;
    let slopes = format_slopes(kps)?;
    write(path, &text)?;
    write(&slopes_path(path), &slopes)
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split_ascii_whitespace()
}

fn number<T: std::str::FromStr>(tok: Option<&str>, origin: &Path, line: usize, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::malformed(origin, format!("line {line}: bad or missing {what}")))
}

fn parse_features_from(text: &str, origin: &Path) -> Result<Vec<ExportedFeature>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::malformed(origin, "empty file"))?;
    let mut h = tokens(header);
    let n: usize = number(h.next(), origin, 1, "feature count")?;
    let len: usize = number(h.next(), origin, 1, "descriptor length")?;
    if len != DESCRIPTOR_LEN || h.next().is_some() {
        return Err(Error::malformed(origin, format!("header must be `N {DESCRIPTOR_LEN}`")));
    }
    let mut out = Vec::with_capacity(n);
    for (i, line) in lines {
        let ln = i + 1;
        let mut t = tokens(line);
        let u = number(t.next(), origin, ln, "u")?;
        let v = number(t.next(), origin, ln, "v")?;
        let sigma = number(t.next(), origin, ln, "sigma")?;
        let orientation = number(t.next(), origin, ln, "orientation")?;
        let mut quantized = [0u8; DESCRIPTOR_LEN];
        for q in quantized.iter_mut() {
            *q = number(t.next(), origin, ln, "descriptor entry")?;
        }
        if t.next().is_some() {
            return Err(Error::malformed(origin, format!("line {ln}: trailing tokens")));
        }
        out.push(ExportedFeature { u, v, sigma, orientation, quantized });
    }
    if out.len() != n {
        return Err(Error::malformed(origin, format!("header declares {n} features, found {}", out.len())));
    }
    Ok(out)
}

pub fn parse_features_text(text: &str) -> Result<Vec<ExportedFeature>> {
    parse_features_from(text, Path::new("<text>"))
}

pub fn read_features_text(path: impl AsRef<Path>) -> Result<Vec<ExportedFeature>> {
    let path = path.as_ref();
    parse_features_from(&read(path)?, path)
}

fn parse_slopes_from(text: &str, origin: &Path) -> Result<Vec<(f64, f64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut t = tokens(l);
            let pair = (number(t.next(), origin, i + 1, "lambda_u")?, number(t.next(), origin, i + 1, "lambda_v")?);
            match t.next() {
                Some(_) => Err(Error::malformed(origin, format!("line {}: trailing tokens", i + 1))),
                None => Ok(pair),
            }
        })
        .collect()
}

pub fn parse_slopes(text: &str) -> Result<Vec<(f64, f64)>> {
    parse_slopes_from(text, Path::new("<text>"))
}

pub fn read_slopes(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    parse_slopes_from(&read(path)?, path)
}

/// `idx_a idx_b distance ratio` per line.
pub fn format_matches(matches: &[Match]) -> String {
    let mut s = String::new();
    for m in matches {
        writeln!(s, "{} {} {:.6} {:.6}", m.index_a, m.index_b, m.distance, m.ratio).unwrap();
    }
    s
}

fn parse_matches_from(text: &str, origin: &Path) -> Result<Vec<Match>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let mut t = tokens(l);
            let ln = i + 1;
            let m = Match {
                index_a: number(t.next(), origin, ln, "idx_a")?,
                index_b: number(t.next(), origin, ln, "idx_b")?,
                distance: number(t.next(), origin, ln, "distance")?,
                ratio: number(t.next(), origin, ln, "ratio")?,
            };
            match t.next() {
                Some(_) => Err(Error::malformed(origin, format!("line {ln}: trailing tokens"))),
                None => Ok(m),
            }
        })
        .collect()
}

pub fn parse_matches(text: &str) -> Result<Vec<Match>> {
    parse_matches_from(text, Path::new("<text>"))
}

pub fn read_matches(path: impl AsRef<Path>) -> Result<Vec<Match>> {
    let path = path.as_ref();
    parse_matches_from(&read(path)?, path)
}

/// Native lossless format: a `buff-features 1 <count>` header, then per
/// feature the keypoint fields in declaration order followed by the 128
/// descriptor entries. Floats use shortest round-trip notation.
pub fn format_native(features: &[Feature]) -> Result<String> {
    let mut s = format!("{NATIVE_MAGIC} {}\n", features.len());
    for f in features {
        let k = &f.keypoint;
        finite(&[k.u, k.v, k.sigma, k.lambda_u, k.lambda_v, k.response, k.sublevel, k.orientation])?;
        write!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {} {} {}",
            k.u,
            k.v,
            k.sigma,
            k.lambda_u,
            k.lambda_v,
            k.response,
            k.octave,
            k.level,
            k.sublevel,
            k.slope_u,
            k.slope_v,
            k.orientation,
            k.on_slope_boundary as u8
        )
        .unwrap();
        for x in f.descriptor.values() {
            write!(s, " {x}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

fn parse_native_from(text: &str, origin: &Path) -> Result<Vec<Feature>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::malformed(origin, "empty file"))?;
    let n: usize = header
        .strip_prefix(NATIVE_MAGIC)
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| Error::malformed(origin, format!("header must be `{NATIVE_MAGIC} <count>`")))?;
    let mut out = Vec::with_capacity(n);
    for (i, line) in lines {
        let ln = i + 1;
        let mut t = tokens(line);
        let mut f = |what| number::<f64>(t.next(), origin, ln, what);
        let (u, v, sigma, lambda_u, lambda_v, response) = (f("u")?, f("v")?, f("sigma")?, f("lambda_u")?, f("lambda_v")?, f("response")?);
        let octave = number(t.next(), origin, ln, "octave")?;
        let level = number(t.next(), origin, ln, "level")?;
        let sublevel = number(t.next(), origin, ln, "sublevel")?;
        let slope_u = number(t.next(), origin, ln, "slope_u")?;
        let slope_v = number(t.next(), origin, ln, "slope_v")?;
        let orientation = number(t.next(), origin, ln, "orientation")?;
        let boundary: u8 = number(t.next(), origin, ln, "boundary flag")?;
        let mut values = [0.0f32; DESCRIPTOR_LEN];
        for x in values.iter_mut() {
            *x = number(t.next(), origin, ln, "descriptor entry")?;
        }
        if t.next().is_some() || boundary > 1 {
            return Err(Error::malformed(origin, format!("line {ln}: trailing tokens or bad flag")));
        }
        let descriptor = Descriptor::from_values(values).map_err(|e| Error::malformed(origin, format!("line {ln}: {e}")))?;
        out.push(Feature {
            keypoint: Keypoint {
                u,
                v,
                sigma,
                lambda_u,
                lambda_v,
                response,
                octave,
                level,
                sublevel,
                slope_u,
                slope_v,
                orientation,
                on_slope_boundary: boundary == 1,
            },
            descriptor,
        });
    }
    if out.len() != n {
        return Err(Error::malformed(origin, format!("header declares {n} features, found {}", out.len())));
    }
    Ok(out)
}

pub fn parse_native(text: &str) -> Result<Vec<Feature>> {
    parse_native_from(text, Path::new("<text>"))
}

pub fn write_native(features: &[Feature], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write(path, &format_native(features)?)
}

pub fn read_native(path: impl AsRef<Path>) -> Result<Vec<Feature>> {
    let path = path.as_ref();
    parse_native_from(&read(path)?, path)
}
