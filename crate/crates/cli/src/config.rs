//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use buff_core::{DetectorMode, Method, PipelineOrder, SceneParams, ScaleSpaceParams, SlopeGrid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered key/value pairs as read from a file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pairs: Vec<(String, String)>,
}

impl RunConfig {
    /// `key = value` per line; `#` starts a comment line. Duplicate keys are errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, reason: "empty key".into() });
            }
            if pairs.iter().any(|(p, _)| p == k) {
                return Err(ConfigError::Syntax { line: i + 1, reason: format!("duplicate key `{k}`") });
            }
            pairs.push((k.to_string(), v.to_string()));
        }
        Ok(RunConfig { pairs })
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }
}

/// A settings value that round-trips through its text form.
pub trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(f64, usize, u64, u32, bool, String);

impl Value for Option<usize> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s == "auto" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| format!("{e}"))
        }
    }
    fn format_value(&self) -> String {
        self.map_or("auto".into(), |v| v.to_string())
    }
}

impl Value for Option<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s == "auto" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|e| format!("{e}"))
        }
    }
    fn format_value(&self) -> String {
        self.map_or("auto".into(), |v| v.to_string())
    }
}

impl Value for DetectorMode {
    fn parse_value(s: &str) -> Result<Self, String> {
        DetectorMode::parse(s).ok_or_else(|| "expected buff-1d, buff-2d or sift-2d".into())
    }
    fn format_value(&self) -> String {
        self.name().into()
    }
}

impl Value for PipelineOrder {
    fn parse_value(s: &str) -> Result<Self, String> {
        PipelineOrder::parse(s).ok_or_else(|| "expected motion-first or scale-first".into())
    }
    fn format_value(&self) -> String {
        self.name().into()
    }
}

impl Value for Method {
    fn parse_value(s: &str) -> Result<Self, String> {
        Method::parse(s).ok_or_else(|| "expected single-frame, burst-merge, buff-1d or buff-2d".into())
    }
    fn format_value(&self) -> String {
        self.name().into()
    }
}

/// Slope axis: `min:step:max` or a comma-separated list.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis(pub Vec<f64>);

impl Axis {
    fn list(values: &[f64]) -> Axis {
        Axis(values.to_vec())
    }

    fn range(min: f64, step: f64, max: f64) -> Axis {
        Axis(SlopeGrid::axis(min, step, max).expect("valid default axis"))
    }
}

impl Value for Axis {
    fn parse_value(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{e}"));
        match parts[..] {
            [a, st, b] => SlopeGrid::axis(num(a)?, num(st)?, num(b)?).map(Axis).map_err(|e| e.to_string()),
            [_] => s.split(',').map(num).collect::<Result<Vec<_>, _>>().map(Axis),
            _ => Err("expected `min:step:max` or a comma-separated list".into()),
        }
    }
    fn format_value(&self) -> String {
        self.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Comma-separated burst sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sizes(pub Vec<usize>);

impl Value for Sizes {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Sizes)
    }
    fn format_value(&self) -> String {
        self.0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Shared behaviour of every settings block.
pub trait Settings: Default + Clone {
    /// `(key, help)` for every key, in output order.
    const KEYS: &'static [(&'static str, &'static str)];
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError>;
    fn pairs(&self) -> Vec<(&'static str, String)>;

    /// Defaults, then the file, then command-line overrides.
    fn resolve(file: Option<&RunConfig>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        if let Some(f) = file {
            for (k, v) in f.pairs() {
                s.set(k, v)?;
            }
        }
        for (k, v) in overrides {
            s.set(k, v)?;
        }
        Ok(s)
    }

    fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// The resolved config as `#` comment lines.
    fn header(&self, command: &str) -> String {
        let mut out = format!("# buff {command}\n");
        for (k, v) in self.pairs() {
            writeln!(out, "# {k} = {v}").unwrap();
        }
        out
    }
}

macro_rules! settings {
    ($(#[$m:meta])* $name:ident { $($field:ident : $ty:ty = $default:expr => $help:literal,)* }) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            $(pub $field: $ty,)*
        }

        impl Default for $name {
            fn default() -> Self {
                $name { $($field: $default,)* }
            }
        }

        impl Settings for $name {
            const KEYS: &'static [(&'static str, &'static str)] = &[$((stringify!($field), $help),)*];

            fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $(stringify!($field) => {
                        self.$field = <$ty as Value>::parse_value(value).map_err(|reason| ConfigError::Value {
                            key: key.into(),
                            value: value.into(),
                            reason,
                        })?;
                    })*
                    _ => return Err(ConfigError::UnknownKey(key.into())),
                }
                Ok(())
            }

            fn pairs(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), Value::format_value(&self.$field)),)*]
            }
        }
    };
}

fn std_scene() -> SceneParams {
    SceneParams::standard()
}

fn std_scale() -> ScaleSpaceParams {
    ScaleSpaceParams::default()
}

settings! {
    /// `synth`: scene layout, motion and noise.
    SynthSettings {
        width: usize = std_scene().width => "image width in pixels",
        height: usize = std_scene().height => "image height in pixels",
        disks: usize = std_scene().disks => "number of disks",
        min_radius: f64 = std_scene().min_radius => "smallest disk radius",
        max_radius: f64 = std_scene().max_radius => "largest disk radius",
        background: f64 = std_scene().background as f64 => "background intensity in [0, 1]",
        contrast: f64 = std_scene().contrast as f64 => "disk intensity over background",
        frames: usize = std_scene().frames => "frames in the burst",
        slopes_u: Axis = Axis::list(&std_scene().slopes_u) => "per-disk horizontal slopes to draw from",
        slopes_v: Axis = Axis::list(&std_scene().slopes_v) => "per-disk vertical slopes to draw from",
        read_std: f64 = std_scene().read_std => "Gaussian read noise std",
        photon_scale: f64 = std_scene().photon_scale => "signal-dependent noise scale",
        layout_seed: u64 = std_scene().layout_seed => "disk placement seed",
        slope_seed: u64 = std_scene().slope_seed => "per-disk slope seed",
        noise_seed: u64 = std_scene().noise_seed => "noise seed",
        supersample: usize = std_scene().supersample => "anti-aliasing supersampling factor",
        bits: u32 = 16 => "PNG bit depth (8 or 16)",
    }
}

settings! {
    /// `detect`: detector and scale-space parameters.
    DetectSettings {
        mode: DetectorMode = DetectorMode::Buff1D => "buff-1d, buff-2d or sift-2d",
        slopes_u: Axis = Axis::range(-3.0, 1.0, 3.0) => "horizontal slope axis",
        slopes_v: Axis = Axis::list(&[0.0]) => "vertical slope axis",
        threshold: f64 = 0.01 => "peak threshold on the refined response",
        edge_threshold: f64 = 10.0 => "principal curvature ratio limit",
        octaves: usize = 5 => "scale-space octaves",
        levels_per_octave: usize = std_scale().levels_per_octave => "DoG levels searched per octave",
        sigma0: f64 = std_scale().sigma0 => "base scale",
        input_blur: f64 = std_scale().input_blur => "blur already present in the input",
        ordering: PipelineOrder = PipelineOrder::ScaleFirst => "motion-first or scale-first",
        slope_boundary: bool = true => "allow extrema on the outermost slopes",
        bits: u32 = 16 => "effective bit depth of the input (8, 12 or 16)",
        reference: Option<usize> = None => "reference frame index, or auto for the middle frame",
    }
}

settings! {
    /// `match`: nearest-neighbor matching.
    MatchSettings {
        ratio: f64 = 0.8 => "ratio test threshold",
        mutual: bool = false => "keep only mutual nearest neighbors",
    }
}

settings! {
    /// `eval-roc` and `eval-sweep`: per-method evaluation.
    EvalSettings {
        method: Method = Method::Buff1D => "single-frame, burst-merge, buff-1d or buff-2d",
        octaves: usize = 5 => "scale-space octaves",
        levels_per_octave: usize = std_scale().levels_per_octave => "DoG levels searched per octave",
        sigma0: f64 = std_scale().sigma0 => "base scale",
        input_blur: f64 = std_scale().input_blur => "blur already present in the input",
        edge_threshold: f64 = 10.0 => "principal curvature ratio limit",
        ordering: PipelineOrder = PipelineOrder::ScaleFirst => "motion-first or scale-first",
        grid_1d_u: Axis = Axis::range(-3.0, 1.0, 3.0) => "buff-1d slope axis",
        grid_2d_u: Axis = Axis::range(-3.0, 1.0, 3.0) => "buff-2d horizontal slope axis",
        grid_2d_v: Axis = Axis::range(-3.0, 1.0, 3.0) => "buff-2d vertical slope axis",
        merge_u: Axis = Axis::range(-3.0, 1.0, 3.0) => "burst-merge candidate horizontal slopes",
        merge_v: Axis = Axis::list(&[0.0]) => "burst-merge candidate vertical slopes",
        spatial_px: f64 = 3.0 => "minimum true-positive radius in pixels",
        scale_octaves: f64 = 1.0 => "true-positive scale tolerance in octaves",
        fp_fraction: f64 = 0.10 => "false positive budget as a fraction of detections",
        threshold_hi: f64 = 0.05 => "highest ROC threshold",
        threshold_lo: f64 = 0.002 => "lowest ROC threshold",
        threshold_count: usize = 60 => "ROC thresholds, geometrically spaced",
        sizes: Sizes = Sizes((2..=10).collect()) => "eval-sweep: burst sizes",
        threshold: Option<f64> = None => "eval-sweep: fixed peak threshold, or auto for the ROC pick on the full burst",
        bits: u32 = 16 => "effective bit depth of the input (8, 12 or 16)",
        reference: Option<usize> = None => "reference frame index, or auto for the middle frame",
    }
}

settings! {
    /// `eval-metrics`: matching metrics between two views.
    MetricsSettings {
        label: String = "run".to_string() => "row label, usually the method name",
        shift_u: f64 = 0.0 => "known horizontal displacement from view a to view b",
        shift_v: f64 = 0.0 => "known vertical displacement from view a to view b",
        inlier_tol: f64 = 3.0 => "inlier radius in pixels",
        ratio: f64 = 0.8 => "ratio test threshold",
        mutual: bool = false => "keep only mutual nearest neighbors",
    }
}
