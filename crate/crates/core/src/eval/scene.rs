//! Synthetic disk scenes and the per-method evaluation runs on them.

use crate::describe::{describe_keypoints, detect_and_describe, DescriptionSource, Feature};
use crate::detect::{detect, detect_sift_baseline, DetectorMode, DetectorParams, Keypoint, PipelineOrder};
use crate::error::{Error, Result};
use crate::image::{Burst, Image};
use crate::motion::{shift_sum, SlopeGrid};
use crate::scale_space::ScaleSpaceParams;
use crate::synth::{
    add_burst_noise, log_spaced_radii, random_layout, render_parallax_burst, GroundTruth, LayoutParams, NoiseParams,
    TargetSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{classify_detections, roc_from_detections, select_peak_threshold, RocCurve, ThresholdSelection, Tolerance};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub disks: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    pub background: f32,
    pub contrast: f32,
    /// Frames rendered; bursts of any size up to this are centered subsets.
    pub frames: usize,
    /// Per-disk slopes are drawn uniformly from these values.
    pub slopes_u: Vec<f64>,
    pub slopes_v: Vec<f64>,
    pub read_std: f64,
    pub photon_scale: f64,
    pub layout_seed: u64,
    pub slope_seed: u64,
    pub noise_seed: u64,
    pub supersample: usize,
}

impl SceneParams {
    /// 90 disks with log-spaced radii 3 to 24 px on 640x480, ten frames,
    /// 1D parallax with per-disk slopes in {-2, ..., 2}.
    pub fn standard() -> Self {
        SceneParams {
            width: 640,
            height: 480,
            disks: 90,
            min_radius: 3.0,
            max_radius: 24.0,
            background: 0.5,
            contrast: 1.2,
            frames: 10,
            slopes_u: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            slopes_v: vec![0.0],
            read_std: 0.0,
            photon_scale: 0.0,
            layout_seed: 7,
            slope_seed: 11,
            noise_seed: 1000,
            supersample: 4,
        }
    }

    pub fn with_noise(self, read_std: f64) -> Self {
        SceneParams { read_std, ..self }
    }
}

/// Signed frame offsets of a centered burst of `n` frames.
pub fn centered_offsets(n: usize) -> Vec<i64> {
    (0..n as i64).map(|t| t - (n / 2) as i64).collect()
}

/// A rendered scene: clean frames for every offset plus ground truth.
#[derive(Clone, Debug)]
pub struct Scene {
    params: SceneParams,
    spec: TargetSpec,
    slopes: Vec<(f64, f64)>,
    gt: GroundTruth,
    offsets: Vec<i64>,
    clean: Vec<Image>,
}

impl Scene {
    pub fn new(params: SceneParams) -> Result<Scene> {
        if params.frames < 2 {
            return Err(Error::InvalidParameter("scene needs at least 2 frames".into()));
        }
        let offsets = centered_offsets(params.frames);
        let max_k = offsets.iter().map(|k| k.unsigned_abs()).max().unwrap() as f64;
        let max_slope = params
            .slopes_u
            .iter()
            .chain(&params.slopes_v)
            .fold(0.0f64, |m, s| m.max(s.abs()));
        let layout = LayoutParams {
            width: params.width,
            height: params.height,
            radii: log_spaced_radii(params.disks, params.min_radius, params.max_radius),
            background: params.background,
            contrast: params.contrast,
            spacing: 1.3,
            gap: 2.0 + 2.0 * max_k * max_slope,
            extra_margin: max_k * max_slope * std::f64::consts::SQRT_2 + 2.0,
            seed: params.layout_seed,
        };
        let spec = random_layout(&layout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.slope_seed);
        let slopes = spec
            .disks
            .iter()
            .map(|_| {
                let u = params.slopes_u[rng.random_range(0..params.slopes_u.len())];
                let v = params.slopes_v[rng.random_range(0..params.slopes_v.len())];
                (u, v)
            })
            .collect();
        Self::render(params, spec, slopes, offsets)
    }

    fn render(params: SceneParams, spec: TargetSpec, slopes: Vec<(f64, f64)>, offsets: Vec<i64>) -> Result<Scene> {
        let (burst, gt) = render_parallax_burst(&spec, &slopes, &offsets, params.supersample)?;
        Ok(Scene {
            params,
            spec,
            slopes,
            gt,
            offsets,
            clean: burst.frames().to_vec(),
        })
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub fn spec(&self) -> &TargetSpec {
        &self.spec
    }

    pub fn slopes(&self) -> &[(f64, f64)] {
        &self.slopes
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt
    }

    /// Same clean frames with a different noise level.
    pub fn with_noise(&self, read_std: f64) -> Scene {
        let mut s = self.clone();
        s.params.read_std = read_std;
        s
    }

    /// Every disk translated by `(du, dv)` with an independent noise seed.
    pub fn translated(&self, du: f64, dv: f64, noise_seed: u64) -> Result<Scene> {
        let mut spec = self.spec.clone();
        for d in &mut spec.disks {
            d.center = (d.center.0 + du, d.center.1 + dv);
        }
        let params = SceneParams {
            noise_seed,
            ..self.params.clone()
        };
        Self::render(params, spec, self.slopes.clone(), self.offsets.clone())
    }

    /// Noise-free centered burst of `n` frames.
    pub fn clean_burst(&self, n: usize) -> Result<Burst> {
        if n < 2 || n > self.clean.len() {
            return Err(Error::InvalidParameter(format!(
                "burst size {n} outside 2..={}",
                self.clean.len()
            )));
        }
        let frames = centered_offsets(n)
            .iter()
            .map(|k| {
                let i = self.offsets.iter().position(|o| o == k).unwrap();
                self.clean[i].clone()
            })
            .collect();
        Burst::with_reference(frames, n / 2)
    }

    /// Noisy centered burst; frame noise depends only on the frame offset,
    /// so a larger burst contains every frame of a smaller one.
    pub fn burst(&self, n: usize) -> Result<Burst> {
        let clean = self.clean_burst(n)?;
        add_burst_noise(
            &clean,
            &NoiseParams::new(self.params.read_std, self.params.photon_scale, self.params.noise_seed),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    SingleFrame,
    BurstMerge,
    Buff1D,
    Buff2D,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SingleFrame, Method::BurstMerge, Method::Buff1D, Method::Buff2D];

    pub fn name(self) -> &'static str {
        match self {
            Method::SingleFrame => "single-frame",
            Method::BurstMerge => "burst-merge",
            Method::Buff1D => "buff-1d",
            Method::Buff2D => "buff-2d",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s.to_ascii_lowercase())
    }
}

/// Shared detector settings for every method.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub scale: ScaleSpaceParams,
    pub edge_threshold: f64,
    pub grid_1d: SlopeGrid,
    pub grid_2d: SlopeGrid,
    /// Candidate global slopes for the merge baseline.
    pub merge_slopes: SlopeGrid,
    pub ordering: PipelineOrder,
    pub tolerance: Tolerance,
    pub fp_fraction: f64,
    /// Descending ROC thresholds; the last one is the detection floor.
    pub thresholds: Vec<f64>,
}

impl EvalConfig {
    pub fn standard() -> Self {
        EvalConfig {
            scale: ScaleSpaceParams::default().with_octaves(5),
            edge_threshold: 10.0,
            grid_1d: SlopeGrid::integer(-3..=3, 0..=0).unwrap(),
            grid_2d: SlopeGrid::integer(-3..=3, -3..=3).unwrap(),
            merge_slopes: SlopeGrid::integer(-3..=3, 0..=0).unwrap(),
            ordering: PipelineOrder::ScaleFirst,
            tolerance: Tolerance::default(),
            fp_fraction: 0.10,
            thresholds: super::threshold_ladder(0.002, 0.05, 60),
        }
    }

    pub fn floor(&self) -> f64 {
        self.thresholds.last().copied().unwrap_or(0.0)
    }

    pub fn detector(&self, method: Method, peak_threshold: f64) -> DetectorParams {
        let (mode, grid) = match method {
            Method::SingleFrame | Method::BurstMerge => (DetectorMode::Sift2D, SlopeGrid::zero()),
            Method::Buff1D => (DetectorMode::Buff1D, self.grid_1d.clone()),
            Method::Buff2D => (DetectorMode::Buff2D, self.grid_2d.clone()),
        };
        DetectorParams {
            scale: self.scale,
            grid,
            peak_threshold,
            edge_threshold: self.edge_threshold,
            mode,
            ordering: self.ordering,
            slope_boundary: true,
        }
    }
}

/// The image a single-image method runs on.
fn method_image(method: Method, burst: &Burst, merge_slope: (f64, f64)) -> Result<Option<Image>> {
    Ok(match method {
        Method::SingleFrame => Some(burst.reference().clone()),
        Method::BurstMerge => Some(shift_sum(burst, merge_slope)?),
        Method::Buff1D | Method::Buff2D => None,
    })
}

/// Detections of one method at `threshold`.
pub fn detect_method(
    method: Method,
    burst: &Burst,
    cfg: &EvalConfig,
    threshold: f64,
    merge_slope: (f64, f64),
) -> Result<Vec<Keypoint>> {
    let p = cfg.detector(method, threshold);
    match method_image(method, burst, merge_slope)? {
        Some(img) => detect_sift_baseline(&img, &p),
        None => detect(burst, &p),
    }
}

/// Detections plus descriptors of one method at `threshold`.
pub fn describe_method(
    method: Method,
    burst: &Burst,
    cfg: &EvalConfig,
    threshold: f64,
    merge_slope: (f64, f64),
) -> Result<Vec<Feature>> {
    let p = cfg.detector(method, threshold);
    match method_image(method, burst, merge_slope)? {
        Some(img) => {
            let kps = detect_sift_baseline(&img, &p)?;
            describe_keypoints(DescriptionSource::Image(&img), &kps, &p.scale)
        }
        None => detect_and_describe(burst, &p),
    }
}

/// ROC of one method from a single pass at the configured floor.
#[derive(Clone, Debug)]
pub struct MethodRoc {
    pub method: Method,
    pub curve: RocCurve,
    pub selection: ThresholdSelection,
    pub merge_slope: (f64, f64),
}

/// ROC for `method`; the merge baseline tries every candidate slope and
/// keeps the one with the best tpr at the false positive budget.
pub fn roc_sweep(method: Method, burst: &Burst, gt: &GroundTruth, cfg: &EvalConfig) -> Result<MethodRoc> {
    let slopes: Vec<(f64, f64)> = match method {
        Method::BurstMerge => cfg.merge_slopes.iter().map(|(_, _, s)| s).collect(),
        _ => vec![(0.0, 0.0)],
    };
    let mut best: Option<MethodRoc> = None;
    for s in slopes {
        let kps = detect_method(method, burst, cfg, cfg.floor(), s)?;
        let curve = roc_from_detections(gt, &kps, &cfg.thresholds, &cfg.tolerance)?;
        let selection = select_peak_threshold(&curve, cfg.fp_fraction)?;
        let better = best.as_ref().is_none_or(|b| selection.point.tpr > b.selection.point.tpr);
        if better {
            best = Some(MethodRoc {
                method,
                curve,
                selection,
                merge_slope: s,
            });
        }
    }
    Ok(best.expect("at least one slope"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub frames: usize,
    pub tpr: f64,
    pub tp: usize,
    pub fp: usize,
}

/// Detection quality against burst size at a fixed peak threshold.
pub fn burst_size_sweep(
    scene: &Scene,
    sizes: &[usize],
    method: Method,
    cfg: &EvalConfig,
    threshold: f64,
    merge_slope: (f64, f64),
) -> Result<Vec<SweepRow>> {
    sizes
        .iter()
        .map(|&n| {
            let burst = scene.burst(n)?;
            let kps = detect_method(method, &burst, cfg, threshold, merge_slope)?;
            let c = classify_detections(scene.ground_truth(), &kps, &cfg.tolerance);
            Ok(SweepRow {
                frames: n,
                tpr: c.tpr,
                tp: c.tp,
                fp: c.fp,
            })
        })
        .collect()
}

/// `N,tpr,fp` table.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("N,tpr,fp\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{}\n", r.frames, r.tpr, r.fp));
    }
    s
}

/// Smallest read noise from `candidates` (ascending) at which the
/// single-frame detector's tpr at the budget drops below `max_tpr`.
pub fn calibrate_noise(scene: &Scene, candidates: &[f64], max_tpr: f64, cfg: &EvalConfig) -> Result<(f64, f64)> {
    for &std in candidates {
        let s = scene.with_noise(std);
        let burst = s.burst(2)?;
        let roc = roc_sweep(Method::SingleFrame, &burst, s.ground_truth(), cfg)?;
        if roc.selection.point.tpr < max_tpr {
            return Ok((std, roc.selection.point.tpr));
        }
    }
    Err(Error::InvalidParameter(format!(
        "no candidate noise level brings single-frame tpr below {max_tpr}"
    )))
}
