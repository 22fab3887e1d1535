//! `buff`: synthesize bursts, detect and describe burst features, match
//! and evaluate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use buff_core::features_io::format_matches;
use buff_core::synth::GroundTruth;
use buff_core::{
    classify_detections, compute_match_metrics, describe_keypoints, detect_and_describe, detect_method, detect_sift_baseline,
    export_features_text, load_image, match_descriptors, read_native, roc_sweep, save_png, sweep_to_csv, threshold_ladder,
    write_native, BitDepth, Burst, DescriptionSource, DetectorMode, DetectorParams, EvalConfig, Feature, Image, MatchOptions,
    Method, ScaleSpaceParams, Scene, SceneParams, SlopeGrid, SweepRow, Tolerance,
};
use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use thiserror::Error;

use config::{ConfigError, DetectSettings, EvalSettings, MatchSettings, MetricsSettings, RunConfig, Settings, SynthSettings};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] buff_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(ConfigError::Io { .. }) => 2,
            CliError::Config(_) | CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// One `--flag` per settings key, plus `--config` and `--print-config`.
fn with_settings<S: Settings>(cmd: Command) -> Command {
    let defaults = S::default().pairs();
    let mut cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("flat key = value file; flags override it"),
        )
        .arg(
            Arg::new("print-config")
                .long("print-config")
                .action(ArgAction::SetTrue)
                .help("print the resolved configuration and exit"),
        );
    for ((key, help), (_, default)) in S::KEYS.iter().zip(defaults) {
        cmd = cmd.arg(
            Arg::new(key.to_string())
                .long(flag_name(key))
                .value_name("VALUE")
                .allow_hyphen_values(true)
                .help(format!("{help} [default: {default}]"))
                .help_heading("Settings"),
        );
    }
    cmd
}

fn resolve<S: Settings>(m: &ArgMatches) -> CliResult<S> {
    let file = match m.get_one::<String>("config") {
        Some(p) => Some(RunConfig::read(Path::new(p))?),
        None => None,
    };
    let mut overrides = Vec::new();
    for (key, _) in S::KEYS {
        if m.value_source(key) == Some(ValueSource::CommandLine) {
            overrides.push((key.to_string(), m.get_one::<String>(key).unwrap().clone()));
        }
    }
    Ok(S::resolve(file.as_ref(), &overrides)?)
}

fn path_arg(name: &'static str, help: &'static str, required: bool) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .help(help)
        .required(required)
}

fn input_arg() -> Arg {
    Arg::new("input")
        .long("input")
        .value_name("GLOB")
        .help("frame files in temporal order, e.g. 'burst/frame_*.png'")
        .required(true)
}

fn cli() -> Command {
    Command::new("buff")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Burst feature detection and evaluation")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            with_settings::<SynthSettings>(Command::new("synth").about("render a synthetic disk burst with ground truth"))
                .arg(path_arg("out", "output directory", true)),
        )
        .subcommand(
            with_settings::<DetectSettings>(Command::new("detect").about("detect and describe features in a burst"))
                .arg(input_arg())
                .arg(path_arg("out", "native feature file", true)),
        )
        .subcommand(
            with_settings::<MatchSettings>(Command::new("match").about("match two native feature files"))
                .arg(path_arg("a", "features of view a", true))
                .arg(path_arg("b", "features of view b", true))
                .arg(path_arg("out", "match file (default: stdout)", false)),
        )
        .subcommand(
            with_settings::<EvalSettings>(Command::new("eval-roc").about("detection ROC against ground truth"))
                .arg(input_arg())
                .arg(path_arg("ground-truth", "ground truth file", true))
                .arg(path_arg("out", "CSV file (default: stdout)", false)),
        )
        .subcommand(
            with_settings::<EvalSettings>(Command::new("eval-sweep").about("detection quality against burst size"))
                .arg(input_arg())
                .arg(path_arg("ground-truth", "ground truth file", true))
                .arg(path_arg("out", "CSV file (default: stdout)", false)),
        )
        .subcommand(
            with_settings::<MetricsSettings>(Command::new("eval-metrics").about("matching metrics between two views"))
                .arg(path_arg("a", "features of view a", true))
                .arg(path_arg("b", "features of view b", true))
                .arg(path_arg("out", "CSV file (default: stdout)", false))
                .arg(
                    Arg::new("append")
                        .long("append")
                        .action(ArgAction::SetTrue)
                        .help("append a row to an existing CSV instead of rewriting it"),
                ),
        )
        .subcommand(
            Command::new("export")
                .about("convert native features to the 128-column text format plus a .slopes sidecar")
                .arg(path_arg("features", "native feature file", true))
                .arg(path_arg("out", "text feature file", true)),
        )
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_output(out: Option<&String>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => {
            let p = Path::new(p);
            fs::write(p, text).map_err(io_err(p))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn load_frames(pattern: &str, bits: u32) -> CliResult<Vec<Image>> {
    let depth = BitDepth::from_bits(bits)?;
    let paths = glob::glob(pattern).map_err(|e| CliError::Usage(format!("bad input pattern `{pattern}`: {e}")))?;
    let mut files = Vec::new();
    for p in paths {
        files.push(p.map_err(|e| CliError::Data(e.to_string()))?);
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no files match `{pattern}`")));
    }
    Ok(files.iter().map(|f| load_image(f, depth)).collect::<Result<Vec<_>, _>>()?)
}

fn load_burst(pattern: &str, bits: u32, reference: Option<usize>) -> CliResult<Burst> {
    let frames = load_frames(pattern, bits)?;
    let r = reference.unwrap_or(frames.len() / 2);
    Ok(Burst::with_reference(frames, r)?)
}

fn scale_params(octaves: usize, levels: usize, sigma0: f64, input_blur: f64) -> ScaleSpaceParams {
    ScaleSpaceParams {
        octaves,
        levels_per_octave: levels,
        sigma0,
        input_blur,
        ..ScaleSpaceParams::default()
    }
}

fn run_synth(m: &ArgMatches, s: &SynthSettings) -> CliResult<()> {
    let out = Path::new(m.get_one::<String>("out").unwrap());
    let depth = BitDepth::from_bits(s.bits)?;
    let params = SceneParams {
        width: s.width,
        height: s.height,
        disks: s.disks,
        min_radius: s.min_radius,
        max_radius: s.max_radius,
        background: s.background as f32,
        contrast: s.contrast as f32,
        frames: s.frames,
        slopes_u: s.slopes_u.0.clone(),
        slopes_v: s.slopes_v.0.clone(),
        read_std: s.read_std,
        photon_scale: s.photon_scale,
        layout_seed: s.layout_seed,
        slope_seed: s.slope_seed,
        noise_seed: s.noise_seed,
        supersample: s.supersample,
    };
    let scene = Scene::new(params)?;
    let burst = scene.burst(s.frames)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    for (i, f) in burst.frames().iter().enumerate() {
        save_png(f, out.join(format!("frame_{i:03}.png")), depth)?;
    }
    let gt_path = out.join("ground_truth.txt");
    let gt = format!("# u v sigma lambda_u lambda_v\n{}", scene.ground_truth().to_text());
    fs::write(&gt_path, gt).map_err(io_err(&gt_path))?;
    let cfg_path = out.join("synth.cfg");
    fs::write(&cfg_path, s.to_text()).map_err(io_err(&cfg_path))?;
    eprintln!(
        "synth: {} frames of {}x{}, {} ground-truth features in {}",
        burst.len(),
        s.width,
        s.height,
        scene.ground_truth().len(),
        out.display()
    );
    Ok(())
}

fn usage(e: buff_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn detector_params(s: &DetectSettings) -> CliResult<DetectorParams> {
    BitDepth::from_bits(s.bits).map_err(usage)?;
    let grid = match s.mode {
        DetectorMode::Sift2D => SlopeGrid::zero(),
        _ => SlopeGrid::new(s.slopes_u.0.clone(), s.slopes_v.0.clone()).map_err(usage)?,
    };
    let p = DetectorParams {
        scale: scale_params(s.octaves, s.levels_per_octave, s.sigma0, s.input_blur),
        grid,
        peak_threshold: s.threshold,
        edge_threshold: s.edge_threshold,
        mode: s.mode,
        ordering: s.ordering,
        slope_boundary: s.slope_boundary,
    };
    p.validate().map_err(usage)?;
    Ok(p)
}

fn run_detect(m: &ArgMatches, s: &DetectSettings) -> CliResult<()> {
    let pattern = m.get_one::<String>("input").unwrap();
    let out = Path::new(m.get_one::<String>("out").unwrap());
    let p = detector_params(s)?;
    let features = if s.mode == DetectorMode::Sift2D {
        let frames = load_frames(pattern, s.bits)?;
        let r = s.reference.unwrap_or(frames.len() / 2);
        let img = frames
            .get(r)
            .ok_or_else(|| CliError::Data(format!("reference index {r} out of range for {} frames", frames.len())))?;
        let kps = detect_sift_baseline(img, &p)?;
        describe_keypoints(DescriptionSource::Image(img), &kps, &p.scale)?
    } else {
        let burst = load_burst(pattern, s.bits, s.reference)?;
        detect_and_describe(&burst, &p)?
    };
    write_native(&features, out)?;
    eprintln!("detect: {} features -> {}", features.len(), out.display());
    Ok(())
}

fn split(features: Vec<Feature>) -> (Vec<buff_core::Keypoint>, Vec<buff_core::Descriptor>) {
    features.into_iter().map(|f| (f.keypoint, f.descriptor)).unzip()
}

fn read_features(m: &ArgMatches, name: &str) -> CliResult<Vec<Feature>> {
    Ok(read_native(m.get_one::<String>(name).unwrap())?)
}

fn run_match(m: &ArgMatches, s: &MatchSettings) -> CliResult<()> {
    let (_, da) = split(read_features(m, "a")?);
    let (_, db) = split(read_features(m, "b")?);
    let opts = MatchOptions {
        ratio_threshold: s.ratio,
        mutual: s.mutual,
    };
    let matches = match_descriptors(&da, &db, &opts);
    let text = format!("{}# idx_a idx_b distance ratio\n{}", s.header("match"), format_matches(&matches));
    write_output(m.get_one::<String>("out"), &text)?;
    eprintln!("match: {} matches from {} x {} features", matches.len(), da.len(), db.len());
    Ok(())
}

fn eval_config(s: &EvalSettings) -> CliResult<EvalConfig> {
    let cfg = EvalConfig {
        scale: scale_params(s.octaves, s.levels_per_octave, s.sigma0, s.input_blur),
        edge_threshold: s.edge_threshold,
        grid_1d: SlopeGrid::new(s.grid_1d_u.0.clone(), vec![0.0]).map_err(usage)?,
        grid_2d: SlopeGrid::new(s.grid_2d_u.0.clone(), s.grid_2d_v.0.clone()).map_err(usage)?,
        merge_slopes: SlopeGrid::new(s.merge_u.0.clone(), s.merge_v.0.clone()).map_err(usage)?,
        ordering: s.ordering,
        tolerance: Tolerance {
            spatial_px: s.spatial_px,
            scale_octaves: s.scale_octaves,
        },
        fp_fraction: s.fp_fraction,
        thresholds: threshold_ladder(s.threshold_lo, s.threshold_hi, s.threshold_count),
    };
    if cfg.thresholds.is_empty() || !(s.threshold_lo > 0.0) || !(s.threshold_hi >= s.threshold_lo) {
        return Err(CliError::Usage("need 0 < threshold_lo <= threshold_hi and threshold_count >= 1".into()));
    }
    BitDepth::from_bits(s.bits).map_err(usage)?;
    cfg.detector(s.method, cfg.floor()).validate().map_err(usage)?;
    Ok(cfg)
}

fn eval_inputs(m: &ArgMatches, s: &EvalSettings) -> CliResult<(Burst, GroundTruth, EvalConfig)> {
    let cfg = eval_config(s)?;
    let burst = load_burst(m.get_one::<String>("input").unwrap(), s.bits, s.reference)?;
    let gt = GroundTruth::read(m.get_one::<String>("ground-truth").unwrap())?;
    Ok((burst, gt, cfg))
}

fn run_eval_roc(m: &ArgMatches, s: &EvalSettings) -> CliResult<()> {
    let (burst, gt, cfg) = eval_inputs(m, s)?;
    let roc = roc_sweep(s.method, &burst, &gt, &cfg)?;
    let sel = &roc.selection;
    let text = format!(
        "{}# selected_threshold = {}\n# selected_tpr = {}\n# within_budget = {}\n# merge_slope = {},{}\n{}",
        s.header("eval-roc"),
        sel.threshold,
        sel.point.tpr,
        sel.within_budget,
        roc.merge_slope.0,
        roc.merge_slope.1,
        roc.curve.to_csv()
    );
    write_output(m.get_one::<String>("out"), &text)?;
    if !sel.within_budget {
        eprintln!("eval-roc: warning: no threshold keeps false positives within budget");
    }
    eprintln!("eval-roc: {} tpr {:.3} at threshold {:.4e}", s.method.name(), sel.point.tpr, sel.threshold);
    Ok(())
}

/// The centered `n`-frame sub-burst around the reference frame.
fn sub_burst(burst: &Burst, n: usize) -> CliResult<Burst> {
    let r = burst.ref_index() as i64;
    let first = r - (n / 2) as i64;
    let last = first + n as i64 - 1;
    if n < 2 || first < 0 || last >= burst.len() as i64 {
        return Err(CliError::Data(format!(
            "burst of {} frames with reference {} has no centered {n}-frame sub-burst",
            burst.len(),
            r
        )));
    }
    Ok(Burst::with_reference(
        burst.frames()[first as usize..=last as usize].to_vec(),
        n / 2,
    )?)
}

fn run_eval_sweep(m: &ArgMatches, s: &EvalSettings) -> CliResult<()> {
    let (burst, gt, cfg) = eval_inputs(m, s)?;
    let needs_roc = s.threshold.is_none() || s.method == Method::BurstMerge;
    let roc = if needs_roc { Some(roc_sweep(s.method, &burst, &gt, &cfg)?) } else { None };
    let threshold = s.threshold.unwrap_or_else(|| roc.as_ref().unwrap().selection.threshold);
    let merge_slope = roc.as_ref().map_or((0.0, 0.0), |r| r.merge_slope);
    let mut rows = Vec::new();
    for &n in &s.sizes.0 {
        let b = sub_burst(&burst, n)?;
        let kps = detect_method(s.method, &b, &cfg, threshold, merge_slope)?;
        let c = classify_detections(&gt, &kps, &cfg.tolerance);
        rows.push(SweepRow {
            frames: n,
            tpr: c.tpr,
            tp: c.tp,
            fp: c.fp,
        });
    }
    let text = format!(
        "{}# sweep_threshold = {threshold}\n# merge_slope = {},{}\n{}",
        s.header("eval-sweep"),
        merge_slope.0,
        merge_slope.1,
        sweep_to_csv(&rows)
    );
    write_output(m.get_one::<String>("out"), &text)?;
    eprintln!("eval-sweep: {} sizes at threshold {threshold:.4e}", rows.len());
    Ok(())
}

const METRICS_COLUMNS: &str =
    "method,keypoints_per_image,putative_matches_per_image,inlier_matches_per_image,match_ratio,match_score,precision";

fn run_eval_metrics(m: &ArgMatches, s: &MetricsSettings) -> CliResult<()> {
    if s.label.contains(',') {
        return Err(CliError::Usage("label must not contain commas".into()));
    }
    let (ka, da) = split(read_features(m, "a")?);
    let (kb, db) = split(read_features(m, "b")?);
    let opts = MatchOptions {
        ratio_threshold: s.ratio,
        mutual: s.mutual,
    };
    let matches = match_descriptors(&da, &db, &opts);
    let r = compute_match_metrics(&ka, &kb, &matches, (s.shift_u, s.shift_v), s.inlier_tol)?;
    let row = format!(
        "{},{:.3},{:.3},{:.3},{:.6},{:.6},{:.6}\n",
        s.label,
        r.keypoints_per_image,
        r.putative_matches_per_image,
        r.inlier_matches_per_image,
        r.match_ratio,
        r.match_score,
        r.precision
    );
    let out = m.get_one::<String>("out");
    match out {
        Some(p) if m.get_flag("append") && Path::new(p).exists() => {
            let p = Path::new(p);
            let mut f = fs::OpenOptions::new().append(true).open(p).map_err(io_err(p))?;
            f.write_all(row.as_bytes()).map_err(io_err(p))?;
        }
        _ => write_output(out, &format!("{}{METRICS_COLUMNS}\n{row}", s.header("eval-metrics")))?,
    }
    if r.degenerate {
        eprintln!("eval-metrics: warning: no keypoints in either view");
    }
    eprintln!(
        "eval-metrics: {} match score {:.3}, precision {:.3}",
        s.label, r.match_score, r.precision
    );
    Ok(())
}

fn run_export(m: &ArgMatches) -> CliResult<()> {
    let out = Path::new(m.get_one::<String>("out").unwrap());
    let (kps, descs) = split(read_features(m, "features")?);
    export_features_text(&kps, &descs, out)?;
    eprintln!("export: {} features -> {}", kps.len(), out.display());
    Ok(())
}

/// Resolves settings, honors `--print-config`, then runs `f`.
fn with_config<S: Settings>(m: &ArgMatches, f: impl FnOnce(&ArgMatches, &S) -> CliResult<()>) -> CliResult<()> {
    let s = resolve::<S>(m)?;
    if m.get_flag("print-config") {
        return write_output(None, &s.to_text());
    }
    f(m, &s)
}

fn run(m: &ArgMatches) -> CliResult<()> {
    match m.subcommand() {
        Some(("synth", sm)) => with_config::<SynthSettings>(sm, run_synth),
        Some(("detect", sm)) => with_config::<DetectSettings>(sm, run_detect),
        Some(("match", sm)) => with_config::<MatchSettings>(sm, run_match),
        Some(("eval-roc", sm)) => with_config::<EvalSettings>(sm, run_eval_roc),
        Some(("eval-sweep", sm)) => with_config::<EvalSettings>(sm, run_eval_sweep),
        Some(("eval-metrics", sm)) => with_config::<MetricsSettings>(sm, run_eval_metrics),
        Some(("export", sm)) => run_export(sm),
        _ => unreachable!("subcommand required"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("buff: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
