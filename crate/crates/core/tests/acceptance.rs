//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Exits with status 0 unless `BUFF_ACCEPTANCE_STRICT=1` is set, in which
//! case any failure makes the run fail. Run a subset by passing criterion
//! numbers: `cargo test -p buff-core --test acceptance -- 2 5`.

use std::time::{Duration, Instant};

use buff_core::detect::{find_joint_extrema, ExtremaOptions, JointVolume};
use buff_core::features_io::{format_features_text, parse_features_text};
use buff_core::synth::{add_burst_noise, NoiseParams};
use buff_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn(&mut Shared) -> Outcome;

/// State reused between criteria that share the standard scene.
#[derive(Default)]
struct Shared {
    calibrated: Option<Calibration>,
}

struct Calibration {
    scene: Scene,
    noise: f64,
    rocs: Vec<MethodRoc>,
}

fn cfg() -> EvalConfig {
    EvalConfig::standard()
}

fn noise_candidates() -> Vec<f64> {
    (0..49).map(|i| 0.04 + 0.0025 * i as f64).collect()
}

fn calibration(shared: &mut Shared) -> &Calibration {
    if shared.calibrated.is_none() {
        let base = Scene::new(SceneParams::standard()).expect("standard scene");
        let (noise, _) = calibrate_noise(&base, &noise_candidates(), 0.4, &cfg()).expect("noise calibration");
        let scene = base.with_noise(noise);
        let burst = scene.burst(10).expect("burst");
        let rocs = Method::ALL
            .iter()
            .map(|&m| roc_sweep(m, &burst, scene.ground_truth(), &cfg()).expect("roc"))
            .collect();
        shared.calibrated = Some(Calibration { scene, noise, rocs });
    }
    shared.calibrated.as_ref().unwrap()
}

fn roc_of(c: &Calibration, m: Method) -> &MethodRoc {
    c.rocs.iter().find(|r| r.method == m).unwrap()
}

fn ac1_sqrt_n(_: &mut Shared) -> Outcome {
    let (w, h) = (400, 300);
    let mut parts = Vec::new();
    let mut pass = true;
    for (n, seed) in [(4usize, 101u64), (9, 202)] {
        let flat = Burst::new(vec![Image::filled(w, h, 0.5); n]).unwrap();
        let noisy = add_burst_noise(&flat, &NoiseParams::new(0.05, 0.0, seed)).unwrap();
        let merged = shift_sum(&noisy, (0.0, 0.0)).unwrap();
        let s1 = image_stats(noisy.reference(), None).unwrap().std;
        let sn = image_stats(&merged, None).unwrap().std;
        let factor = s1 / sn;
        let expected = (n as f64).sqrt();
        let ok = merged.valid_count() >= 100_000 && (factor / expected - 1.0).abs() <= 0.05;
        pass &= ok;
        parts.push(format!("N={n} factor {factor:.3} (expected {expected:.0})"));
    }
    outcome(pass, parts.join(", "))
}

fn level_index(k: &Keypoint, s: usize) -> f64 {
    (k.octave * s) as f64 + k.level as f64
}

fn ac2_ordering(_: &mut Shared) -> Outcome {
    let params = SceneParams {
        width: 320,
        height: 240,
        disks: 25,
        min_radius: 3.0,
        max_radius: 12.0,
        frames: 8,
        supersample: 2,
        ..SceneParams::standard().with_noise(0.04)
    };
    let scene = Scene::new(params).unwrap();
    let burst = scene.burst(8).unwrap();
    let scale = ScaleSpaceParams::default().with_octaves(4);
    let base = DetectorParams::buff_1d((-3..=3).map(f64::from).collect())
        .unwrap()
        .with_scale(scale)
        .with_threshold(0.003);
    let mf = detect(&burst, &base.clone().with_ordering(PipelineOrder::MotionFirst)).unwrap();
    let sf = detect(&burst, &base.with_ordering(PipelineOrder::ScaleFirst)).unwrap();
    let s = scale.levels_per_octave;
    let mut used = vec![false; sf.len()];
    let mut paired = 0;
    for a in &mf {
        let hit = sf.iter().enumerate().position(|(j, b)| {
            !used[j]
                && (a.u - b.u).hypot(a.v - b.v) <= 0.25
                && (level_index(a, s) - level_index(b, s)).abs() <= 1.0
                && a.slope_u == b.slope_u
                && a.slope_v == b.slope_v
        });
        if let Some(j) = hit {
            used[j] = true;
            paired += 1;
        }
    }
    let pass = !mf.is_empty() && paired == mf.len() && paired == sf.len();
    outcome(pass, format!("motion-first {} / scale-first {} keypoints, {paired} paired", mf.len(), sf.len()))
}

fn ac3_zero_motion(_: &mut Shared) -> Outcome {
    let params = SceneParams {
        width: 256,
        height: 192,
        disks: 20,
        min_radius: 3.0,
        max_radius: 12.0,
        slopes_u: vec![0.0],
        supersample: 2,
        ..SceneParams::standard().with_noise(0.03)
    };
    let scene = Scene::new(params).unwrap();
    let frame = scene.burst(2).unwrap().reference().clone();
    let burst = Burst::new(vec![frame.clone(); 6]).unwrap();
    let scale = ScaleSpaceParams::default().with_octaves(3);
    let buff = DetectorParams::buff_1d(vec![0.0]).unwrap().with_scale(scale).with_threshold(0.004);
    let sift = DetectorParams::sift().with_scale(scale).with_threshold(0.004);
    let a = detect_and_describe(&burst, &buff).unwrap();
    let kps = detect_sift_baseline(&frame, &sift).unwrap();
    let b = describe_keypoints(DescriptionSource::Image(&frame), &kps, &scale).unwrap();
    let mut worst_pos = 0.0f64;
    let mut worst_desc = 0.0f64;
    let same_len = a.len() == b.len();
    for (x, y) in a.iter().zip(&b) {
        let (p, q) = (&x.keypoint, &y.keypoint);
        worst_pos = worst_pos
            .max((p.u - q.u).abs())
            .max((p.v - q.v).abs())
            .max((p.sigma - q.sigma).abs())
            .max((p.orientation - q.orientation).abs());
        worst_desc = worst_desc.max(x.descriptor.distance(&y.descriptor));
    }
    let pass = same_len && !a.is_empty() && worst_pos <= 1e-9 && worst_desc <= 1e-6;
    outcome(
        pass,
        format!("{} vs {} features, max geometry diff {worst_pos:.2e}, max descriptor distance {worst_desc:.2e}", a.len(), b.len()),
    )
}

/// Exhaustive strict-extremum scan over the full 3^5 - 1 neighborhood of
/// every interior sample.
fn brute_force(vol: &JointVolume) -> Vec<(usize, usize, usize, usize, usize)> {
    let (w, h, l, nu, nv) = (vol.width(), vol.height(), vol.levels(), vol.slopes_u(), vol.slopes_v());
    let mut out = Vec::new();
    for iv in 1..nv - 1 {
        for iu in 1..nu - 1 {
            for z in 1..l - 1 {
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let c = vol.get(x, y, z, iu, iv);
                        let (mut max, mut min) = (true, true);
                        for d in 0..243usize {
                            if d == 121 {
                                continue;
                            }
                            let o = [d % 3, d / 3 % 3, d / 9 % 3, d / 27 % 3, d / 81 % 3];
                            let n = vol.get(x + o[0] - 1, y + o[1] - 1, z + o[2] - 1, iu + o[3] - 1, iv + o[4] - 1);
                            max &= c > n;
                            min &= c < n;
                        }
                        if max || min {
                            out.push((x, y, z, iu, iv));
                        }
                    }
                }
            }
        }
    }
    out
}

fn ac4_brute_force(_: &mut Shared) -> Outcome {
    let mut mismatches = 0;
    let mut total = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + trial);
        // Quantized values produce occasional ties, which must never count.
        let vol = JointVolume::from_fn(16, 16, 5, 3, 3, |_, _, _, _, _| (rng.random_range(-500..500) as f32 * 0.01, true));
        let opts = ExtremaOptions { slope_boundary: false, min_abs: 0.0 };
        let mut got: Vec<_> = find_joint_extrema(&vol, &opts)
            .iter()
            .map(|c| (c.x, c.y, c.level, c.slope_u, c.slope_v))
            .collect();
        let mut want = brute_force(&vol);
        got.sort();
        want.sort();
        total += want.len();
        if got != want {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0 && total > 0, format!("{mismatches} of 100 trials differ, {total} extrema in total"))
}

fn ac5_roc(shared: &mut Shared) -> Outcome {
    let c = calibration(shared);
    let t = |m| roc_of(c, m).selection.point.tpr;
    let (single, merge, one, two) = (t(Method::SingleFrame), t(Method::BurstMerge), t(Method::Buff1D), t(Method::Buff2D));
    let pass = single < 0.4 && one >= two - 0.05 && one > merge && merge > single && one - single >= 0.15;
    outcome(
        pass,
        format!(
            "noise {:.4}; tpr single {single:.3}, merge {merge:.3} (slope {:?}), buff-1d {one:.3}, buff-2d {two:.3}",
            c.noise,
            roc_of(c, Method::BurstMerge).merge_slope
        ),
    )
}

fn ac6_sweep(shared: &mut Shared) -> Outcome {
    let c = calibration(shared);
    let threshold = roc_of(c, Method::Buff1D).selection.threshold;
    let sizes: Vec<usize> = (2..=10).collect();
    let rows = burst_size_sweep(&c.scene, &sizes, Method::Buff1D, &cfg(), threshold, (0.0, 0.0)).unwrap();
    let tpr = |n: usize| rows.iter().find(|r| r.frames == n).unwrap().tpr;
    let mut best = f64::NEG_INFINITY;
    let mut monotone = true;
    for r in &rows {
        monotone &= r.tpr >= best - 0.03;
        best = best.max(r.tpr);
    }
    let pass = monotone && tpr(10) >= tpr(2) && tpr(10) - tpr(6) <= 0.05;
    let list: Vec<String> = rows.iter().map(|r| format!("{}:{:.3}", r.frames, r.tpr)).collect();
    outcome(pass, format!("threshold {threshold:.4}; tpr by N {}", list.join(" ")))
}

fn ac7_slopes(shared: &mut Shared) -> Outcome {
    let noise = calibration(shared).noise;
    let params = SceneParams {
        slopes_u: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        slopes_v: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
        ..SceneParams::standard().with_noise(noise)
    };
    let scene = Scene::new(params).unwrap();
    let burst = scene.burst(10).unwrap();
    let cfg = cfg();
    let roc = roc_sweep(Method::Buff2D, &burst, scene.ground_truth(), &cfg).unwrap();
    let kps = detect_method(Method::Buff2D, &burst, &cfg, roc.selection.threshold, (0.0, 0.0)).unwrap();
    let cls = classify_detections(scene.ground_truth(), &kps, &cfg.tolerance);
    let (mut tp, mut right) = (0, 0);
    for &(i, j) in &cls.assignment {
        let g = &scene.ground_truth().features[i];
        if g.lambda_u.hypot(g.lambda_v) > 2.0 {
            continue;
        }
        tp += 1;
        if kps[j].lambda_u == g.lambda_u && kps[j].lambda_v == g.lambda_v {
            right += 1;
        }
    }
    let frac = right as f64 / tp.max(1) as f64;
    outcome(tp > 0 && frac >= 0.95, format!("{right} of {tp} true positives on the true slope ({:.1}%)", 100.0 * frac))
}

fn ac8_matching(shared: &mut Shared) -> Outcome {
    let c = calibration(shared);
    let cfg = cfg();
    let (du, dv) = (7.0, -4.0);
    let other = c.scene.translated(du, dv, 5000).unwrap();
    let (ba, bb) = (c.scene.burst(10).unwrap(), other.burst(10).unwrap());
    let mut reports = Vec::new();
    for m in [Method::SingleFrame, Method::BurstMerge, Method::Buff1D] {
        let roc = roc_of(c, m);
        let fa = describe_method(m, &ba, &cfg, roc.selection.threshold, roc.merge_slope).unwrap();
        let fb = describe_method(m, &bb, &cfg, roc.selection.threshold, roc.merge_slope).unwrap();
        let da: Vec<Descriptor> = fa.iter().map(|f| f.descriptor).collect();
        let db: Vec<Descriptor> = fb.iter().map(|f| f.descriptor).collect();
        let ka: Vec<Keypoint> = fa.iter().map(|f| f.keypoint).collect();
        let kb: Vec<Keypoint> = fb.iter().map(|f| f.keypoint).collect();
        let matches = match_descriptors(&da, &db, &MatchOptions::default());
        reports.push(compute_match_metrics(&ka, &kb, &matches, (du, dv), 3.0).unwrap());
    }
    let (single, merge, buff) = (reports[0], reports[1], reports[2]);
    let pass = buff.match_score > merge.match_score && merge.match_score > single.match_score && buff.precision >= 0.9;
    outcome(
        pass,
        format!(
            "match score single {:.3}, merge {:.3}, buff-1d {:.3}; inliers/image {:.0}, {:.0}, {:.0}; buff precision {:.3}",
            single.match_score,
            merge.match_score,
            buff.match_score,
            single.inlier_matches_per_image,
            merge.inlier_matches_per_image,
            buff.inlier_matches_per_image,
            buff.precision
        ),
    )
}

fn ac9_descriptors(shared: &mut Shared) -> Outcome {
    let c = calibration(shared);
    let cfg = cfg();
    let burst = c.scene.burst(10).unwrap();
    let mut worst_norm = 0.0f64;
    let mut count = 0;
    for m in Method::ALL {
        let roc = roc_of(c, m);
        for f in describe_method(m, &burst, &cfg, cfg.floor(), roc.merge_slope).unwrap() {
            let n: f64 = f.descriptor.values().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            worst_norm = worst_norm.max((n - 1.0).abs());
            count += 1;
        }
    }
    // Odd-sized image so that decimation phases survive the rotation.
    let scale = ScaleSpaceParams::default().with_octaves(3);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let raw = Image::from_fn(161, 161, |_, _| rng.random::<f32>());
    let img = gaussian_blur(&raw, 2.0);
    let rot = img.rotate90_ccw();
    let kps = detect_sift_baseline(&img, &DetectorParams::sift().with_scale(scale).with_threshold(0.003)).unwrap();
    let w = img.width() as f64;
    let mut ca = PyramidCache::new(DescriptionSource::Image(&img), scale);
    let mut cb = PyramidCache::new(DescriptionSource::Image(&rot), scale);
    let mut worst_rot = 0.0f64;
    let mut rotated = 0;
    for k in &kps {
        let kr = Keypoint { u: k.v, v: w - 1.0 - k.u, ..*k };
        let (ia, ib) = (description_image(&mut ca, k).unwrap(), description_image(&mut cb, &kr).unwrap());
        let oa = assign_orientations(k, &ia, &scale);
        let ob = assign_orientations(&kr, &ib, &scale);
        let db: Vec<Descriptor> = ob.iter().filter_map(|x| compute_descriptor(x, &ib, &scale)).collect();
        for ka in &oa {
            let Some(da) = compute_descriptor(ka, &ia, &scale) else { continue };
            let best = db.iter().map(|d| d.distance(&da)).fold(f64::INFINITY, f64::min);
            worst_rot = worst_rot.max(best);
            rotated += 1;
        }
    }
    let pass = count > 0 && worst_norm <= 1e-6 && rotated > 0 && worst_rot <= 0.05;
    outcome(
        pass,
        format!("{count} descriptors, max |norm - 1| {worst_norm:.2e}; {rotated} rotated, max distance {worst_rot:.4}"),
    )
}

fn ac10_round_trip(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut kps = Vec::new();
    let mut descs = Vec::new();
    for _ in 0..1000 {
        let mut h = [0.0f32; DESCRIPTOR_LEN];
        h.iter_mut().for_each(|x| *x = rng.random::<f32>().powi(3));
        descs.push(Descriptor::from_histogram(&h).unwrap());
        kps.push(Keypoint {
            u: rng.random_range(0.0..640.0),
            v: rng.random_range(0.0..480.0),
            sigma: rng.random_range(1.0..80.0),
            lambda_u: 0.0,
            lambda_v: 0.0,
            response: 0.0,
            octave: 0,
            level: 1,
            sublevel: 1.0,
            slope_u: 0,
            slope_v: 0,
            orientation: rng.random_range(0.0..std::f64::consts::TAU),
            on_slope_boundary: false,
        });
    }
    let parsed = parse_features_text(&format_features_text(&kps, &descs).unwrap()).unwrap();
    let printed = |x: f64| format!("{x:.6}").parse::<f64>().unwrap();
    let mut bad_geom = 0;
    let mut worst = 0.0f32;
    for ((k, d), p) in kps.iter().zip(&descs).zip(&parsed) {
        let same = p.u == printed(k.u) && p.v == printed(k.v) && p.sigma == printed(k.sigma) && p.orientation == printed(k.orientation);
        bad_geom += usize::from(!same);
        for (a, b) in p.descriptor_values().iter().zip(d.values()) {
            worst = worst.max((a - b).abs());
        }
    }
    let pass = parsed.len() == 1000 && bad_geom == 0 && worst <= 1.0 / 512.0;
    outcome(pass, format!("{} parsed, {bad_geom} geometry mismatches, max descriptor error {worst:.5}", parsed.len()))
}

fn main() {
    let checks: [(&str, Check, Duration); 10] = [
        ("sqrt-N noise law", ac1_sqrt_n, Duration::from_secs(5)),
        ("ordering equivalence", ac2_ordering, Duration::from_secs(30)),
        ("zero-motion collapse", ac3_zero_motion, Duration::from_secs(10)),
        ("brute-force extrema", ac4_brute_force, Duration::from_secs(10)),
        ("ROC ordering", ac5_roc, Duration::from_secs(300)),
        ("burst-size sweep", ac6_sweep, Duration::from_secs(600)),
        ("slope recovery", ac7_slopes, Duration::from_secs(120)),
        ("match-metric direction", ac8_matching, Duration::from_secs(300)),
        ("descriptor invariants", ac9_descriptors, Duration::from_secs(300)),
        ("format round-trip", ac10_round_trip, Duration::from_secs(60)),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (i, (name, check, budget)) in checks.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        // The shared scene calibration is charged to the first criterion that needs it.
        let start = Instant::now();
        let o = check(&mut shared);
        let took = start.elapsed();
        let pass = o.pass && took <= *budget;
        failed += usize::from(!pass);
        println!(
            "AC{id} {} {name}: {} [{:.2} s, budget {} s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {failed} failed");
    if failed > 0 && std::env::var("BUFF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
