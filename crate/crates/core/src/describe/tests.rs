use super::*;
use crate::detect::detect_sift_baseline;
use crate::image::image_stats;
use crate::scale_space::gaussian_blur;
use crate::synth::{add_burst_noise, add_noise, render_target, simulate_burst, MotionSpec, NoiseParams, TargetSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scale() -> ScaleSpaceParams {
    ScaleSpaceParams::default().with_octaves(3)
}

fn kp(u: f64, v: f64, octave: usize, level: usize) -> Keypoint {
    Keypoint {
        u,
        v,
        sigma: scale().sigma(octave, level as f64),
        lambda_u: 0.0,
        lambda_v: 0.0,
        response: 1.0,
        octave,
        level,
        sublevel: level as f64,
        slope_u: 0,
        slope_v: 0,
        orientation: 0.0,
        on_slope_boundary: false,
    }
}

fn texture(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Image::new(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap();
    gaussian_blur(&raw, 2.0)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[test]
fn zero_motion_surface_equals_single_image_level() {
    let img = texture(96, 96, 1);
    let burst = Burst::new(vec![img.clone(); 4]).unwrap();
    let grid = SlopeGrid::integer(-1..=1, -1..=1).unwrap();
    let mut cache = PyramidCache::new(DescriptionSource::Burst { burst: &burst, grid: &grid }, scale());
    let k = Keypoint { slope_u: 1, slope_v: 1, ..kp(40.0, 40.0, 1, 2) };
    let a = description_image(&mut cache, &k).unwrap();
    let single = build_gaussian_pyramid(&img, &scale()).unwrap();
    let b = single.level(1, 2);
    assert_eq!(a.dims(), b.dims());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= 1e-6);
    }
}

#[test]
fn slope_outside_grid_errors() {
    let burst = Burst::new(vec![texture(64, 64, 2); 3]).unwrap();
    let grid = SlopeGrid::zero();
    let mut cache = PyramidCache::new(DescriptionSource::Burst { burst: &burst, grid: &grid }, scale());
    let k = Keypoint { lambda_u: 1.0, ..kp(30.0, 30.0, 0, 1) };
    assert!(matches!(description_image(&mut cache, &k), Err(Error::SlopeNotInGrid(..))));
}

fn gradient_std(img: &Image, lo: usize, hi: usize) -> f64 {
    let mut g = Vec::new();
    for y in lo..hi {
        for x in lo..hi {
            if let Some((gx, _)) = gradient(img, x as i64, y as i64) {
                g.push(gx);
            }
        }
    }
    let m = g.iter().sum::<f64>() / g.len() as f64;
    (g.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (g.len() - 1) as f64).sqrt()
}

#[test]
fn burst_surface_lowers_gradient_noise_by_sqrt_n() {
    let n = 9;
    let flat = Burst::new(vec![Image::filled(256, 256, 0.5); n]).unwrap();
    let (mut single_sum, mut merged_sum) = (0.0, 0.0);
    for seed in 0..4 {
        let noisy = add_burst_noise(&flat, &NoiseParams::new(0.05, 0.0, 21 + seed)).unwrap();
        let grid = SlopeGrid::zero();
        let mut cache = PyramidCache::new(DescriptionSource::Burst { burst: &noisy, grid: &grid }, scale());
        let merged = description_image(&mut cache, &kp(128.0, 128.0, 0, 1)).unwrap();
        let single = build_gaussian_pyramid(noisy.reference(), &scale()).unwrap();
        single_sum += gradient_std(single.level(0, 1), 16, 240);
        merged_sum += gradient_std(&merged, 16, 240);
    }
    let ratio = single_sum / merged_sum;
    assert!((ratio / (n as f64).sqrt() - 1.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn matching_slope_gives_sharper_surface() {
    let spec = TargetSpec::new(128, 128, 0.5).with_disk((64.0, 64.0), 10.0, 1.2);
    let (img, gt) = render_target(&spec, 4).unwrap();
    let (burst, _) = simulate_burst(&img, &gt, &MotionSpec::one_d(2.0, 7)).unwrap();
    let grid = SlopeGrid::integer(0..=2, 0..=0).unwrap();
    let mut cache = PyramidCache::new(DescriptionSource::Burst { burst: &burst, grid: &grid }, scale());
    let max_grad = |img: &Image| {
        let mut m = 0.0f64;
        for y in 1..127 {
            for x in 1..127 {
                if let Some((gx, _)) = gradient(img, x, y) {
                    m = m.max(gx.abs());
                }
            }
        }
        m
    };
    let at = |c: &mut PyramidCache, lu: f64| description_image(c, &Keypoint { lambda_u: lu, ..kp(64.0, 64.0, 0, 1) }).unwrap();
    let sharp = max_grad(&at(&mut cache, 2.0));
    let blurred = max_grad(&at(&mut cache, 0.0));
    assert!(sharp > 1.5 * blurred, "{sharp} vs {blurred}");
}

fn smooth_step(w: usize, h: usize, f: impl Fn(f64, f64) -> f64) -> Image {
    let raw = Image::from_fn(w, h, |x, y| f(x as f64, y as f64) as f32);
    gaussian_blur(&raw, 1.0)
}

#[test]
fn vertical_step_edge_single_orientation() {
    let img = smooth_step(64, 64, |x, _| if x >= 32.0 { 0.8 } else { 0.2 });
    let k = kp(32.0, 32.0, 0, 1);
    let o = assign_orientations(&k, &img, &scale());
    assert_eq!(o.len(), 1, "{o:?}");
    assert!(angle_diff(o[0].orientation, 0.0) < 5f64.to_radians(), "{}", o[0].orientation);
    let img = smooth_step(64, 64, |_, y| if y >= 32.0 { 0.2 } else { 0.8 });
    let o = assign_orientations(&k, &img, &scale());
    assert_eq!(o.len(), 1);
    assert!(angle_diff(o[0].orientation, 1.5 * std::f64::consts::PI) < 5f64.to_radians());
}

#[test]
fn perpendicular_edges_give_two_orientations() {
    let img = Image::from_fn(64, 64, |x, y| {
        0.2 + if x >= 32 { 0.3 } else { 0.0 } + if y >= 32 { 0.3 } else { 0.0 }
    });
    let o = assign_orientations(&kp(32.0, 32.0, 0, 1), &img, &scale());
    assert_eq!(o.len(), 2, "{o:?}");
    let mut angles: Vec<f64> = o.iter().map(|k| k.orientation.to_degrees()).collect();
    angles.sort_by(f64::total_cmp);
    assert!(angles[0].abs() < 5.0 && (angles[1] - 90.0).abs() < 5.0, "{angles:?}");
}

#[test]
fn isotropic_blob_yields_at_least_one_copy() {
    let img = Image::from_fn(64, 64, |x, y| {
        let d2 = (x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2);
        (0.5 + 0.3 * (-d2 / 18.0).exp()) as f32
    });
    let o = assign_orientations(&kp(32.0, 32.0, 0, 1), &img, &scale());
    assert!(!o.is_empty());
    for k in &o {
        assert!(compute_descriptor(k, &img, &scale()).is_some());
    }
}

#[test]
fn flat_and_masked_windows_drop() {
    let flat = Image::filled(64, 64, 0.5);
    let k = kp(32.0, 32.0, 0, 1);
    let o = assign_orientations(&k, &flat, &scale());
    assert_eq!(o.len(), 1);
    assert!(compute_descriptor(&o[0], &flat, &scale()).is_none());
    let masked = Image::with_mask(64, 64, vec![0.5; 64 * 64], vec![false; 64 * 64]).unwrap();
    assert!(assign_orientations(&k, &masked, &scale()).is_empty());
    assert!(compute_descriptor(&k, &masked, &scale()).is_none());
}

#[test]
fn rotation_by_quarter_turn_is_covariant() {
    let img = texture(80, 80, 5);
    let rot = img.rotate90_ccw();
    let k = kp(40.0, 37.0, 0, 2);
    let kr = Keypoint { u: 37.0, v: 79.0 - 40.0, ..k };
    let a = assign_orientations(&k, &img, &scale());
    let b = assign_orientations(&kr, &rot, &scale());
    assert_eq!(a.len(), b.len());
    for ka in &a {
        let da = compute_descriptor(ka, &img, &scale()).unwrap();
        let best = b
            .iter()
            .map(|kb| compute_descriptor(kb, &rot, &scale()).unwrap().distance(&da))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.05, "distance {best}");
    }
}

#[test]
fn descriptors_are_deterministic_and_unit_norm() {
    let img = add_noise(&texture(96, 96, 8), &NoiseParams::new(0.01, 0.0, 3)).unwrap();
    let p = crate::detect::DetectorParams::sift().with_scale(scale()).with_threshold(0.002);
    let kps = detect_sift_baseline(&img, &p).unwrap();
    assert!(kps.len() > 5);
    let a = describe_keypoints(DescriptionSource::Image(&img), &kps, &scale()).unwrap();
    let b = describe_keypoints(DescriptionSource::Image(&img), &kps, &scale()).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty());
    for f in &a {
        let n: f64 = f.descriptor.values().iter().map(|v| (*v as f64).powi(2)).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-6);
        assert!(f.descriptor.values().iter().all(|v| *v >= 0.0));
    }
    let stats = image_stats(&img, None).unwrap();
    assert!(stats.std > 0.0);
}

fn histogram() -> impl Strategy<Value = [f32; DESCRIPTOR_LEN]> {
    proptest::collection::vec(prop_oneof![Just(0.0f32), 0.0f32..10.0], DESCRIPTOR_LEN)
        .prop_filter("non-zero", |v| v.iter().any(|x| *x > 0.0))
        .prop_map(|v| v.try_into().unwrap())
}

proptest! {
    #[test]
    fn root_normalized_is_unit_and_non_negative(h in histogram()) {
        let d = Descriptor::from_histogram(&h).unwrap();
        let n: f64 = d.values().iter().map(|v| (*v as f64).powi(2)).sum();
        prop_assert!((n.sqrt() - 1.0).abs() < 1e-6);
        prop_assert!(d.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn euclidean_distance_is_hellinger(a in histogram(), b in histogram()) {
        let (da, db) = (Descriptor::from_histogram(&a).unwrap(), Descriptor::from_histogram(&b).unwrap());
        // L1-normalized vectors are the squares of the root descriptors.
        let bc: f64 = da.values().iter().zip(db.values())
            .map(|(x, y)| ((*x as f64).powi(2) * (*y as f64).powi(2)).sqrt())
            .sum();
        let expected = (2.0 - 2.0 * bc).max(0.0).sqrt();
        prop_assert!((da.distance(&db) - expected).abs() < 1e-6);
    }
}
