//! Shared fixtures for the benchmarks.

use buff_core::{Burst, Scene, SceneParams};

/// A small noisy disk burst with per-disk horizontal motion.
pub fn bench_burst(frames: usize) -> Burst {
    let params = SceneParams {
        width: 320,
        height: 240,
        disks: 24,
        max_radius: 12.0,
        frames,
        ..SceneParams::standard().with_noise(0.05)
    };
    Scene::new(params).and_then(|s| s.burst(frames)).expect("bench scene")
}
