//! Shared inputs for the benchmarks.

use detcal::simulator::{generate_scenes_with_detections, ConfidenceLink, Scene, SceneStreamSpec};
use detcal::{Detection, GroundTruth};

/// Simulated scenes with an overconfident detector, at least `n` detections.
pub fn scenes(n: usize) -> Vec<Scene> {
    let spec = SceneStreamSpec {
        confidence_link: ConfidenceLink::Power(2.0),
        seed: 17,
        ..Default::default()
    };
    generate_scenes_with_detections(&spec, n).expect("default spec is valid")
}

/// A single crowded scene: `k` truths on a grid, each hit by a slightly
/// shifted detection, plus `k` scattered ones.
pub fn crowded_scene(k: usize) -> (Vec<Detection>, Vec<GroundTruth>) {
    let side = (k as f64).sqrt().ceil() as usize;
    let cell = 1.0 / side as f64;
    let mut truths = Vec::with_capacity(k);
    let mut dets = Vec::with_capacity(2 * k);
    for i in 0..k {
        let cx = cell * ((i % side) as f64 + 0.5);
        let cy = cell * ((i / side) as f64 + 0.5);
        let b = detcal::BBox::new(cx, cy, cell * 0.8, cell * 0.8).unwrap();
        truths.push(GroundTruth::new(0, b));
        let shifted = detcal::BBox::new((cx + cell * 0.05).min(1.0), cy, cell * 0.8, cell * 0.8).unwrap();
        dets.push(Detection::new(0, ((i * 7919) % 1000) as f64 / 1000.0, shifted).unwrap());
        let stray = detcal::BBox::new(cx, (cy + cell * 0.5).min(1.0), cell * 0.3, cell * 0.3).unwrap();
        dets.push(Detection::new(0, ((i * 104729) % 1000) as f64 / 1000.0, stray).unwrap());
    }
    (dets, truths)
}
