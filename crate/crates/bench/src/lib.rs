//! Seeded inputs shared by the benchmarks.

use rand::Rng;
use scenebias::metrics::{Prediction, PredictionRecord};
use scenebias::models::{BackboneConfig, MaskTensor};
use scenebias::rng;
use scenebias::video::{FrameSequence, MaskSequence};
use scenebias::Tensor;

/// Values uniform in [-1, 1).
pub fn tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut rng::seeded(seed))
}

/// A batch of videos in [0, 1) at the backbone's geometry.
pub fn video_batch(cfg: &BackboneConfig, batch: usize, seed: u64) -> Tensor {
    let t = tensor(&[batch, 3, cfg.frames, cfg.size, cfg.size], seed);
    Tensor::new(t.shape(), t.data().iter().map(|v| 0.5 * (v + 1.0)).collect()).expect("same shape")
}

/// Mask covering the left half of every frame.
pub fn half_mask(cfg: &BackboneConfig, batch: usize) -> MaskTensor {
    let s = cfg.size;
    let data = (0..batch * cfg.frames * s * s)
        .map(|i| ((i % s) < s / 2) as u8 as f64)
        .collect();
    MaskTensor::new(Tensor::new(&[batch, 1, cfg.frames, s, s], data).expect("sized")).expect("binary")
}

pub fn frames(t: usize, h: usize, w: usize, seed: u64) -> FrameSequence {
    let mut r = rng::seeded(seed);
    FrameSequence::new(t, h, w, (0..t * h * w * 3).map(|_| r.gen()).collect()).expect("sized")
}

pub fn masks(t: usize, h: usize, w: usize, seed: u64) -> MaskSequence {
    let mut r = rng::seeded(seed);
    MaskSequence::new(t, h, w, (0..t * h * w).map(|_| r.gen_range(0..2)).collect()).expect("sized")
}

/// Swap predictions over `classes` labels with a mix of outcomes.
pub fn records(n: usize, classes: usize, seed: u64) -> Vec<PredictionRecord> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|i| {
            let h = r.gen_range(0..classes);
            let b = (h + r.gen_range(1..classes)) % classes;
            let p = r.gen_range(0..classes);
            PredictionRecord {
                video_id: format!("v{i:06}"),
                human_class: format!("c{h:03}"),
                background_class: format!("c{b:03}"),
                predicted: Prediction::Class(format!("c{p:03}")),
            }
        })
        .collect()
}
