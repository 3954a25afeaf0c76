//! Miniature Slow-Only-style 3D CNN and its scene-bias mitigation variants.
//!
//! All variants share the same stem/stage layout. Dual-branch models own two
//! independent stem..stage2 prefixes fused after Stage 2; Weighted Focus
//! predicts a per-video α from Stage-1 features and re-weights Stage-2
//! features with the human mask.

mod config;
mod mask;
mod net;
mod train;

pub use config::{BackboneConfig, LayerSpec};
pub use mask::{downsample_mask, weighted_mask, MaskTensor};
pub use net::{argmax, ForwardTrace, Model, ModelVariant};
pub use train::{
    accuracy, collate, history_csv, mean_loss, predict_class, predict_samples, train, EpochRecord, Sample, TrainConfig,
    TrainOutcome,
};
