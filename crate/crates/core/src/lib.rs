//! Background-bias measurement and mitigation for human action recognition.
//!
//! The crate bundles a small deterministic autograd engine, a miniature 3D
//! CNN with four scene-bias mitigation variants, counterfactual compositing
//! utilities, dataset and split builders, swap-set bias metrics, and an
//! LLM-driven prompt-tuning loop with offline replay.

pub mod autograd;
pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod manifest;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod prompt;
pub mod rng;
pub mod tensor;
pub mod video;

pub use autograd::{Conv3dSpec, CustomOp, Pool3dSpec, PoolMode, Primitive, Tape, Var};
pub use error::{Error, Result};
pub use manifest::{Manifest, ManifestItem};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;
