//! Class-incremental learning on imbalanced task streams.
//!
//! The crate trains a small MLP over a sequence of classification tasks and
//! counters forgetting with exemplar replay, per-old-task knowledge
//! distillation, gradient-magnitude sample weighting and new-head
//! suppression. Everything is seeded and deterministic: the same
//! configuration and seed reproduce byte-identical metrics.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod tensor;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, stream_fingerprint, Checkpoint};
pub use data::{
    generate_stream, LabeledExample, Profile, ReplayMemory, ReplayPolicy, TaskStream,
    TaskStreamConfig,
};
pub use error::{Error, Result};
pub use losses::{DeltaWeights, LossTerms, OneHotLabel, SnapshotLogits};
pub use metrics::{RoundMetrics, RunMetrics};
pub use nn::{init_backbone, init_model, softmax, Activation, HeadLayout, Model, ModelSpec};
pub use tensor::Matrix;
pub use trainer::{
    run_stream, LossVariant, StreamOutcome, SuppressNorm, TrainState, TrainerConfig,
};
