//! Small one-stage detector over motion profiles: a strided CoordConv
//! backbone, a YOLO-style head on an 8×8 grid, and the training loop.
//!
//! Everything is implemented on plain `Vec` buffers with a GEMM-backed
//! convolution. `f32` is used for training and inference, `f64` for the
//! finite-difference gradient checks.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod head;
pub mod infer;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use head::{decode_head, nms, Anchor, HeadLayout};
pub use infer::{detect, detect_many, InferOptions};
pub use model::{Detector, DetectorConfig};
pub use tensor::{Tensor, TensorF};
pub use train::{train, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint does not fit the model: {0}")]
    CheckpointMismatch(String),
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("split `{0}` has no samples")]
    EmptySplit(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
}
