//! Point segmentation network, its autodiff core, training and inference.

pub mod checkpoint;
pub mod infer;
pub mod model;
pub mod optim;
pub mod sampling;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use infer::{infer, infer_with, InferConfig, Prediction};
pub use model::{forward, forward_batch, BoundParams, Geometry, ModelParams, NetworkConfig, SAConfig};
pub use optim::{lr_at_epoch, AdamConfig, AdamState};
pub use sampling::{ball_query, farthest_point_sample, farthest_point_sample_from, knn};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome, TrainSample};
