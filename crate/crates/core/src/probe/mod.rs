//! Feedforward truthfulness probe with hand-derived backprop and Adam.
//!
//! Architecture: `input -> 256 -> 128 -> 64 -> 1`, ReLU on the hidden layers
//! and a sigmoid on the output. Parameters are kept in f64; activations are
//! upcast from the f32 store as batches are gathered.

mod adam;
mod checkpoint;
mod model;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, read_checkpoint, write_checkpoint, CheckpointHeader};
pub use model::{bce, init_probe, sigmoid, InputScaling, Params, ProbeModel, HIDDEN_DIMS, PROB_CLAMP};
pub use train::{predict, predict_rows, train_probe, train_probe_on, EpochLog, TrainConfig, TrainedProbe};
