//! Small neural-network stack used by the learning agents.
//!
//! Everything runs on plain `f64` matrices: a tape records forward ops and
//! replays them in reverse for exact gradients, parameters live in a named
//! store so checkpoints and adapters can address them, and the extractors
//! turn junction state into a fixed-width feature vector regardless of
//! which architecture produced it.

pub mod checkpoint;
mod extractor;
pub mod gradcheck;
mod optim;
mod params;
mod policy;
mod tape;
mod tensor;

pub use checkpoint::{load_policy, save_policy, CheckpointError};
pub use extractor::{
    features, frame_inputs, init_params, window_input, ExtractorKind, NetConfig, MOVEMENT_ROWS,
    ROW_FEATURES,
};
pub use optim::{Adam, Optimizer, Sgd};
pub use params::{GradSet, ParamStore};
pub use policy::{AdapterSpec, Evaluation, Policy, PolicyNodes};
pub use tape::{Tape, ValueId};
pub use tensor::Tensor;
