//! Traffic signal control toolkit: a deterministic queue-based intersection
//! simulator, a junction-matrix state encoding with training-time augmentation,
//! a small reverse-mode neural network library, PPO training with low-rank
//! adapter fine-tuning, and classic timing baselines for comparison.
//!
//! Everything is seeded and bit-reproducible: two runs with the same
//! configuration and seeds produce identical transitions, identical parameter
//! updates, and identical reports, with or without the `parallel` feature.

pub mod sim;
pub mod augment;
pub mod baselines;
pub mod eval;
pub mod exec;
pub mod lora;
pub mod nn;
pub mod ppo;
pub mod state;
