//! Low-rank adaptation of the policy heads.
//!
//! Injection freezes every base parameter and attaches a pair of small
//! matrices to each head weight: a Gaussian down-projection and a zeroed
//! up-projection, so the adapted network starts out exactly equal to the
//! base. Adapters can be trained, saved separately against a fingerprint
//! of their base, reloaded onto the same base, or merged back into the
//! weights.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::nn::checkpoint::{self, CheckpointError};
use crate::nn::{AdapterSpec, ParamStore, Policy, Tensor};

pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Standard deviation of the down-projection init.
pub const INIT_STD: f64 = 0.02;

/// The four head weight matrices an adapter attaches to.
pub const HEAD_TARGETS: [&str; 4] = [
    "actor.fc1.weight",
    "actor.fc2.weight",
    "critic.fc1.weight",
    "critic.fc2.weight",
];

#[derive(Debug, Error)]
pub enum LoraError {
    #[error("adapter already injected for '{0}'")]
    AlreadyInjected(String),
    #[error("adapter target '{0}' is not a parameter of this policy")]
    UnknownTarget(String),
    #[error("adapter rank must be at least 1, got {0}")]
    InvalidRank(usize),
    #[error("adapter was trained against base {expected} but this policy fingerprints as {found}")]
    BaseMismatch { expected: String, found: String },
    #[error("checkpoint does not describe an adapter (missing '{0}')")]
    NotAnAdapter(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn is_adapter_param(name: &str) -> bool {
    name.ends_with(".lora_a") || name.ends_with(".lora_b")
}

/// Fingerprint of the base parameters only, adapter tensors excluded.
pub fn base_fingerprint(policy: &Policy) -> String {
    policy.store.fingerprint(|name| !is_adapter_param(name))
}

/// Attaches fresh adapters to all four head weights, freezing everything
/// else. The up-projection starts at zero, so the adapted forward pass is
/// identical to the base until training moves it.
pub fn inject(policy: &mut Policy, rank: usize, alpha: f64, seed: u64) -> Result<(), LoraError> {
    if rank == 0 {
        return Err(LoraError::InvalidRank(rank));
    }
    for target in HEAD_TARGETS {
        if !policy.store.contains(target) {
            return Err(LoraError::UnknownTarget(target.into()));
        }
        if policy.adapters.contains_key(target) {
            return Err(LoraError::AlreadyInjected(target.into()));
        }
    }
    policy.store.set_all_trainable(false);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, INIT_STD).unwrap();
    for target in HEAD_TARGETS {
        let (rows, cols) = policy.store.get(target).shape();
        let down = Tensor::from_fn(rows, rank, |_, _| dist.sample(&mut rng));
        policy.store.insert(format!("{target}.lora_b"), down, true);
        policy.store.insert(format!("{target}.lora_a"), Tensor::zeros(rank, cols), true);
        policy.adapters.insert(target.into(), AdapterSpec { rank, alpha });
    }
    Ok(())
}

/// Folds every adapter into its base weight (`W + B A * alpha/rank`) and
/// drops the adapter tensors, leaving a plain trainable policy.
pub fn merge(policy: &mut Policy) {
    let mut merged = ParamStore::new();
    for (name, tensor, _) in policy.store.iter() {
        if is_adapter_param(name) {
            continue;
        }
        let mut out = tensor.clone();
        if let Some(spec) = policy.adapters.get(name) {
            let down = policy.store.get(&format!("{name}.lora_b"));
            let up = policy.store.get(&format!("{name}.lora_a"));
            let mut delta = down.matmul(up);
            delta.scale_assign(spec.scaling());
            out.add_assign(&delta);
        }
        merged.insert(name.to_string(), out, true);
    }
    policy.store = merged;
    policy.adapters.clear();
}

/// Writes only the adapter tensors, stamped with the base fingerprint.
pub fn save_adapter(
    path: &Path,
    policy: &Policy,
    extra: &BTreeMap<String, String>,
) -> Result<(), LoraError> {
    let mut meta = extra.clone();
    meta.insert("base_fingerprint".into(), base_fingerprint(policy));
    if let Some(spec) = policy.adapters.values().next() {
        meta.insert("lora.rank".into(), spec.rank.to_string());
        meta.insert("lora.alpha".into(), spec.alpha.to_string());
    }
    let targets: Vec<&str> = policy.adapters.keys().map(String::as_str).collect();
    meta.insert("lora.targets".into(), targets.join(","));
    checkpoint::write_store(path, &meta, &policy.store, is_adapter_param)?;
    Ok(())
}

/// Loads adapter tensors onto a policy holding the exact base they were
/// trained against, freezing the base. Returns the stored metadata.
pub fn load_adapter(path: &Path, policy: &mut Policy) -> Result<BTreeMap<String, String>, LoraError> {
    let (meta, tensors) = checkpoint::read_store(path)?;
    let expected = meta
        .get("base_fingerprint")
        .ok_or_else(|| LoraError::NotAnAdapter("base_fingerprint".into()))?;
    let found = base_fingerprint(policy);
    if *expected != found {
        return Err(LoraError::BaseMismatch {
            expected: expected.clone(),
            found,
        });
    }
    let rank: usize = meta
        .get("lora.rank")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| LoraError::NotAnAdapter("lora.rank".into()))?;
    let alpha: f64 = meta
        .get("lora.alpha")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| LoraError::NotAnAdapter("lora.alpha".into()))?;
    let targets = meta
        .get("lora.targets")
        .ok_or_else(|| LoraError::NotAnAdapter("lora.targets".into()))?;
    for target in targets.split(',') {
        if !policy.store.contains(target) {
            return Err(LoraError::UnknownTarget(target.into()));
        }
        if policy.adapters.contains_key(target) {
            return Err(LoraError::AlreadyInjected(target.into()));
        }
    }
    policy.store.set_all_trainable(false);
    for (name, tensor, trainable) in tensors.iter() {
        if !is_adapter_param(name) {
            return Err(LoraError::NotAnAdapter(name.to_string()));
        }
        policy.store.insert(name.to_string(), tensor.clone(), trainable);
    }
    for target in targets.split(',') {
        policy.adapters.insert(target.into(), AdapterSpec { rank, alpha });
    }
    Ok(meta)
}
