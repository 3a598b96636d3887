//! Binary checkpoint files for parameter stores and whole policies.
//!
//! Layout: a four-byte magic, a little-endian format version, a sorted
//! key/value metadata block, then each tensor with its name, trainable
//! flag, shape and raw little-endian values. Tensors keep their store
//! order, so loading rebuilds an identical store, fingerprints included.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::extractor::{ExtractorKind, NetConfig};
use super::params::ParamStore;
use super::policy::{AdapterSpec, Policy};
use super::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"GLTC";
pub const VERSION: u32 = 1;

const MAX_NAME_BYTES: usize = 1 << 16;
const MAX_TENSOR_VALUES: u64 = 1 << 28;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (magic mismatch)")]
    BadMagic,
    #[error("unsupported checkpoint version {found}, this build reads version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint is missing metadata key '{0}'")]
    MissingMeta(String),
    #[error("metadata key '{key}' holds unusable value '{value}'")]
    BadMeta { key: String, value: String },
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_string(r: &mut impl Read) -> Result<String, CheckpointError> {
    let len = read_u32(r)? as usize;
    if len > MAX_NAME_BYTES {
        return Err(CheckpointError::Malformed(format!(
            "string of {len} bytes exceeds the limit"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Malformed("non-utf8 string".into()))
}

/// Writes the metadata block and every tensor whose name passes `filter`.
pub fn write_store(
    path: &Path,
    meta: &BTreeMap<String, String>,
    store: &ParamStore,
    filter: impl Fn(&str) -> bool,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    for (key, value) in meta {
        write_bytes(&mut w, key.as_bytes())?;
        write_bytes(&mut w, value.as_bytes())?;
    }
    let selected: Vec<_> = store.iter().filter(|(name, _, _)| filter(name)).collect();
    w.write_all(&(selected.len() as u32).to_le_bytes())?;
    for (name, tensor, trainable) in selected {
        write_bytes(&mut w, name.as_bytes())?;
        w.write_all(&[u8::from(trainable)])?;
        w.write_all(&(tensor.rows as u64).to_le_bytes())?;
        w.write_all(&(tensor.cols as u64).to_le_bytes())?;
        for v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back into metadata and a parameter store.
pub fn read_store(path: &Path) -> Result<(BTreeMap<String, String>, ParamStore), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let mut meta = BTreeMap::new();
    let meta_len = read_u32(&mut r)?;
    for _ in 0..meta_len {
        let key = read_string(&mut r)?;
        let value = read_string(&mut r)?;
        meta.insert(key, value);
    }
    let mut store = ParamStore::new();
    let tensor_len = read_u32(&mut r)?;
    for _ in 0..tensor_len {
        let name = read_string(&mut r)?;
        if store.contains(&name) {
            return Err(CheckpointError::Malformed(format!("duplicate tensor '{name}'")));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let rows = read_u64(&mut r)?;
        let cols = read_u64(&mut r)?;
        let values = rows.checked_mul(cols).filter(|&n| n <= MAX_TENSOR_VALUES).ok_or_else(
            || CheckpointError::Malformed(format!("tensor '{name}' claims {rows}x{cols} values")),
        )?;
        let mut data = Vec::with_capacity(values as usize);
        let mut buf = [0u8; 8];
        for _ in 0..values {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        store.insert(name, Tensor::from_vec(rows as usize, cols as usize, data), flag[0] != 0);
    }
    Ok((meta, store))
}

fn require(meta: &BTreeMap<String, String>, key: &str) -> Result<String, CheckpointError> {
    meta.get(key)
        .cloned()
        .ok_or_else(|| CheckpointError::MissingMeta(key.into()))
}

fn parse_meta<T: std::str::FromStr>(
    meta: &BTreeMap<String, String>,
    key: &str,
) -> Result<T, CheckpointError> {
    let value = require(meta, key)?;
    value.parse().map_err(|_| CheckpointError::BadMeta {
        key: key.into(),
        value,
    })
}

/// Saves a whole policy: network shape and adapter layout travel in the
/// metadata block, `extra` entries ride along untouched.
pub fn save_policy(
    path: &Path,
    policy: &Policy,
    extra: &BTreeMap<String, String>,
) -> Result<(), CheckpointError> {
    let mut meta = extra.clone();
    meta.insert("net.kind".into(), policy.kind.label().into());
    meta.insert("net.channels".into(), policy.cfg.channels.to_string());
    meta.insert("net.hidden".into(), policy.cfg.hidden.to_string());
    meta.insert("net.feature".into(), policy.cfg.feature.to_string());
    meta.insert("net.attn_dim".into(), policy.cfg.attn_dim.to_string());
    meta.insert("net.head_hidden".into(), policy.cfg.head_hidden.to_string());
    if !policy.adapters.is_empty() {
        let spec = policy.adapters.values().next().unwrap();
        meta.insert("lora.rank".into(), spec.rank.to_string());
        meta.insert("lora.alpha".into(), spec.alpha.to_string());
        let targets: Vec<&str> = policy.adapters.keys().map(String::as_str).collect();
        meta.insert("lora.targets".into(), targets.join(","));
    }
    write_store(path, &meta, &policy.store, |_| true)
}

/// Reads network shape and metadata without loading tensors into a policy.
pub fn net_config_from_meta(
    meta: &BTreeMap<String, String>,
) -> Result<(ExtractorKind, NetConfig), CheckpointError> {
    let kind: ExtractorKind = parse_meta(meta, "net.kind")?;
    let cfg = NetConfig {
        channels: parse_meta(meta, "net.channels")?,
        hidden: parse_meta(meta, "net.hidden")?,
        feature: parse_meta(meta, "net.feature")?,
        attn_dim: parse_meta(meta, "net.attn_dim")?,
        head_hidden: parse_meta(meta, "net.head_hidden")?,
    };
    Ok((kind, cfg))
}

fn adapters_from_meta(
    meta: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, AdapterSpec>, CheckpointError> {
    let mut adapters = BTreeMap::new();
    if meta.contains_key("lora.targets") {
        let rank = parse_meta(meta, "lora.rank")?;
        let alpha = parse_meta(meta, "lora.alpha")?;
        for target in require(meta, "lora.targets")?.split(',') {
            adapters.insert(target.to_string(), AdapterSpec { rank, alpha });
        }
    }
    Ok(adapters)
}

pub fn load_policy(path: &Path) -> Result<(Policy, BTreeMap<String, String>), CheckpointError> {
    let (meta, store) = read_store(path)?;
    let (kind, cfg) = net_config_from_meta(&meta)?;
    let adapters = adapters_from_meta(&meta)?;
    Ok((Policy::from_parts(kind, cfg, store, adapters), meta))
}
