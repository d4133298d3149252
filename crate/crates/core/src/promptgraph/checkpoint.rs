//! Checkpoint files: one JSON header line, a newline, then the global and
//! local stores as little-endian `f32`, row-major.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Branch, HierarchicalPrompts, ParameterStore, PromptLayout, TokenComposition};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::knowledge::SubgroupPartition;

const FORMAT: &str = "hiprompt-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub categories: Vec<String>,
    pub m: usize,
    pub d: usize,
    pub composition: TokenComposition,
    pub partition_digest: String,
    pub global_seed: u64,
    pub local_seed: u64,
    pub global_params: usize,
    pub local_params: usize,
    pub encoder: EncoderConfig,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    prompts: &HierarchicalPrompts,
    partition: &SubgroupPartition,
    categories: &[String],
    encoder: &EncoderConfig,
) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: 1,
        categories: categories.to_vec(),
        m: prompts.global_layout.m(),
        d: prompts.global.d(),
        composition: prompts.global_layout.composition(),
        partition_digest: partition.digest(),
        global_seed: prompts.seeds.0,
        local_seed: prompts.seeds.1,
        global_params: prompts.global.n_params(),
        local_params: prompts.local.n_params(),
        encoder: encoder.clone(),
    };
    let mut buf = serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    buf.push(b'\n');
    for v in prompts.global.values().iter().chain(prompts.local.values()) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and rebuilds its layouts from `partition`, which must
/// be the partition the checkpoint was trained with.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    partition: &SubgroupPartition,
) -> Result<(CheckpointHeader, HierarchicalPrompts)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(&ctx, "line 1", "missing header line"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::format(&ctx, "line 1", e.to_string()))?;
    if header.format != FORMAT || header.version != 1 {
        return Err(Error::format(&ctx, "line 1", "not a version 1 checkpoint"));
    }
    if header.partition_digest != partition.digest() {
        return Err(Error::Config(format!(
            "checkpoint was trained with partition {} but {} was supplied",
            header.partition_digest,
            partition.digest()
        )));
    }
    let n = header.categories.len();
    let global_layout = PromptLayout::build(partition, header.composition, header.m, n, Branch::Global)?;
    let local_layout = PromptLayout::build(partition, header.composition, header.m, n, Branch::Local)?;
    if global_layout.n_params() != header.global_params || local_layout.n_params() != header.local_params {
        return Err(Error::format(&ctx, "line 1", "parameter counts do not match the layout"));
    }
    let payload = &bytes[split + 1..];
    let expected = (header.global_params + header.local_params) * header.d * 4;
    if payload.len() != expected {
        return Err(Error::format(
            &ctx,
            format!("byte {}", split + 1),
            format!("payload has {} bytes, expected {expected}", payload.len()),
        ));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let g: Vec<f64> = values.by_ref().take(header.global_params * header.d).collect();
    let l: Vec<f64> = values.collect();
    let prompts = HierarchicalPrompts {
        global: ParameterStore::from_values(Branch::Global, header.d, g)?,
        local: ParameterStore::from_values(Branch::Local, header.d, l)?,
        global_layout,
        local_layout,
        seeds: (header.global_seed, header.local_seed),
    };
    Ok((header, prompts))
}
