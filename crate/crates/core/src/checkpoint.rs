//! Safetensors checkpoints with a metadata header.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use decseg_tensor::{Array, Elem};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::config::TrainConfig;
use crate::error::{io_err, Error, Result};
use crate::nn::ParamStore;

const FORMAT: &str = "decseg-checkpoint-1";

/// Prefix of optimiser momentum buffers stored next to the parameters.
pub const MOMENTUM_PREFIX: &str = "momentum.";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    /// Number of completed optimiser steps.
    pub step: usize,
}

fn to_bytes<T: Elem>(a: &Array<T>) -> Vec<u8> {
    a.data().iter().flat_map(|v| (Elem::to_f64(*v) as f32).to_le_bytes()).collect()
}

fn from_view<T: Elem>(name: &str, v: &TensorView<'_>) -> Result<Array<T>> {
    let data: Vec<T> = match v.dtype() {
        Dtype::F32 => v
            .data()
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
        Dtype::F64 => v
            .data()
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
        other => return Err(Error::Checkpoint(format!("`{name}` has unsupported dtype {other:?}"))),
    };
    Ok(Array::new(v.shape().to_vec(), data)?)
}

/// Writes every tensor of `store` plus `extra` tensors, atomically (temp file then rename).
pub fn save<T: Elem>(
    path: &Path,
    meta: &CheckpointMeta,
    store: &ParamStore<T>,
    extra: &[(String, Array<T>)],
) -> Result<()> {
    let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = store
        .ids()
        .map(|id| (store.name(id).to_string(), store.get(id).shape().to_vec(), to_bytes(store.get(id))))
        .collect();
    owned.extend(extra.iter().map(|(n, a)| (n.clone(), a.shape().to_vec(), to_bytes(a))));
    let views = owned
        .iter()
        .map(|(n, s, b)| Ok((n.as_str(), TensorView::new(Dtype::F32, s.clone(), b)?)))
        .collect::<std::result::Result<Vec<_>, safetensors::SafeTensorError>>()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let c = &meta.config;
    let info = HashMap::from([
        ("format".to_string(), FORMAT.to_string()),
        ("step".to_string(), meta.step.to_string()),
        ("backbone".to_string(), format!("{:?}", c.backbone)),
        ("stage_channels".to_string(), format!("{:?}", c.stage_channels)),
        ("reduction_ratio".to_string(), c.reduction_ratio.to_string()),
        ("config".to_string(), c.to_toml()),
    ]);
    let bytes = safetensors::serialize(views, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// A checkpoint read into memory.
#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub meta: Option<CheckpointMeta>,
    pub tensors: BTreeMap<String, Array<T>>,
}

/// Reads any safetensors file with F32 or F64 tensors. `meta` is present for
/// files written by [`save`].
pub fn load<T: Elem>(path: &Path) -> Result<Loaded<T>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = match header.metadata() {
        Some(info) if info.get("format").map(String::as_str) == Some(FORMAT) => {
            let step = info
                .get("step")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Checkpoint("missing step in header".into()))?;
            let config = TrainConfig::from_toml(
                info.get("config").ok_or_else(|| Error::Checkpoint("missing config in header".into()))?,
            )?;
            Some(CheckpointMeta { config, step })
        }
        _ => None,
    };
    let mut tensors = BTreeMap::new();
    for (name, view) in st.tensors() {
        tensors.insert(name.clone(), from_view(&name, &view)?);
    }
    Ok(Loaded { meta, tensors })
}

impl<T: Elem> Loaded<T> {
    /// Copies tensors into `store`. Every store entry whose name does not start
    /// with one of `optional` must be present with a matching shape.
    pub fn restore_into(&self, store: &mut ParamStore<T>, optional: &[&str]) -> Result<()> {
        let mut missing = Vec::new();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            match self.tensors.get(&name) {
                Some(a) => store.set(id, a.clone())?,
                None if optional.iter().any(|p| name.starts_with(p)) => {}
                None => missing.push(name),
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let mut groups: Vec<&str> = missing.iter().map(|n| n.split('.').next().unwrap_or(n)).collect();
        groups.dedup();
        Err(Error::Checkpoint(format!(
            "{} tensors missing (groups: {}), e.g. `{}`",
            missing.len(),
            groups.join(", "),
            missing[0]
        )))
    }
}
