//! Checkpoints: `manifest.json` (architecture, tensor names and shapes,
//! caller metadata) next to `params.bin`, the tensors' little-endian f64
//! values concatenated in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Network, Param, ParamSet, Shape};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub params: ParamSet,
    pub meta: serde_json::Value,
}

pub fn save_checkpoint(
    dir: &Path,
    network: &Network,
    params: &ParamSet,
    meta: serde_json::Value,
) -> Result<()> {
    network.check_params(params)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut offset = 0;
    let mut blob = Vec::with_capacity(params.count() * 8);
    let mut tensors = Vec::new();
    for p in &params.tensors {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
            len: p.data.len(),
        });
        for v in &p.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.data.len() * 8;
    }
    let manifest = Manifest {
        input_shape: network.input_shape(),
        layers: network.layers().to_vec(),
        tensors,
        meta,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join("params.bin");
    std::fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::json(mpath.display().to_string(), e))?;
    let bpath = dir.join("params.bin");
    let blob = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let end = t.offset + t.len * 8;
        if end > blob.len() || t.len != t.shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "tensor {} out of bounds in params.bin",
                t.name
            )));
        }
        let data = blob[t.offset..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push(Param {
            name: t.name.clone(),
            shape: t.shape.clone(),
            data,
        });
    }
    let network = Network::new(manifest.input_shape, manifest.layers)?;
    let params = ParamSet { tensors };
    network.check_params(&params)?;
    Ok(Checkpoint {
        network,
        params,
        meta: manifest.meta,
    })
}
