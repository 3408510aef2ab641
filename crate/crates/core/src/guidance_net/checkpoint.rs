use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{NetConfig, Variant};
use super::params::Component;
use super::pipeline::GuidancePipeline;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub component: Component,
    pub shape: [usize; 4],
    /// Offset into the payload, in `f32` elements.
    pub offset: usize,
}

/// Checkpoint description; the parameters live in a little-endian `f32` payload beside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub variant: Variant,
    pub config: NetConfig,
    pub tensors: Vec<TensorRecord>,
    /// SHA-256 of each component's slice of the payload.
    pub checksums: BTreeMap<String, String>,
}

fn payload_and_manifest(p: &GuidancePipeline) -> (Vec<u8>, Manifest) {
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    let mut hashers: BTreeMap<String, Sha256> = BTreeMap::new();
    let mut offset = 0;
    for e in p.store().entries() {
        let start = bytes.len();
        for v in e.value.data() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        hashers.entry(e.component.name().to_string()).or_default().update(&bytes[start..]);
        tensors.push(TensorRecord {
            name: e.name.clone(),
            component: e.component,
            shape: e.value.shape(),
            offset,
        });
        offset += e.value.len();
    }
    let checksums = hashers.into_iter().map(|(k, h)| (k, hex::encode(h.finalize()))).collect();
    let manifest = Manifest {
        seed: p.seed(),
        variant: p.variant(),
        config: p.config().clone(),
        tensors,
        checksums,
    };
    (bytes, manifest)
}

/// Writes `manifest.json` and `params.bin` into `dir`, creating it if needed.
/// Parameters are narrowed to `f32`.
pub fn save_checkpoint(p: &GuidancePipeline, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (bytes, manifest) = payload_and_manifest(p);
    let mpath = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
    let ppath = dir.join(PAYLOAD_FILE);
    fs::write(&ppath, bytes).map_err(|e| Error::io(&ppath, e))?;
    Ok(manifest)
}

/// Rebuilds the architecture from the manifest and fills in the stored values,
/// checking names, shapes, payload length and per-component checksums.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<GuidancePipeline> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        field: MANIFEST_FILE.into(),
        message: e.to_string(),
    })?;
    let ppath = dir.join(PAYLOAD_FILE);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;

    let mut p = GuidancePipeline::new(manifest.config.clone(), manifest.variant, manifest.seed)?;
    let ids: Vec<_> = p.store().ids().collect();
    if ids.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, architecture has {}",
            manifest.tensors.len(),
            ids.len()
        )));
    }
    let total: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 4 {
        return Err(Error::Format(format!("payload is {} bytes, expected {}", bytes.len(), total * 4)));
    }
    for (id, rec) in ids.into_iter().zip(&manifest.tensors) {
        let entry = p.store().entry(id);
        if entry.name != rec.name || entry.component != rec.component || entry.value.shape() != rec.shape {
            return Err(Error::Format(format!("tensor {} does not match the architecture ({})", rec.name, entry.name)));
        }
        let n = entry.value.len();
        let src = bytes
            .get(rec.offset * 4..(rec.offset + n) * 4)
            .ok_or_else(|| Error::Format(format!("tensor {} lies outside the payload", rec.name)))?;
        for (dst, chunk) in p.store_mut().get_mut(id).data_mut().iter_mut().zip(src.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    }
    let (_, check) = payload_and_manifest(&p);
    if check.checksums != manifest.checksums {
        return Err(Error::Format("checksum mismatch".into()));
    }
    Ok(p)
}
