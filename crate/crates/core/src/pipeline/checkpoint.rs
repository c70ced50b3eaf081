//! Checkpoint directories: `weights.ctn`, `manifest.tsv` and `model.cfg`.
//!
//! `weights.ctn` is every parameter's `.ctn` record back to back, in
//! registration order. `manifest.tsv` maps each name to the byte offset and
//! length of its record.

use std::fs;
use std::path::Path;

use super::config::{model_from_kv, model_to_kv, KeyValues};
use super::model::ChangeRwkv;
use crate::error::{Error, Result};
use crate::numerics::{ctn, Scalar};

pub const WEIGHTS_FILE: &str = "weights.ctn";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const CONFIG_FILE: &str = "model.cfg";

pub fn save<S: Scalar>(model: &ChangeRwkv<S>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut weights = Vec::new();
    let mut manifest = String::from("name\toffset\tbytes\n");
    for (name, t) in model.store.iter() {
        let rec = ctn::encode(t)?;
        manifest.push_str(&format!("{name}\t{}\t{}\n", weights.len(), rec.len()));
        weights.extend_from_slice(&rec);
    }
    let mut cfg = model_to_kv(&model.cfg);
    cfg.set("dtype", S::DTYPE.name());
    fs::write(dir.join(WEIGHTS_FILE), weights)?;
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    fs::write(dir.join(CONFIG_FILE), cfg.render())?;
    Ok(())
}

/// Loads into `S`, converting if the checkpoint was written in the other
/// precision. Every registered parameter must be present exactly once.
pub fn load<S: Scalar>(dir: &Path) -> Result<ChangeRwkv<S>> {
    let kv = KeyValues::load(&dir.join(CONFIG_FILE))?;
    let mut clean = KeyValues::default();
    for k in kv.keys().filter(|&k| k != "dtype") {
        clean.set(k, kv.get(k).unwrap_or_default());
    }
    let mut model = ChangeRwkv::<S>::new(model_from_kv(&clean)?, 0)?;
    let weights = fs::read(dir.join(WEIGHTS_FILE))?;
    let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut seen = vec![false; model.store.len()];
    for (no, line) in manifest.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("{MANIFEST_FILE} line {}: {line:?}", no + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [name, offset, bytes] = cols[..] else { return Err(bad()) };
        let offset: usize = offset.parse().map_err(|_| bad())?;
        let bytes: usize = bytes.parse().map_err(|_| bad())?;
        let end = offset.checked_add(bytes).filter(|&e| e <= weights.len()).ok_or_else(bad)?;
        let id = model.store.id(name).ok_or_else(|| Error::Format(format!("unknown parameter {name:?}")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::Format(format!("parameter {name:?} listed twice")));
        }
        let t = ctn::decode(&weights[offset..end])?.into_tensor::<S>();
        model.store.set(id, t)?;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let name = model.store.iter().nth(i).map(|(n, _)| n.to_string()).unwrap_or_default();
        return Err(Error::Format(format!("checkpoint lacks parameter {name:?}")));
    }
    Ok(model)
}
