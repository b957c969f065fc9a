//! Checkpoint directory format.
//!
//! A checkpoint is a directory holding
//! - `manifest.txt`: one line per tensor: `name dtype dims byte_offset file`
//!   (dims comma-separated), plus the parameter-group binary files it points
//!   into,
//! - one `<group>.bin` per parameter group: raw little-endian IEEE-754 32-bit
//!   values in row-major order,
//! - `config.txt`: the resolved run configuration,
//! - `state.txt`: run counters and normalizer state.
//!
//! Loading verifies that manifest shapes match file sizes exactly and rejects
//! the first offending tensor by name. Because live parameters are held at
//! f32 precision, save -> load -> save is byte-identical.

use crate::autodiff::{ParamId, ParamStore};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub file: String,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub env_steps: u64,
    pub grad_steps: u64,
    pub episodes: u64,
    pub pema_range: f64,
    pub pema_initialized: bool,
}

impl Default for RunState {
    fn default() -> Self {
        Self {
            env_steps: 0,
            grad_steps: 0,
            episodes: 0,
            pema_range: 0.0,
            pema_initialized: false,
        }
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    pub entries: Vec<ManifestEntry>,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    pub config_text: String,
    pub state: RunState,
}

/// Writes a checkpoint for the given parameter groups.
pub fn save(
    dir: &Path,
    store: &ParamStore,
    groups: &[(&str, &[ParamId])],
    config_text: &str,
    state: &RunState,
) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("checkpoint: create {dir:?}: {e}"))?;
    let mut manifest = String::new();
    for (group, ids) in groups {
        let file = format!("{group}.bin");
        let mut blob: Vec<u8> = Vec::new();
        for &id in *ids {
            let name = store.name(id);
            let shape = store.shape(id);
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                manifest,
                "{name} f32 {} {} {file}",
                dims.join(","),
                blob.len()
            );
            for &v in store.value(id) {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut f = fs::File::create(dir.join(&file))
            .map_err(|e| format!("checkpoint: create {file}: {e}"))?;
        f.write_all(&blob)
            .map_err(|e| format!("checkpoint: write {file}: {e}"))?;
    }
    fs::write(dir.join("manifest.txt"), manifest)
        .map_err(|e| format!("checkpoint: write manifest: {e}"))?;
    fs::write(dir.join("config.txt"), config_text)
        .map_err(|e| format!("checkpoint: write config: {e}"))?;
    let state_text = format!(
        "env_steps = {}\ngrad_steps = {}\nepisodes = {}\npema_range = {:e}\npema_initialized = {}\n",
        state.env_steps, state.grad_steps, state.episodes, state.pema_range, state.pema_initialized
    );
    fs::write(dir.join("state.txt"), state_text)
        .map_err(|e| format!("checkpoint: write state: {e}"))?;
    Ok(())
}

/// Reads and validates a checkpoint directory.
pub fn load(dir: &Path) -> Result<Checkpoint, String> {
    let manifest_text = fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| format!("checkpoint: read manifest in {dir:?}: {e}"))?;
    let mut entries = Vec::new();
    for (lineno, line) in manifest_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(format!("manifest line {}: expected 5 fields", lineno + 1));
        }
        if parts[1] != "f32" {
            return Err(format!(
                "manifest line {}: unsupported dtype '{}'",
                lineno + 1,
                parts[1]
            ));
        }
        let shape: Result<Vec<usize>, _> = parts[2].split(',').map(str::parse).collect();
        let shape = shape.map_err(|_| format!("manifest line {}: bad dims", lineno + 1))?;
        let offset: usize = parts[3]
            .parse()
            .map_err(|_| format!("manifest line {}: bad offset", lineno + 1))?;
        entries.push(ManifestEntry {
            name: parts[0].to_string(),
            shape,
            offset,
            file: parts[4].to_string(),
        });
    }

    // Group entries by file, verify exact coverage of each blob.
    let mut by_file: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &entries {
        by_file.entry(&e.file).or_default().push(e);
    }
    let mut tensors = BTreeMap::new();
    for (file, file_entries) in by_file {
        let blob = fs::read(dir.join(file)).map_err(|e| format!("checkpoint: read {file}: {e}"))?;
        let mut expected_len = 0usize;
        for e in &file_entries {
            let numel: usize = e.shape.iter().product();
            let end = e.offset + numel * 4;
            if end > blob.len() {
                return Err(format!(
                    "checkpoint: tensor '{}' extends past the end of {file} ({} > {})",
                    e.name,
                    end,
                    blob.len()
                ));
            }
            expected_len = expected_len.max(end);
            let mut data = Vec::with_capacity(numel);
            for i in 0..numel {
                let at = e.offset + i * 4;
                data.push(f32::from_le_bytes([
                    blob[at],
                    blob[at + 1],
                    blob[at + 2],
                    blob[at + 3],
                ]));
            }
            tensors.insert(e.name.clone(), (e.shape.clone(), data));
        }
        if expected_len != blob.len() {
            let first = &file_entries[0].name;
            return Err(format!(
                "checkpoint: {file} has {} bytes but the manifest covers {expected_len} (first tensor: {first})",
                blob.len()
            ));
        }
    }

    let config_text = fs::read_to_string(dir.join("config.txt"))
        .map_err(|e| format!("checkpoint: read config: {e}"))?;
    let state_text = fs::read_to_string(dir.join("state.txt"))
        .map_err(|e| format!("checkpoint: read state: {e}"))?;
    let mut state = RunState::default();
    for line in state_text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "env_steps" => state.env_steps = v.parse().map_err(|_| "bad env_steps")?,
            "grad_steps" => state.grad_steps = v.parse().map_err(|_| "bad grad_steps")?,
            "episodes" => state.episodes = v.parse().map_err(|_| "bad episodes")?,
            "pema_range" => state.pema_range = v.parse().map_err(|_| "bad pema_range")?,
            "pema_initialized" => {
                state.pema_initialized = v.parse().map_err(|_| "bad pema_initialized")?
            }
            _ => {}
        }
    }
    Ok(Checkpoint {
        entries,
        tensors,
        config_text,
        state,
    })
}

/// Copies checkpoint tensors into an already-constructed parameter store;
/// every parameter must be present with a matching shape.
pub fn restore_into(store: &mut ParamStore, ckpt: &Checkpoint) -> Result<(), String> {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let (shape, data) = ckpt
            .tensors
            .get(&name)
            .ok_or_else(|| format!("checkpoint missing tensor '{name}'"))?;
        if shape != store.shape(id) {
            return Err(format!(
                "checkpoint tensor '{name}' has shape {shape:?}, model expects {:?}",
                store.shape(id)
            ));
        }
        let dst = store.value_mut(id);
        for (d, &s) in dst.iter_mut().zip(data.iter()) {
            *d = s as f64;
        }
    }
    Ok(())
}
