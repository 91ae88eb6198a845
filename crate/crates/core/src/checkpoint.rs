//! Checkpoint directories: flat `f64` parameter and optimizer arrays, the
//! prune mask, and a TOML manifest naming every array.
//!
//! Array files carry a generation suffix; the manifest is replaced last, so
//! a crash leaves the previous checkpoint loadable.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{f64_bytes, parse_f64, read_bytes, read_toml, sha256_hex, write_atomic, write_toml, FORMAT_VERSION};
use crate::network::{ArchConfig, NetworkState};
use crate::prune::{count_params, Census, PruneMask};
use crate::train::{Adam, EpochLog, TrainConfig, Trainer};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub role: String,
    pub module: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskEntry {
    pub file: String,
    pub sha256: String,
    pub threshold: f64,
    pub rho: f64,
    pub len: usize,
}

/// Everything needed to continue the random streams: they are keyed by
/// `(seed, stream, epoch, index)`, so the epoch counter is the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    #[serde(with = "crate::seed::toml_u64")]
    pub master_seed: u64,
    #[serde(with = "crate::seed::toml_u64")]
    pub train_seed: u64,
    pub next_epoch: usize,
    pub adam_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: String,
    pub generation: u64,
    pub config_hash: String,
    /// Digest of the settings that produced the training channels.
    pub data_hash: String,
    pub antennas: usize,
    pub tau: f64,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub rng: RngState,
    pub params_file: String,
    pub params_sha256: String,
    pub adam_file: String,
    pub adam_sha256: String,
    pub mask: Option<MaskEntry>,
    pub census: Census,
    pub arrays: Vec<ArrayEntry>,
    pub log: Vec<EpochLog>,
}

fn lower(s: impl std::fmt::Debug) -> String {
    format!("{s:?}").to_lowercase()
}

pub fn array_entries(state: &NetworkState) -> Vec<ArrayEntry> {
    let mut out = Vec::new();
    let mut off = 0;
    state.visit(&mut |name, role, module, v| {
        out.push(ArrayEntry { name: name.to_string(), role: lower(role), module: module.name().into(), offset: off, len: v.len() });
        off += v.len();
    });
    out
}

/// Writes `trainer` into `dir`.
/// Provenance recorded with a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub data_hash: String,
    pub master_seed: u64,
}

pub fn save(dir: &Path, trainer: &Trainer, prov: &Provenance) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let previous: Option<CheckpointManifest> = read_toml(&dir.join(MANIFEST)).ok();
    let generation = previous.as_ref().map_or(0, |m| m.generation + 1);
    let state = &trainer.state;
    let params = f64_bytes(&state.flatten());
    let mut adam_vals = trainer.adam.m.clone();
    adam_vals.extend_from_slice(&trainer.adam.v);
    let adam = f64_bytes(&adam_vals);
    let params_file = format!("params-{generation}.f64");
    let adam_file = format!("adam-{generation}.f64");
    write_atomic(&dir.join(&params_file), &params)?;
    write_atomic(&dir.join(&adam_file), &adam)?;
    let mask = match &trainer.mask {
        Some(m) => {
            let bytes: Vec<u8> = m.keep.iter().map(|&k| k as u8).collect();
            let file = format!("mask-{generation}.u8");
            write_atomic(&dir.join(&file), &bytes)?;
            Some(MaskEntry { file, sha256: sha256_hex(&bytes), threshold: m.threshold, rho: m.rho, len: m.keep.len() })
        }
        None => None,
    };
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        kind: "checkpoint".into(),
        generation,
        config_hash: prov.config_hash.clone(),
        data_hash: prov.data_hash.clone(),
        antennas: state.antennas,
        tau: state.tau,
        arch: state.arch.clone(),
        train: trainer.cfg.clone(),
        rng: RngState {
            master_seed: prov.master_seed,
            train_seed: trainer.cfg.seed,
            next_epoch: trainer.epoch,
            adam_steps: trainer.adam.t,
        },
        params_sha256: sha256_hex(&params),
        params_file,
        adam_sha256: sha256_hex(&adam),
        adam_file,
        mask,
        census: count_params(state),
        arrays: array_entries(state),
        log: trainer.log.clone(),
    };
    write_toml(&dir.join(MANIFEST), &manifest)?;
    if let Some(prev) = previous {
        let mut stale = vec![prev.params_file, prev.adam_file];
        stale.extend(prev.mask.map(|m| m.file));
        for f in stale {
            let _ = fs::remove_file(dir.join(f));
        }
    }
    Ok(manifest)
}

fn checked(dir: &Path, file: &str, sha: &str) -> Result<Vec<u8>> {
    let bytes = read_bytes(&dir.join(file))?;
    if sha256_hex(&bytes) != sha {
        return Err(Error::Format(format!("{file}: checksum mismatch")));
    }
    Ok(bytes)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let m: CheckpointManifest = read_toml(&dir.join(MANIFEST))?;
    if m.kind != "checkpoint" || m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("{}: not a version {FORMAT_VERSION} checkpoint", dir.display())));
    }
    Ok(m)
}

/// Restores the trainer and the manifest.
pub fn load(dir: &Path) -> Result<(Trainer, CheckpointManifest)> {
    let m = read_manifest(dir)?;
    let mut state = NetworkState::init(&m.arch, m.antennas, 0)?;
    if array_entries(&state) != m.arrays {
        return Err(Error::Format("checkpoint array table does not match its architecture".into()));
    }
    let params = parse_f64(&checked(dir, &m.params_file, &m.params_sha256)?)?;
    state.load_flat(&params)?;
    state.tau = m.tau;
    let n = params.len();
    let adam_vals = parse_f64(&checked(dir, &m.adam_file, &m.adam_sha256)?)?;
    if adam_vals.len() != 2 * n {
        return Err(Error::Format("optimizer state has the wrong length".into()));
    }
    let mut trainer = Trainer::new(state, m.train.clone())?;
    trainer.adam = Adam { m: adam_vals[..n].to_vec(), v: adam_vals[n..].to_vec(), t: m.rng.adam_steps, ..trainer.adam };
    trainer.epoch = m.rng.next_epoch;
    trainer.log = m.log.clone();
    if let Some(me) = &m.mask {
        let bytes = checked(dir, &me.file, &me.sha256)?;
        if bytes.len() != me.len || bytes.iter().any(|b| *b > 1) {
            return Err(Error::Format("malformed prune mask".into()));
        }
        let mask = PruneMask { keep: bytes.iter().map(|b| *b == 1).collect(), threshold: me.threshold, rho: me.rho };
        mask.flat_keep(&trainer.state)?;
        trainer.mask = Some(mask);
    }
    Ok((trainer, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ArchConfig;
    use crate::prune::{apply_prune, prune_threshold};

    fn trainer() -> Trainer {
        let arch = ArchConfig { layers: 2, width: 4, kernel: 3, gate_width: 2, gate_kernel: 3, ..ArchConfig::default() };
        let mut s = NetworkState::init(&arch, 8, 1).unwrap();
        s.calibrate(0.25).unwrap();
        let mut t = Trainer::new(s, TrainConfig::default()).unwrap();
        t.adam.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 1e-3);
        t.adam.t = 17;
        t.epoch = 3;
        t
    }

    fn prov(hash: &str, seed: u64) -> Provenance {
        Provenance { config_hash: hash.into(), data_hash: "d".into(), master_seed: seed }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = trainer();
        let q = prune_threshold(&t.state, 0.5).unwrap();
        let mut mask = apply_prune(&mut t.state, q);
        mask.rho = 0.5;
        t.mask = Some(mask);
        let m = save(dir.path(), &t, &prov("cafe", 11)).unwrap();
        let (back, m2) = load(dir.path()).unwrap();
        assert_eq!(back.state, t.state);
        assert_eq!(back.adam, t.adam);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.mask.as_ref().unwrap().keep, t.mask.as_ref().unwrap().keep);
        assert_eq!(m, m2);
        assert_eq!(count_params(&back.state), m.census);
    }

    #[test]
    fn resave_drops_stale_generations() {
        let dir = tempfile::tempdir().unwrap();
        let t = trainer();
        save(dir.path(), &t, &prov("a", 1)).unwrap();
        let m = save(dir.path(), &t, &prov("a", 1)).unwrap();
        assert_eq!(m.generation, 1);
        assert!(!dir.path().join("params-0.f64").exists());
        assert!(load(dir.path()).is_ok());
    }

    #[test]
    fn corrupt_arrays_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = save(dir.path(), &trainer(), &prov("a", 1)).unwrap();
        let p = dir.path().join(&m.params_file);
        let mut b = fs::read(&p).unwrap();
        b[0] ^= 1;
        fs::write(&p, b).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format(_))));
    }
}
