//! On-disk formats: little-endian `f32` record files with TOML manifests,
//! and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ArrayConfig, ChannelSample, UserGeometry};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::measurement::CombinerPolicy;

pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn f32_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

pub fn parse_f32(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!("{} bytes is not a whole number of f32 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn parse_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!("{} bytes is not a whole number of f64 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

/// Manifest of a channel split. Each record is `2N` interleaved channel
/// values, `N` mask values and `[θ, r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: String,
    pub split: String,
    pub count: usize,
    pub array: ArrayConfig,
    pub paths: usize,
    #[serde(with = "crate::seed::toml_u64")]
    pub seed: u64,
    pub record_floats: usize,
    pub data_file: String,
    pub sha256: String,
    pub config_hash: String,
    pub data_hash: String,
}

pub fn dataset_record_floats(n: usize) -> usize {
    3 * n + 2
}

pub fn encode_dataset(samples: &[ChannelSample]) -> Vec<u8> {
    let mut vals = Vec::new();
    for s in samples {
        for h in &s.h {
            vals.push(h.re);
            vals.push(h.im);
        }
        vals.extend(s.u.iter().map(|&u| u as f64));
        vals.push(s.geometry.theta);
        vals.push(s.geometry.r);
    }
    f32_bytes(vals)
}

pub fn decode_dataset(bytes: &[u8], n: usize, count: usize) -> Result<Vec<ChannelSample>> {
    let vals = parse_f32(bytes)?;
    let rec = dataset_record_floats(n);
    if vals.len() != rec * count {
        return Err(Error::Format(format!("expected {count} records of {rec} floats, found {} floats", vals.len())));
    }
    vals.chunks_exact(rec)
        .map(|r| {
            let h: Vec<C64> = (0..n).map(|i| C64::new(r[2 * i], r[2 * i + 1])).collect();
            let u: Vec<u8> = r[2 * n..3 * n]
                .iter()
                .map(|&v| if v == 0.0 || v == 1.0 { Ok(v as u8) } else { Err(Error::Format(format!("mask entry {v} is not 0 or 1"))) })
                .collect::<Result<_>>()?;
            Ok(ChannelSample {
                h,
                u_sub: Vec::new(),
                u,
                geometry: UserGeometry { theta: r[3 * n], r: r[3 * n + 1] },
                gamma: C64::new(f64::NAN, f64::NAN),
            })
        })
        .collect()
}

fn manifest_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.toml"))
}

pub fn write_dataset(dir: &Path, manifest_template: &DatasetManifest, samples: &[ChannelSample]) -> Result<DatasetManifest> {
    let bytes = encode_dataset(samples);
    let mut m = manifest_template.clone();
    m.format_version = FORMAT_VERSION;
    m.kind = "dataset".into();
    m.count = samples.len();
    m.record_floats = dataset_record_floats(m.array.n);
    m.data_file = format!("{}.bin", m.split);
    m.sha256 = sha256_hex(&bytes);
    write_atomic(&dir.join(&m.data_file), &bytes)?;
    write_toml(&manifest_path(dir, &m.split), &m)?;
    Ok(m)
}

/// Loads a split and verifies its checksum.
pub fn read_dataset(dir: &Path, split: &str) -> Result<(DatasetManifest, Vec<ChannelSample>)> {
    let m: DatasetManifest = read_toml(&manifest_path(dir, split))?;
    if m.kind != "dataset" {
        return Err(Error::Format(format!("{split}: manifest kind is {:?}, expected \"dataset\"", m.kind)));
    }
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("{split}: unsupported format version {}", m.format_version)));
    }
    let bytes = read_bytes(&dir.join(&m.data_file))?;
    let sum = sha256_hex(&bytes);
    if sum != m.sha256 {
        return Err(Error::Format(format!("{split}: checksum mismatch ({sum} vs manifest {})", m.sha256)));
    }
    let samples = decode_dataset(&bytes, m.array.n, m.count)?;
    Ok((m, samples))
}

/// Manifest of a stored observation set. Records are `2·N_RF·P` interleaved
/// values of the raw (unnormalized) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationManifest {
    pub format_version: u32,
    pub kind: String,
    pub split: String,
    pub count: usize,
    pub snr_db: f64,
    pub pilots: usize,
    pub n_rf: usize,
    pub combiner_policy: CombinerPolicy,
    #[serde(with = "crate::seed::toml_u64")]
    pub combiner_seed: u64,
    #[serde(with = "crate::seed::toml_u64")]
    pub noise_seed: u64,
    pub dataset_sha256: String,
    pub data_file: String,
    pub sha256: String,
    pub config_hash: String,
}

pub fn write_observations(dir: &Path, manifest: &ObservationManifest, ys: &[Vec<C64>]) -> Result<ObservationManifest> {
    let bytes = f32_bytes(ys.iter().flat_map(|y| y.iter().flat_map(|v| [v.re, v.im])));
    let mut m = manifest.clone();
    m.format_version = FORMAT_VERSION;
    m.kind = "observations".into();
    m.count = ys.len();
    m.data_file = format!("{}_obs.bin", m.split);
    m.sha256 = sha256_hex(&bytes);
    write_atomic(&dir.join(&m.data_file), &bytes)?;
    write_toml(&dir.join(format!("{}_obs.toml", m.split)), &m)?;
    Ok(m)
}

pub fn read_observations(dir: &Path, split: &str) -> Result<(ObservationManifest, Vec<Vec<C64>>)> {
    let m: ObservationManifest = read_toml(&dir.join(format!("{split}_obs.toml")))?;
    let bytes = read_bytes(&dir.join(&m.data_file))?;
    if sha256_hex(&bytes) != m.sha256 {
        return Err(Error::Format(format!("{split} observations: checksum mismatch")));
    }
    let vals = parse_f32(&bytes)?;
    let rows = m.n_rf * m.pilots;
    if vals.len() != 2 * rows * m.count {
        return Err(Error::Format(format!("{split} observations: wrong size")));
    }
    let ys = vals.chunks_exact(2 * rows).map(|r| r.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect()).collect();
    Ok((m, ys))
}
