//! Single-file container: gzip stream holding a magic tag, a little-endian
//! `u64` header length, a JSON header, then the raw payload.
//!
//! Dataset payload order: `x` as f64 LE, labels as bytes, then the optional
//! saliency (one byte per cell) and states (one byte per step) when the
//! header says they are present.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::{DataError, Labels, TimeSeriesDataset};

pub const MAGIC: &[u8; 4] = b"TPX1";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_archive(path: &Path, header: &serde_json::Value, payload: &[u8]) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
    let head = serde_json::to_vec(header).map_err(|e| DataError::Format(e.to_string()))?;
    let io = |e: std::io::Error| DataError::Io(e.to_string());
    enc.write_all(MAGIC).map_err(io)?;
    enc.write_all(&(head.len() as u64).to_le_bytes()).map_err(io)?;
    enc.write_all(&head).map_err(io)?;
    enc.write_all(payload).map_err(io)?;
    enc.finish().map_err(io)?.flush().map_err(io)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<(serde_json::Value, Vec<u8>), DataError> {
    let file = File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let mut bytes = Vec::new();
    GzDecoder::new(BufReader::new(file))
        .read_to_end(&mut bytes)
        .map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(DataError::Format(format!("{} is not an archive", path.display())));
    }
    let head_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 12 + head_len {
        return Err(DataError::Format("truncated header".into()));
    }
    let header = serde_json::from_slice(&bytes[12..12 + head_len]).map_err(|e| DataError::Format(e.to_string()))?;
    Ok((header, bytes.split_off(12 + head_len)))
}

pub fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    kind: String,
    version: u32,
    n_samples: usize,
    n_timesteps: usize,
    n_features: usize,
    feature_names: Vec<String>,
    seed: Option<u64>,
    per_timestep_labels: bool,
    has_saliency: bool,
    has_states: bool,
}

pub fn save_dataset(ds: &TimeSeriesDataset, path: &Path) -> Result<(), DataError> {
    ds.validate()?;
    let header = DatasetHeader {
        kind: "dataset".into(),
        version: FORMAT_VERSION,
        n_samples: ds.n_samples,
        n_timesteps: ds.n_timesteps,
        n_features: ds.n_features,
        feature_names: ds.feature_names.clone(),
        seed: ds.seed,
        per_timestep_labels: ds.is_per_timestep(),
        has_saliency: ds.true_saliency.is_some(),
        has_states: ds.states.is_some(),
    };
    let mut payload = f64s_to_bytes(&ds.x);
    match &ds.labels {
        Labels::PerTimestep(v) | Labels::PerSequence(v) => payload.extend_from_slice(v),
    }
    if let Some(s) = &ds.true_saliency {
        payload.extend(s.iter().map(|&b| u8::from(b)));
    }
    if let Some(s) = &ds.states {
        payload.extend_from_slice(s);
    }
    let header = serde_json::to_value(header).map_err(|e| DataError::Format(e.to_string()))?;
    write_archive(path, &header, &payload)
}

pub fn load_dataset(path: &Path) -> Result<TimeSeriesDataset, DataError> {
    let (header, payload) = read_archive(path)?;
    let h: DatasetHeader = serde_json::from_value(header).map_err(|e| DataError::Format(e.to_string()))?;
    if h.kind != "dataset" || h.version != FORMAT_VERSION {
        return Err(DataError::Format(format!("unsupported archive {} v{}", h.kind, h.version)));
    }
    let cells = h.n_samples * h.n_timesteps * h.n_features;
    let n_labels = if h.per_timestep_labels { h.n_samples * h.n_timesteps } else { h.n_samples };
    let expected = cells * 8
        + n_labels
        + if h.has_saliency { cells } else { 0 }
        + if h.has_states { h.n_samples * h.n_timesteps } else { 0 };
    if payload.len() != expected {
        return Err(DataError::Format(format!("payload is {} bytes, expected {expected}", payload.len())));
    }
    let mut at = cells * 8;
    let x = bytes_to_f64s(&payload[..at]);
    let raw_labels = payload[at..at + n_labels].to_vec();
    at += n_labels;
    let labels = if h.per_timestep_labels {
        Labels::PerTimestep(raw_labels)
    } else {
        Labels::PerSequence(raw_labels)
    };
    let true_saliency = h.has_saliency.then(|| {
        let s = payload[at..at + cells].iter().map(|&b| b != 0).collect();
        at += cells;
        s
    });
    let states = h.has_states.then(|| payload[at..].to_vec());
    let ds = TimeSeriesDataset {
        n_samples: h.n_samples,
        n_timesteps: h.n_timesteps,
        n_features: h.n_features,
        x,
        labels,
        true_saliency,
        states,
        feature_names: h.feature_names,
        seed: h.seed,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_hmm, HmmConfig};

    #[test]
    fn dataset_round_trip() {
        let ds = generate_hmm(&HmmConfig {
            n_series: 4,
            length: 7,
            seed: 2,
            ..HmmConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hmm.tpx");
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn rejects_foreign_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"not gzip").unwrap();
        assert!(load_dataset(&path).is_err());
    }
}
