use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExplainerError, ExplanationMeta, SaliencyMap};
use crate::datagen::{bytes_to_f64s, f64s_to_bytes, read_archive, write_archive, DataError};

/// Long-format rows `sample_id,t,feature,score`.
pub fn write_saliency_csv<W: Write>(out: W, ids: &[u64], maps: &[SaliencyMap]) -> Result<(), ExplainerError> {
    if ids.len() != maps.len() {
        return Err(ExplainerError::Config(format!("{} ids for {} maps", ids.len(), maps.len())));
    }
    let csv_err = |e: csv::Error| DataError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "t", "feature", "score"]).map_err(csv_err)?;
    for (id, m) in ids.iter().zip(maps) {
        for t in 0..m.n_timesteps {
            for i in 0..m.n_features {
                w.write_record([id.to_string(), t.to_string(), i.to_string(), m.at(t, i).to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Entry {
    id: u64,
    method: String,
    n_timesteps: usize,
    n_features: usize,
    meta: ExplanationMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    version: u32,
    entries: Vec<Entry>,
}

/// Writes maps to the compressed archive used for datasets.
pub fn save_saliency(path: &Path, ids: &[u64], maps: &[SaliencyMap]) -> Result<(), ExplainerError> {
    if ids.len() != maps.len() {
        return Err(ExplainerError::Config(format!("{} ids for {} maps", ids.len(), maps.len())));
    }
    let header = Header {
        kind: "saliency".into(),
        version: 1,
        entries: ids
            .iter()
            .zip(maps)
            .map(|(&id, m)| Entry {
                id,
                method: m.method.clone(),
                n_timesteps: m.n_timesteps,
                n_features: m.n_features,
                meta: m.meta.clone(),
            })
            .collect(),
    };
    let scores: Vec<f64> = maps.iter().flat_map(|m| m.scores.iter().copied()).collect();
    let header = serde_json::to_value(header).map_err(|e| DataError::Format(e.to_string()))?;
    write_archive(path, &header, &f64s_to_bytes(&scores))?;
    Ok(())
}

pub fn load_saliency(path: &Path) -> Result<(Vec<u64>, Vec<SaliencyMap>), ExplainerError> {
    let (header, payload) = read_archive(path)?;
    let h: Header = serde_json::from_value(header).map_err(|e| DataError::Format(e.to_string()))?;
    if h.kind != "saliency" || h.version != 1 {
        return Err(DataError::Format(format!("not a saliency archive: {} v{}", h.kind, h.version)).into());
    }
    let scores = bytes_to_f64s(&payload);
    let expected: usize = h.entries.iter().map(|e| e.n_timesteps * e.n_features).sum();
    if scores.len() != expected || payload.len() != expected * 8 {
        return Err(DataError::Format(format!("payload holds {} scores, header needs {expected}", scores.len())).into());
    }
    let mut offset = 0;
    let mut ids = Vec::with_capacity(h.entries.len());
    let mut maps = Vec::with_capacity(h.entries.len());
    for e in h.entries {
        let len = e.n_timesteps * e.n_features;
        ids.push(e.id);
        maps.push(SaliencyMap {
            method: e.method,
            n_timesteps: e.n_timesteps,
            n_features: e.n_features,
            scores: scores[offset..offset + len].to_vec(),
            meta: e.meta,
        });
        offset += len;
    }
    Ok((ids, maps))
}
