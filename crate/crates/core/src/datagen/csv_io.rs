use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Labels, TimeSeriesDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    PerSequence,
    PerTimestep,
}

/// Column layout of a long-format CSV: one row per (sample, timestep).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub sample_column: String,
    pub time_column: String,
    /// Feature columns in order. Empty means every column except the id,
    /// time and label columns.
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub label_kind: LabelKind,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            sample_column: "sample_id".into(),
            time_column: "time_index".into(),
            feature_columns: Vec::new(),
            label_column: "label".into(),
            label_kind: LabelKind::PerSequence,
        }
    }
}

fn parse_cell(raw: &str, line: usize, column: &str) -> Result<f64, DataError> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    raw.parse::<f64>().map_err(|_| DataError::Csv(format!("line {line}: `{raw}` in column `{column}` is not a number")))
}

/// Reads a long-format CSV. Missing feature cells become NaN; call
/// [`impute_forward_fill`] before using the data.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<TimeSeriesDataset, DataError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| DataError::Csv(e.to_string()))?;
    let headers = reader.headers().map_err(|e| DataError::Csv(e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::Csv(format!("missing column `{name}`")))
    };
    let sample_col = find(&schema.sample_column)?;
    let time_col = find(&schema.time_column)?;
    let label_col = find(&schema.label_column)?;
    let feature_names: Vec<String> = if schema.feature_columns.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(k, _)| ![sample_col, time_col, label_col].contains(k))
            .map(|(_, h)| h.trim().to_string())
            .collect()
    } else {
        schema.feature_columns.clone()
    };
    let feature_cols = feature_names.iter().map(|f| find(f)).collect::<Result<Vec<_>, _>>()?;
    if feature_cols.is_empty() {
        return Err(DataError::Csv("no feature columns".into()));
    }

    struct Row {
        time: usize,
        values: Vec<f64>,
        label: f64,
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        let id = record.get(sample_col).unwrap_or("").trim().to_string();
        let time_raw = record.get(time_col).unwrap_or("").trim();
        let time = time_raw
            .parse::<usize>()
            .map_err(|_| DataError::Csv(format!("line {line}: bad time index `{time_raw}`")))?;
        let values = feature_cols
            .iter()
            .zip(&feature_names)
            .map(|(&c, name)| parse_cell(record.get(c).unwrap_or(""), line, name))
            .collect::<Result<Vec<_>, _>>()?;
        let label = parse_cell(record.get(label_col).unwrap_or(""), line, &schema.label_column)?;
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(Row { time, values, label });
    }
    if order.is_empty() {
        return Err(DataError::Csv("no data rows".into()));
    }

    let t_len = rows[&order[0]].len();
    let mut ragged = Vec::new();
    for id in &order {
        let r = rows.get_mut(id).expect("grouped");
        r.sort_by_key(|row| row.time);
        let contiguous = r.len() == t_len && r.iter().enumerate().all(|(k, row)| row.time == k);
        if !contiguous {
            ragged.push(id.clone());
        }
    }
    if !ragged.is_empty() {
        return Err(DataError::RaggedTime { samples: ragged });
    }

    let n = feature_names.len();
    let mut x = Vec::with_capacity(order.len() * t_len * n);
    let mut seq_labels = Vec::new();
    let mut step_labels = Vec::new();
    for id in &order {
        let r = &rows[id];
        for row in r {
            x.extend_from_slice(&row.values);
        }
        match schema.label_kind {
            LabelKind::PerSequence => {
                let label = r
                    .iter()
                    .map(|row| row.label)
                    .find(|v| !v.is_nan())
                    .ok_or_else(|| DataError::Csv(format!("sample `{id}` has no label")))?;
                seq_labels.push(u8::from(label >= 0.5));
            }
            LabelKind::PerTimestep => {
                for row in r {
                    if row.label.is_nan() {
                        return Err(DataError::Csv(format!("sample `{id}` misses a label at t={}", row.time)));
                    }
                    step_labels.push(u8::from(row.label >= 0.5));
                }
            }
        }
    }
    let labels = match schema.label_kind {
        LabelKind::PerSequence => Labels::PerSequence(seq_labels),
        LabelKind::PerTimestep => Labels::PerTimestep(step_labels),
    };
    let ds = TimeSeriesDataset {
        n_samples: order.len(),
        n_timesteps: t_len,
        n_features: n,
        x,
        labels,
        true_saliency: None,
        states: None,
        feature_names,
        seed: None,
    };
    ds.validate()?;
    Ok(ds)
}

/// Replaces every NaN by the latest earlier value of the same sample and
/// feature, or by `defaults[feature]` when there is none.
pub fn impute_forward_fill(mut ds: TimeSeriesDataset, defaults: &[f64]) -> Result<TimeSeriesDataset, DataError> {
    if defaults.len() != ds.n_features {
        return Err(DataError::Config(format!(
            "{} imputation defaults for {} features",
            defaults.len(),
            ds.n_features
        )));
    }
    let (t_len, n) = (ds.n_timesteps, ds.n_features);
    for i in 0..ds.n_samples {
        for f in 0..n {
            let mut last: Option<f64> = None;
            for t in 0..t_len {
                let cell = &mut ds.x[(i * t_len + t) * n + f];
                if cell.is_nan() {
                    *cell = last.unwrap_or(defaults[f]);
                } else {
                    last = Some(*cell);
                }
            }
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn forward_fill_column() {
        let f = write("sample_id,time_index,hr,label\na,0,1.0,1\na,1,,1\na,2,,1\na,3,2.0,1\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert!(ds.x[1].is_nan());
        let ds = impute_forward_fill(ds, &[0.0]).unwrap();
        assert_eq!(ds.x, vec![1.0, 1.0, 1.0, 2.0]);
        assert_eq!(ds.labels, Labels::PerSequence(vec![1]));
    }

    #[test]
    fn leading_gap_takes_default() {
        let f = write("sample_id,time_index,hr,bp,label\na,0,,5,0\na,1,3,,0\n");
        let ds = impute_forward_fill(load_csv(f.path(), &CsvSchema::default()).unwrap(), &[0.0, 9.0]).unwrap();
        assert_eq!(ds.x, vec![0.0, 5.0, 3.0, 5.0]);
    }

    #[test]
    fn fully_observed_is_unchanged() {
        let f = write("sample_id,time_index,hr,bp,label\na,1,0.25,-3,0\na,0,1e-3,7.5,0\nb,0,2,2,1\nb,1,4,4,1\n");
        let ds = load_csv(f.path(), &CsvSchema::default()).unwrap();
        let before = ds.x.clone();
        let after = impute_forward_fill(ds, &[0.0, 0.0]).unwrap();
        assert_eq!(
            before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            after.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        // rows are reordered by time index
        assert_eq!(after.x[..2], [1e-3, 7.5]);
    }

    #[test]
    fn ragged_time_lists_offenders() {
        let f = write("sample_id,time_index,hr,label\na,0,1,0\na,1,1,0\nb,0,1,0\nc,0,1,1\nc,2,1,1\n");
        match load_csv(f.path(), &CsvSchema::default()) {
            Err(DataError::RaggedTime { samples }) => assert_eq!(samples, vec!["b".to_string(), "c".to_string()]),
            other => panic!("expected ragged error, got {other:?}"),
        }
    }

    #[test]
    fn per_timestep_labels() {
        let f = write("sample_id,time_index,hr,label\na,0,1,0\na,1,1,1\n");
        let schema = CsvSchema {
            label_kind: LabelKind::PerTimestep,
            ..CsvSchema::default()
        };
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.labels, Labels::PerTimestep(vec![0, 1]));
    }
}
