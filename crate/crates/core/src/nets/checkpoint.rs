//! JSON checkpoints: `{"format", "version", "params"}` where `params` holds
//! every tensor as its shape plus a flat row-major value array.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierParams, NetError};

pub const CHECKPOINT_FORMAT: &str = "tempex-classifier";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: ClassifierParams,
}

pub fn save_checkpoint(params: &ClassifierParams, path: &Path) -> Result<(), NetError> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        params: params.clone(),
    };
    let text = serde_json::to_string(&ck).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierParams, NetError> {
    let text = std::fs::read_to_string(path).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(NetError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    ck.params.validate()?;
    Ok(ck.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Readout;
    use crate::seeding::stream_rng;

    #[test]
    fn round_trip_is_exact() {
        let p = ClassifierParams::init(3, 5, 2, Readout::PerTimestep, &mut stream_rng(8, 0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
    }
}
