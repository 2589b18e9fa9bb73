//! Sidecar of externally predicted region quality:
//! `[{"region_id": 4, "centerness": 0.8, "iouness": 0.6}, ...]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::objectness::ExternalRegionScores;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    region_id: u64,
    centerness: f64,
    iouness: f64,
}

pub fn parse_scores(bytes: &[u8]) -> Result<ExternalRegionScores> {
    let entries: Vec<Entry> = serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = ExternalRegionScores::new();
    for e in entries {
        out.insert(e.region_id, e.centerness, e.iouness)
            .map_err(|err| Error::Annotation { id: e.region_id, reason: err.to_string() })?;
    }
    Ok(out)
}

pub fn read_scores(path: &Path) -> Result<ExternalRegionScores> {
    parse_scores(&read_bytes(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Annotation { id, reason } => Error::Annotation { id, reason: format!("{reason} (in {})", path.display()) },
        other => other,
    })
}

pub fn write_scores(scores: &ExternalRegionScores, path: &Path) -> Result<()> {
    let entries: Vec<Entry> =
        scores.iter().map(|(region_id, centerness, iouness)| Entry { region_id, centerness, iouness }).collect();
    let mut bytes = serde_json::to_vec_pretty(&entries).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
