//! Pipeline configuration: one JSON document, every field defaulted.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affinity::AggregationMode;
use crate::error::{Error, Result};
use crate::io::read_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingMethod {
    Cc,
    Gbh,
    #[default]
    Ucm,
}

impl fmt::Display for GroupingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupingMethod::Cc => "cc",
            GroupingMethod::Gbh => "gbh",
            GroupingMethod::Ucm => "ucm",
        })
    }
}

impl FromStr for GroupingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cc" => Ok(GroupingMethod::Cc),
            "gbh" => Ok(GroupingMethod::Gbh),
            "ucm" => Ok(GroupingMethod::Ucm),
            _ => Err(Error::param(format!("unknown grouping method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingConfig {
    pub method: GroupingMethod,
    /// Connected-component thresholds.
    pub thresholds: Vec<f64>,
    /// GBH scale schedule, strictly increasing.
    pub k_schedule: Vec<f64>,
    /// GBH small-component absorption size.
    pub min_size: usize,
    pub use_owt: bool,
    pub use_globalization: bool,
    pub n_eigvecs: usize,
    pub downsample: usize,
    pub sigma: f64,
    /// Weight of the globalised edge when mixed with the local one.
    pub mix_weight: f64,
    /// Hierarchy nodes smaller than this are not emitted.
    pub min_area: usize,
    pub max_regions: usize,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            method: GroupingMethod::Ucm,
            thresholds: vec![0.3, 0.5, 0.7],
            k_schedule: vec![0.5, 1.0, 2.0, 4.0],
            min_size: 1,
            use_owt: true,
            use_globalization: false,
            n_eigvecs: 4,
            downsample: 4,
            sigma: 0.1,
            mix_weight: 0.5,
            min_area: 1,
            max_regions: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub k: usize,
    pub overlap_iou: f64,
    pub use_oln: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k: 3, overlap_iou: 0.5, use_oln: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub budgets: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { budgets: vec![10, 100] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub grouping: GroupingConfig,
    pub aggregation: AggregationMode,
    pub selection: SelectionConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&read_bytes(path)?)
            .map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
        cfg.validate().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Checks the fields the chosen method reads, plus selection and eval.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grouping;
        match g.method {
            GroupingMethod::Cc => {
                if g.thresholds.is_empty() {
                    return Err(Error::param("grouping.thresholds is empty"));
                }
                if let Some(&t) = g.thresholds.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
                    return Err(Error::OutOfRange { what: "grouping.thresholds", value: t });
                }
            }
            GroupingMethod::Gbh => {
                if g.k_schedule.is_empty() {
                    return Err(Error::param("grouping.k_schedule is empty"));
                }
                if g.k_schedule.iter().any(|&k| !(k > 0.0 && k.is_finite()))
                    || g.k_schedule.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(Error::param("grouping.k_schedule must be positive and strictly increasing"));
                }
                if g.min_size == 0 {
                    return Err(Error::param("grouping.min_size must be positive"));
                }
            }
            GroupingMethod::Ucm => {
                if g.use_globalization {
                    if g.n_eigvecs == 0 || g.downsample == 0 {
                        return Err(Error::param("grouping.n_eigvecs and grouping.downsample must be positive"));
                    }
                    if !(g.sigma > 0.0 && g.sigma.is_finite()) {
                        return Err(Error::OutOfRange { what: "grouping.sigma", value: g.sigma });
                    }
                    if !(0.0..=1.0).contains(&g.mix_weight) {
                        return Err(Error::OutOfRange { what: "grouping.mix_weight", value: g.mix_weight });
                    }
                }
            }
        }
        if g.method != GroupingMethod::Cc && g.max_regions == 0 {
            return Err(Error::param("grouping.max_regions must be positive"));
        }
        if self.selection.k == 0 {
            return Err(Error::param("selection.k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.selection.overlap_iou) {
            return Err(Error::OutOfRange { what: "selection.overlap_iou", value: self.selection.overlap_iou });
        }
        if self.eval.budgets.contains(&0) {
            return Err(Error::param("eval.budgets must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_documents() {
        let cfg = PipelineConfig::from_slice(b"{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.grouping.thresholds, vec![0.3, 0.5, 0.7]);
        assert_eq!((cfg.selection.k, cfg.selection.overlap_iou), (3, 0.5));
        assert_eq!(cfg.eval.budgets, vec![10, 100]);

        let cfg = PipelineConfig::from_slice(br#"{"grouping": {"method": "cc"}, "aggregation": "mean", "seed": 9}"#).unwrap();
        assert_eq!(cfg.grouping.method, GroupingMethod::Cc);
        assert_eq!(cfg.aggregation, AggregationMode::Mean);
        assert_eq!(cfg.grouping.k_schedule, GroupingConfig::default().k_schedule);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(PipelineConfig::from_slice(br#"{"grouping": {"methd": "cc"}}"#).is_err());
        assert!(PipelineConfig::from_slice(br#"{"grouping": {"method": "cc", "thresholds": []}}"#).is_err());
        assert!(PipelineConfig::from_slice(br#"{"grouping": {"method": "gbh", "k_schedule": [2, 1]}}"#).is_err());
        assert!(PipelineConfig::from_slice(br#"{"selection": {"k": 0}}"#).is_err());
        // fields of another method are not checked
        assert!(PipelineConfig::from_slice(br#"{"grouping": {"method": "ucm", "thresholds": []}}"#).is_ok());
    }

    #[test]
    fn round_trips() {
        let cfg = PipelineConfig::default();
        let text = serde_json::to_vec(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_slice(&text).unwrap(), cfg);
    }
}
