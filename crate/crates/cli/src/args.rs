//! Config file loading with flag overrides, and input path resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use pagroup::config::{GroupingMethod, PipelineConfig};
use pagroup::AggregationMode;

/// `--config` plus per-field overrides; flags win over the file.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Pipeline config JSON; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<GroupingMethod>,
    /// Comma-separated connected-component thresholds.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Comma-separated GBH scales.
    #[arg(long, value_delimiter = ',')]
    pub k_schedule: Option<Vec<f64>>,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub use_owt: Option<bool>,
    #[arg(long)]
    pub use_globalization: Option<bool>,
    #[arg(long)]
    pub n_eigvecs: Option<usize>,
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub mix_weight: Option<f64>,
    #[arg(long)]
    pub min_area: Option<usize>,
    #[arg(long)]
    pub max_regions: Option<usize>,
    #[arg(long)]
    pub aggregation: Option<AggregationMode>,
    /// Pseudo-GT masks kept per image.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub overlap_iou: Option<f64>,
    #[arg(long)]
    pub use_oln: Option<bool>,
    /// Comma-separated AR budgets.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::read(p)?,
            None => PipelineConfig::default(),
        };
        let g = &mut cfg.grouping;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(g.method, self.method);
        set!(g.thresholds, self.thresholds);
        set!(g.k_schedule, self.k_schedule);
        set!(g.min_size, self.min_size);
        set!(g.use_owt, self.use_owt);
        set!(g.use_globalization, self.use_globalization);
        set!(g.n_eigvecs, self.n_eigvecs);
        set!(g.downsample, self.downsample);
        set!(g.sigma, self.sigma);
        set!(g.mix_weight, self.mix_weight);
        set!(g.min_area, self.min_area);
        set!(g.max_regions, self.max_regions);
        set!(cfg.aggregation, self.aggregation);
        set!(cfg.selection.k, self.k);
        set!(cfg.selection.overlap_iou, self.overlap_iou);
        set!(cfg.selection.use_oln, self.use_oln);
        set!(cfg.eval.budgets, self.budgets);
        set!(cfg.seed, self.seed);
        cfg.validate().context("invalid configuration after flag overrides")?;
        Ok(cfg)
    }
}

/// Image id encoded in a file name such as `12.afm`.
pub fn image_id_of(path: &Path) -> Result<u64> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    stem.parse().with_context(|| format!("{}: file stem is not a numeric image id", path.display()))
}

/// Expands files and directories into `image id -> .afm path`. Directories
/// contribute every `<id>.afm` inside them.
pub fn affinity_inputs(inputs: &[PathBuf]) -> Result<BTreeMap<u64, PathBuf>> {
    let mut out = BTreeMap::new();
    for input in inputs {
        let files = if input.is_dir() {
            let mut v = Vec::new();
            for entry in std::fs::read_dir(input).with_context(|| format!("{}: cannot list directory", input.display()))? {
                let p = entry.with_context(|| format!("{}: cannot list directory", input.display()))?.path();
                let numeric = p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.parse::<u64>().is_ok());
                if p.extension().is_some_and(|e| e == "afm") && numeric {
                    v.push(p);
                }
            }
            v
        } else {
            vec![input.clone()]
        };
        for f in files {
            let id = image_id_of(&f)?;
            if let Some(prev) = out.insert(id, f.clone()) {
                bail!("image {id} given twice: {} and {}", prev.display(), f.display());
            }
        }
    }
    Ok(out)
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().context("cannot start worker pool")
}
