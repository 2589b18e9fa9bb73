//! Per-image stage drivers shared by the CLI and the integration tests.

use crate::affinity::{aggregate, AffinityMap, AggregationMode, EdgeMap};
use crate::config::{GroupingConfig, GroupingMethod, SelectionConfig};
use crate::error::Result;
use crate::grouping::{
    arc_edge_strength, cc_group, extract_regions, gbh_group, mix_edges, owt_rescore, spectral_globalize, ucm_build,
    watershed, Provenance, RegionHierarchy, RegionSet,
};
use crate::mask::{BinaryMask, InstanceSet};
use crate::objectness::{rank_and_select, ExternalRegionScores, ScoredRegion};
use crate::scalar::Real;

/// Regions of one image plus hierarchy diagnostics.
#[derive(Debug, Clone)]
pub struct Grouped {
    pub regions: RegionSet,
    /// Forced merges between disconnected components (hierarchical methods).
    pub sentinel_merges: usize,
}

/// Watershed + optional OWT and globalisation, assembled into a UCM.
///
/// With globalisation the watershed floods the mixed edge map. When OWT is
/// also on, each re-scored arc strength is blended with the mean globalised
/// edge along the arc using the same weight.
pub fn ucm_hierarchy<T: Real>(
    aff: &AffinityMap<T>,
    mode: AggregationMode,
    cfg: &GroupingConfig,
) -> Result<RegionHierarchy<T>> {
    let local = aggregate(aff, mode);
    let global = if cfg.use_globalization {
        Some(spectral_globalize(&local, cfg.n_eigvecs, cfg.downsample, cfg.sigma)?)
    } else {
        None
    };
    let flood: EdgeMap<T> = match &global {
        Some(g) => mix_edges(&local, g, cfg.mix_weight)?,
        None => local,
    };
    let (sp, mut arcs) = watershed(&flood)?;
    if cfg.use_owt {
        arcs = owt_rescore(&arcs, aff)?;
        if let Some(g) = &global {
            let w = T::lit(cfg.mix_weight);
            for arc in &mut arcs {
                let s = (T::one() - w) * arc.strength + w * arc_edge_strength(arc, g);
                arc.strength = s.max(T::zero()).min(T::one());
            }
        }
    }
    ucm_build(&sp, &arcs)
}

/// Runs the configured grouping method on one affinity map.
pub fn group<T: Real>(aff: &AffinityMap<T>, mode: AggregationMode, cfg: &GroupingConfig) -> Result<Grouped> {
    match cfg.method {
        GroupingMethod::Cc => {
            let ts: Vec<T> = cfg.thresholds.iter().map(|&t| T::lit(t)).collect();
            Ok(Grouped { regions: cc_group(aff, &ts)?.retain_min_area(cfg.min_area), sentinel_merges: 0 })
        }
        GroupingMethod::Gbh => {
            let ks: Vec<T> = cfg.k_schedule.iter().map(|&k| T::lit(k)).collect();
            let h = gbh_group(aff, &ks, cfg.min_size)?;
            Ok(Grouped { regions: extract_regions(&h, cfg.min_area, cfg.max_regions)?, sentinel_merges: h.sentinel_merges })
        }
        GroupingMethod::Ucm => {
            let h = ucm_hierarchy(aff, mode, cfg)?;
            Ok(Grouped { regions: extract_regions(&h, cfg.min_area, cfg.max_regions)?, sentinel_merges: h.sentinel_merges })
        }
    }
}

/// Scores candidates and keeps the top `k` that stay under the GT overlap
/// cap. External scores are used only when `cfg.use_oln` is set.
pub fn select<T: Real>(
    candidates: impl IntoIterator<Item = (u64, BinaryMask, Provenance)>,
    aff: &AffinityMap<T>,
    gt: &InstanceSet,
    external: Option<&ExternalRegionScores>,
    cfg: &SelectionConfig,
) -> Result<Vec<ScoredRegion<T>>> {
    let ext = if cfg.use_oln { external } else { None };
    let scored = candidates
        .into_iter()
        .map(|(id, mask, prov)| ScoredRegion::score(id, mask, prov, aff, ext))
        .collect::<Result<Vec<_>>>()?;
    rank_and_select(scored, cfg.k, gt, cfg.overlap_iou)
}
