use super::{forward_pairs, labels_to_masks, Provenance, RegionSet};
use crate::affinity::AffinityMap;
use crate::error::{Error, Result};
use crate::mask::InstanceLabelMap;
use crate::scalar::Real;
use crate::unionfind::UnionFind;

/// Connected components of the 8-connected grid keeping edges whose pair
/// affinity is at least `t`. Labels start at 1 in raster order of each
/// component's first pixel.
pub fn cc_labels<T: Real>(aff: &AffinityMap<T>, t: T) -> InstanceLabelMap {
    let dims = aff.dims();
    let mut uf = UnionFind::new(dims.len());
    for (i, j, p) in forward_pairs(dims) {
        let (r, c) = dims.pixel(i);
        if aff.pair_affinity(p, r, c) >= t {
            uf.union(i, j);
        }
    }
    let mut label_of_root = vec![0u32; dims.len()];
    let mut next = 0u32;
    let labels = (0..dims.len())
        .map(|i| {
            let root = uf.find(i);
            if label_of_root[root] == 0 {
                next += 1;
                label_of_root[root] = next;
            }
            label_of_root[root]
        })
        .collect();
    InstanceLabelMap::new(dims, labels).expect("one label per pixel")
}

/// Every component (singletons included) at every threshold, deduplicated
/// across thresholds.
pub fn cc_group<T: Real>(aff: &AffinityMap<T>, thresholds: &[T]) -> Result<RegionSet> {
    if thresholds.is_empty() {
        return Err(Error::param("connected components need at least one threshold"));
    }
    if let Some(t) = thresholds.iter().find(|&&t| !(t > T::zero() && t < T::one())) {
        return Err(Error::OutOfRange { what: "cc threshold", value: t.as_f64() });
    }
    let mut set = RegionSet::new(aff.dims());
    for &t in thresholds {
        let labels = cc_labels(aff, t);
        let count = labels.labels().iter().copied().max().unwrap_or(0) as usize;
        for mask in labels_to_masks(&labels, count) {
            set.insert(mask, Provenance::CcThreshold(t.as_f64()))?;
        }
    }
    Ok(set)
}
