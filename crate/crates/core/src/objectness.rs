//! Region objectness from affinities, externally supplied quality scores, and
//! pseudo-ground-truth selection.

use std::collections::BTreeMap;

use crate::affinity::{AffinityMap, Neighbor};
use crate::error::{Error, Result};
use crate::grouping::Provenance;
use crate::mask::{iou_unchecked, BinaryMask, InstanceSet};
use crate::scalar::Real;

/// Terms of the affinity objectness of one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectnessBreakdown<T> {
    /// Sum of pair affinities over unordered 8-adjacent pairs inside the region.
    pub inner_sum: T,
    /// Sum over pairs with exactly one pixel inside.
    pub outer_sum: T,
    /// Region area.
    pub inner_count: usize,
    /// Region pixels with an in-image 8-neighbour outside the region.
    pub boundary_count: usize,
    pub o_pa: T,
}

impl<T: Real> ObjectnessBreakdown<T> {
    /// Assembles the breakdown from f64 sums; the outer term is 0 when the
    /// region has no boundary pixel.
    pub fn from_sums(inner: f64, outer: f64, inner_count: usize, boundary_count: usize) -> Self {
        let outer_term = if boundary_count > 0 { outer / boundary_count as f64 } else { 0.0 };
        let o_pa = inner / inner_count as f64 - outer_term;
        Self { inner_sum: T::lit(inner), outer_sum: T::lit(outer), inner_count, boundary_count, o_pa: T::lit(o_pa) }
    }
}

pub fn score_o_pa<T: Real>(region: &BinaryMask, aff: &AffinityMap<T>) -> Result<ObjectnessBreakdown<T>> {
    let dims = aff.dims();
    dims.check_same(&region.dims())?;
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let (mut inner, mut outer) = (0.0f64, 0.0f64);
    let mut boundary = 0usize;
    for i in region.indices() {
        let (r, c) = dims.pixel(i);
        let mut on_boundary = false;
        for p in Neighbor::ALL {
            let Some((nr, nc)) = aff.neighbor(p, r, c) else { continue };
            let j = dims.index(nr, nc);
            let a = aff.pair_affinity(p, r, c).as_f64();
            if region.contains_index(j) {
                if j > i {
                    inner += a;
                }
            } else {
                outer += a;
                on_boundary = true;
            }
        }
        boundary += on_boundary as usize;
    }
    Ok(ObjectnessBreakdown::from_sums(inner, outer, region.area(), boundary))
}

/// Geometric mean of centerness and IoU-ness.
pub fn score_o_oln<T: Real>(centerness: T, iouness: T) -> Result<T> {
    for (what, v) in [("centerness", centerness), ("iouness", iouness)] {
        if !v.is_unit() {
            return Err(Error::OutOfRange { what, value: v.as_f64() });
        }
    }
    Ok((centerness * iouness).sqrt())
}

pub fn combine_scores<T: Real>(o_pa: T, o_oln: Option<T>) -> T {
    match o_oln {
        Some(o) => (o_pa + o) / T::lit(2.0),
        None => o_pa,
    }
}

/// Centerness and IoU-ness per region id, both in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalRegionScores {
    scores: BTreeMap<u64, (f64, f64)>,
}

impl ExternalRegionScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, region_id: u64, centerness: f64, iouness: f64) -> Result<()> {
        score_o_oln(centerness, iouness)?;
        if self.scores.contains_key(&region_id) {
            return Err(Error::DuplicateId(region_id));
        }
        self.scores.insert(region_id, (centerness, iouness));
        Ok(())
    }

    pub fn get(&self, region_id: u64) -> Option<(f64, f64)> {
        self.scores.get(&region_id).copied()
    }

    pub fn o_oln<T: Real>(&self, region_id: u64) -> Option<T> {
        self.get(region_id).map(|(c, i)| T::lit((c * i).sqrt()))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64, f64)> + '_ {
        self.scores.iter().map(|(&id, &(c, i))| (id, c, i))
    }
}

/// A candidate mask with its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRegion<T> {
    pub id: u64,
    pub mask: BinaryMask,
    pub provenance: Provenance,
    pub o_pa: T,
    pub o_oln: Option<T>,
    pub combined: T,
}

impl<T: Real> ScoredRegion<T> {
    pub fn new(id: u64, mask: BinaryMask, provenance: Provenance, o_pa: T, o_oln: Option<T>) -> Self {
        let combined = combine_scores(o_pa, o_oln);
        Self { id, mask, provenance, o_pa, o_oln, combined }
    }

    /// Scores `mask` against `aff`, attaching external scores when present.
    pub fn score(
        id: u64,
        mask: BinaryMask,
        provenance: Provenance,
        aff: &AffinityMap<T>,
        external: Option<&ExternalRegionScores>,
    ) -> Result<Self> {
        let o_pa = score_o_pa(&mask, aff)?.o_pa;
        let o_oln = external.and_then(|e| e.o_oln(id));
        Ok(Self::new(id, mask, provenance, o_pa, o_oln))
    }
}

/// Drops regions whose best IoU with any GT mask exceeds `overlap_iou`, then
/// returns the top `k` by combined score (ties: larger area, then lower id).
pub fn rank_and_select<T: Real>(
    regions: Vec<ScoredRegion<T>>,
    k: usize,
    gt: &InstanceSet,
    overlap_iou: f64,
) -> Result<Vec<ScoredRegion<T>>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if !(0.0..=1.0).contains(&overlap_iou) {
        return Err(Error::OutOfRange { what: "overlap_iou", value: overlap_iou });
    }
    for r in &regions {
        gt.dims().check_same(&r.mask.dims())?;
    }
    let mut kept: Vec<ScoredRegion<T>> = regions
        .into_iter()
        .filter(|r| gt.masks().iter().all(|g| iou_unchecked(&r.mask, g) <= overlap_iou))
        .collect();
    kept.sort_by(|a, b| {
        b.combined
            .as_f64()
            .total_cmp(&a.combined.as_f64())
            .then(b.mask.area().cmp(&a.mask.area()))
            .then(a.id.cmp(&b.id))
    });
    kept.truncate(k);
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::GridDims;

    fn dims(h: usize, w: usize) -> GridDims {
        GridDims::new(h, w).unwrap()
    }

    #[test]
    fn closed_forms() {
        let d = dims(2, 2);
        let ones = AffinityMap::<f64>::from_fn(d, |_, _, _| 1.0).unwrap();
        let b = score_o_pa(&BinaryMask::full(d), &ones).unwrap();
        assert_eq!((b.inner_sum, b.outer_sum, b.inner_count, b.boundary_count), (6.0, 0.0, 4, 0));
        assert_eq!(b.o_pa, 1.5);

        let d = dims(3, 3);
        let ones = AffinityMap::<f64>::from_fn(d, |_, _, _| 1.0).unwrap();
        let b = score_o_pa(&BinaryMask::from_pixels(d, [(1, 1)]).unwrap(), &ones).unwrap();
        assert_eq!((b.inner_sum, b.outer_sum, b.boundary_count), (0.0, 8.0, 1));
        assert_eq!(b.o_pa, -8.0);
        assert!(matches!(score_o_pa(&BinaryMask::empty(d), &ones), Err(Error::EmptyRegion)));
    }

    #[test]
    fn oln_and_combination() {
        assert_eq!(score_o_oln(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(score_o_oln(0.0, 0.37).unwrap(), 0.0);
        assert!((score_o_oln(0.81f64, 0.49).unwrap() - 0.63).abs() < 1e-12);
        assert_eq!(score_o_oln(0.3f64, 0.7).unwrap(), score_o_oln(0.7, 0.3).unwrap());
        assert!(score_o_oln(1.1, 0.5).is_err());
        assert!(score_o_oln(0.5, -0.1).is_err());
        assert_eq!(combine_scores(0.4, None), 0.4);
        assert_eq!(combine_scores(0.4, Some(0.6)), 0.5);
        assert_eq!(combine_scores(0.3f32, Some(0.3)), 0.3);
    }

    #[test]
    fn selection_filters_and_orders() {
        let d = dims(1, 10);
        let px = |cols: std::ops::Range<usize>| BinaryMask::from_fn(d, |_, c| cols.contains(&c));
        let gt = InstanceSet::from_parts(d, [(1, px(0..5))]).unwrap();
        // IoU 3/5 = 0.6 with the GT
        let over = ScoredRegion::new(1, px(0..3), Provenance::Leaf(0), 9.0, None);
        // IoU 2/5 = 0.4
        let under = ScoredRegion::new(2, px(0..2), Provenance::Leaf(1), 1.0, None);
        let a = ScoredRegion::new(3, px(6..8), Provenance::Leaf(2), 2.0, None);
        let b = ScoredRegion::new(4, px(5..8), Provenance::Leaf(3), 2.0, None);
        let c = ScoredRegion::new(5, px(8..10), Provenance::Leaf(4), 2.0, None);
        let out = rank_and_select(vec![over, under, a, b, c], 3, &gt, 0.5).unwrap();
        let ids: Vec<u64> = out.iter().map(|r| r.id).collect();
        // equal scores: larger area first, then lower id
        assert_eq!(ids, vec![4, 3, 5]);
        let out = rank_and_select(out, 10, &InstanceSet::new(d), 0.5).unwrap();
        assert_eq!(out.len(), 3);
        assert!(rank_and_select(Vec::<ScoredRegion<f64>>::new(), 0, &gt, 0.5).is_err());
    }

    #[test]
    fn external_scores() {
        let mut e = ExternalRegionScores::new();
        e.insert(7, 0.81, 0.49).unwrap();
        assert!(e.insert(7, 0.1, 0.1).is_err());
        assert!(e.insert(8, 1.5, 0.1).is_err());
        let d = dims(3, 3);
        let ones = AffinityMap::<f64>::from_fn(d, |_, _, _| 1.0).unwrap();
        let r = ScoredRegion::score(7, BinaryMask::full(d), Provenance::Leaf(0), &ones, Some(&e)).unwrap();
        assert!((r.o_oln.unwrap() - 0.63).abs() < 1e-12);
        assert_eq!(r.combined, (r.o_pa + r.o_oln.unwrap()) / 2.0);
    }
}
