#![allow(dead_code)]

use pagroup::mask::{labelmap_to_instances, InstanceLabelMap};
use pagroup::{AffinityMap, BinaryMask, GridDims, InstanceSet};
use proptest::prelude::*;

pub fn dims(h: usize, w: usize) -> GridDims {
    GridDims::new(h, w).unwrap()
}

pub fn arb_dims(max: usize) -> impl Strategy<Value = GridDims> {
    (1..=max, 1..=max).prop_map(|(h, w)| dims(h, w))
}

pub fn arb_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
    arb_dims(max).prop_flat_map(|d| {
        prop::collection::vec(any::<bool>(), d.len()).prop_map(move |bits| BinaryMask::from_bools(d, &bits).unwrap())
    })
}

pub fn arb_nonempty_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
    arb_mask(max).prop_filter("nonempty", |m| !m.is_empty())
}

/// Label map with labels in `0..=n_labels`.
pub fn arb_labelmap(max: usize, n_labels: u32) -> impl Strategy<Value = InstanceLabelMap> {
    arb_dims(max).prop_flat_map(move |d| {
        prop::collection::vec(0..=n_labels, d.len()).prop_map(move |l| InstanceLabelMap::new(d, l).unwrap())
    })
}

pub fn arb_instances(max: usize, n_labels: u32) -> impl Strategy<Value = InstanceSet> {
    arb_labelmap(max, n_labels).prop_map(|lm| labelmap_to_instances(&lm))
}

/// Affinities drawn from a few levels so ties and plateaus occur.
pub fn arb_affinity_on(d: GridDims) -> impl Strategy<Value = AffinityMap<f64>> {
    prop::collection::vec(0u8..=4, 8 * d.len())
        .prop_map(move |v| AffinityMap::from_vec(d, v.into_iter().map(|x| x as f64 / 4.0).collect()).unwrap())
}

pub fn arb_affinity(max: usize) -> impl Strategy<Value = AffinityMap<f64>> {
    arb_dims(max).prop_flat_map(arb_affinity_on)
}

pub fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Whether the labels of `fine` refine those of `coarse`.
pub fn refines(fine: &InstanceLabelMap, coarse: &InstanceLabelMap) -> bool {
    let mut map = std::collections::HashMap::new();
    fine.labels().iter().zip(coarse.labels()).all(|(&f, &c)| *map.entry(f).or_insert(c) == c)
}
