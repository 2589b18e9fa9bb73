//! Graph-based hierarchical grouping.
//!
//! The Felzenszwalb-Huttenlocher predicate is run over the 8-connected pixel
//! graph (weight `1 - pair affinity`) once per scale `k` of an increasing
//! schedule. Each level starts from the components of the previous one and
//! keeps their internal differences, so levels are nested. Components of the
//! first level are the hierarchy leaves; merges at later levels are recorded
//! with `level = k`. Components still apart after the last level are joined
//! at an infinite sentinel level.

use super::{forward_pairs, Merge, RegionHierarchy, SuperpixelPartition};
use crate::affinity::AffinityMap;
use crate::error::{Error, Result};
use crate::mask::InstanceLabelMap;
use crate::scalar::Real;
use crate::unionfind::UnionFind;

struct Edge {
    w: f64,
    a: usize,
    b: usize,
}

struct Level<'a> {
    edges: &'a [Edge],
    uf: UnionFind,
    int_diff: Vec<f64>,
}

impl Level<'_> {
    /// One FH pass at scale `k` followed by small-component absorption.
    /// Calls `on_merge(root_a, root_b, new_root)` for each union.
    fn run(&mut self, k: f64, min_size: usize, mut on_merge: impl FnMut(usize, usize, usize)) {
        for e in self.edges {
            let (ra, rb) = (self.uf.find(e.a), self.uf.find(e.b));
            if ra == rb {
                continue;
            }
            let ta = self.int_diff[ra] + k / self.uf.size_of_root(ra) as f64;
            let tb = self.int_diff[rb] + k / self.uf.size_of_root(rb) as f64;
            if e.w <= ta.min(tb) {
                self.join(ra, rb, e.w, &mut on_merge);
            }
        }
        if min_size > 1 {
            for e in self.edges {
                let (ra, rb) = (self.uf.find(e.a), self.uf.find(e.b));
                if ra != rb && (self.uf.size_of_root(ra) < min_size || self.uf.size_of_root(rb) < min_size) {
                    self.join(ra, rb, e.w, &mut on_merge);
                }
            }
        }
    }

    fn join(&mut self, ra: usize, rb: usize, w: f64, on_merge: &mut impl FnMut(usize, usize, usize)) {
        let int = self.int_diff[ra].max(self.int_diff[rb]).max(w);
        let root = self.uf.union(ra, rb).expect("distinct roots");
        self.int_diff[root] = int;
        on_merge(ra, rb, root);
    }
}

pub fn gbh_group<T: Real>(aff: &AffinityMap<T>, k_schedule: &[T], min_size: usize) -> Result<RegionHierarchy<T>> {
    if k_schedule.is_empty() {
        return Err(Error::param("empty k schedule"));
    }
    if k_schedule.iter().any(|k| !(k.is_finite() && *k > T::zero())) {
        return Err(Error::param("k values must be positive and finite"));
    }
    if k_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("k schedule must be strictly increasing"));
    }
    if min_size == 0 {
        return Err(Error::param("min_size must be positive"));
    }
    let dims = aff.dims();
    let mut edges: Vec<Edge> = forward_pairs(dims)
        .map(|(a, b, p)| {
            let (r, c) = dims.pixel(a);
            Edge { w: 1.0 - aff.pair_affinity(p, r, c).as_f64(), a, b }
        })
        .collect();
    edges.sort_by(|x, y| x.w.total_cmp(&y.w));

    let mut level = Level { edges: &edges, uf: UnionFind::new(dims.len()), int_diff: vec![0.0; dims.len()] };
    level.run(k_schedule[0].as_f64(), min_size, |_, _, _| {});

    // Leaves: first-level components labelled in raster order.
    let mut node_of_root = vec![usize::MAX; dims.len()];
    let mut labels = Vec::with_capacity(dims.len());
    let mut n_leaves = 0usize;
    for i in 0..dims.len() {
        let root = level.uf.find(i);
        if node_of_root[root] == usize::MAX {
            node_of_root[root] = n_leaves;
            n_leaves += 1;
        }
        labels.push(node_of_root[root] as u32 + 1);
    }
    let leaves = SuperpixelPartition::from_parts_unchecked(InstanceLabelMap::new(dims, labels)?, n_leaves);

    let mut merges = Vec::new();
    for &k in &k_schedule[1..] {
        level.run(k.as_f64(), min_size, |ra, rb, root| {
            let node = n_leaves + merges.len();
            merges.push(Merge { a: node_of_root[ra], b: node_of_root[rb], level: k, node });
            node_of_root[root] = node;
        });
    }

    let mut seen = vec![false; dims.len()];
    let mut roots = Vec::new();
    for i in 0..dims.len() {
        let r = level.uf.find(i);
        if !std::mem::replace(&mut seen[r], true) {
            roots.push(r);
        }
    }
    let mut sentinel_merges = 0;
    if let Some((&first, rest)) = roots.split_first() {
        let mut acc = node_of_root[first];
        for &r in rest {
            let node = n_leaves + merges.len();
            merges.push(Merge { a: acc, b: node_of_root[r], level: T::infinity(), node });
            acc = node;
            sentinel_merges += 1;
        }
    }
    Ok(RegionHierarchy { leaves, merges, sentinel_merges })
}
