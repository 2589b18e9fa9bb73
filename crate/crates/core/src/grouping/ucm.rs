//! Ultrametric contour map by greedy agglomeration of superpixels.
//!
//! The dissimilarity of two adjacent regions is the pair-count weighted mean
//! of the strengths of every arc between them. Pooled sums are carried
//! exactly through merges, so each re-pooling sees all underlying pairs.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use super::{Arc, Merge, Provenance, RegionHierarchy, RegionSet, SuperpixelPartition};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Level at which regions with no connecting arc are finally joined.
const SENTINEL_LEVEL: f64 = 1.0;

#[derive(Clone, Copy)]
struct Pooled {
    weighted: f64,
    pairs: usize,
}

impl Pooled {
    fn mean(self) -> f64 {
        self.weighted / self.pairs as f64
    }
}

struct Key(f64, usize, usize);

impl PartialEq for Key {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Key {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1)).then(self.2.cmp(&o.2))
    }
}

fn check_arc<T: Real>(sp: &SuperpixelPartition, arc: &Arc<T>) -> Result<()> {
    let n = sp.count() as u32;
    let bad = |msg: String| Err(Error::param(msg));
    if arc.region_a == 0 || arc.region_a >= arc.region_b || arc.region_b > n {
        return bad(format!("arc ({}, {}) does not name two superpixels in order", arc.region_a, arc.region_b));
    }
    if arc.pairs.is_empty() {
        return bad(format!("arc ({}, {}) has no pixel pairs", arc.region_a, arc.region_b));
    }
    if !arc.strength.is_unit() {
        return Err(Error::OutOfRange { what: "arc strength", value: arc.strength.as_f64() });
    }
    let lab = sp.labels().labels();
    for &(p, q) in &arc.pairs {
        let ok = lab.get(p as usize) == Some(&arc.region_a) && lab.get(q as usize) == Some(&arc.region_b);
        if !ok {
            return bad(format!("arc ({}, {}) pair ({p}, {q}) straddles other regions", arc.region_a, arc.region_b));
        }
    }
    Ok(())
}

/// Builds the merge tree. Regions left unconnected once no arc remains are
/// chained together at level 1.0 in node order; those merges are counted in
/// `sentinel_merges`.
pub fn ucm_build<T: Real>(sp: &SuperpixelPartition, arcs: &[Arc<T>]) -> Result<RegionHierarchy<T>> {
    let n = sp.count();
    let mut adj: Vec<HashMap<usize, Pooled>> = vec![HashMap::new(); n];
    for arc in arcs {
        check_arc(sp, arc)?;
        let (a, b) = (arc.region_a as usize - 1, arc.region_b as usize - 1);
        let add = Pooled { weighted: arc.strength.as_f64() * arc.pairs.len() as f64, pairs: arc.pairs.len() };
        for (x, y) in [(a, b), (b, a)] {
            let e = adj[x].entry(y).or_insert(Pooled { weighted: 0.0, pairs: 0 });
            e.weighted += add.weighted;
            e.pairs += add.pairs;
        }
    }

    let mut heap = BinaryHeap::new();
    for (a, nb) in adj.iter().enumerate() {
        for (&b, p) in nb {
            if a < b {
                heap.push(Reverse(Key(p.mean(), a, b)));
            }
        }
    }

    let mut alive = vec![true; n];
    let mut merges: Vec<Merge<T>> = Vec::with_capacity(n.saturating_sub(1));
    let mut level = 0.0f64;
    while let Some(Reverse(Key(mean, a, b))) = heap.pop() {
        if !(alive[a] && alive[b]) {
            continue;
        }
        let node = n + merges.len();
        level = level.max(mean);
        merges.push(Merge { a, b, level: T::lit(level), node });
        alive[a] = false;
        alive[b] = false;
        alive.push(true);

        let (big, small) = if adj[a].len() >= adj[b].len() { (a, b) } else { (b, a) };
        let mut pooled = std::mem::take(&mut adj[big]);
        for (x, p) in std::mem::take(&mut adj[small]) {
            let e = pooled.entry(x).or_insert(Pooled { weighted: 0.0, pairs: 0 });
            e.weighted += p.weighted;
            e.pairs += p.pairs;
        }
        pooled.remove(&a);
        pooled.remove(&b);
        let mut neighbors: Vec<usize> = pooled.keys().copied().collect();
        neighbors.sort_unstable();
        for &x in &neighbors {
            let nx = &mut adj[x];
            nx.remove(&a);
            nx.remove(&b);
            nx.insert(node, pooled[&x]);
            heap.push(Reverse(Key(pooled[&x].mean(), x, node)));
        }
        adj.push(pooled);
    }

    let mut sentinel_merges = 0;
    let roots: Vec<usize> = (0..alive.len()).filter(|&i| alive[i]).collect();
    if let Some((&first, rest)) = roots.split_first() {
        let mut acc = first;
        for &r in rest {
            let node = n + merges.len();
            level = level.max(SENTINEL_LEVEL);
            merges.push(Merge { a: acc, b: r, level: T::lit(level), node });
            acc = node;
            sentinel_merges += 1;
        }
    }
    Ok(RegionHierarchy { leaves: sp.clone(), merges, sentinel_merges })
}

/// Every hierarchy node as a candidate mask, leaves first, dropping masks
/// under `min_area` and exact duplicates. Beyond `max_regions` the largest
/// are kept (ties to the lower node id), still in node order.
pub fn extract_regions<T: Real>(h: &RegionHierarchy<T>, min_area: usize, max_regions: usize) -> Result<RegionSet> {
    if max_regions == 0 {
        return Err(Error::param("max_regions must be positive"));
    }
    let n_leaves = h.leaves.count();
    let mut set = RegionSet::new(h.leaves.dims());
    for (i, mask) in h.node_masks().into_iter().enumerate() {
        if mask.area() >= min_area {
            let prov = if i < n_leaves { Provenance::Leaf(i) } else { Provenance::Node(i) };
            set.insert(mask, prov)?;
        }
    }
    if set.len() <= max_regions {
        return Ok(set);
    }
    let regions = set.into_vec();
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by(|&x, &y| regions[y].0.area().cmp(&regions[x].0.area()).then(x.cmp(&y)));
    let mut keep = vec![false; regions.len()];
    for &i in &order[..max_regions] {
        keep[i] = true;
    }
    let mut out = RegionSet::new(h.leaves.dims());
    for ((mask, prov), k) in regions.into_iter().zip(keep) {
        if k {
            out.insert(mask, prov)?;
        }
    }
    Ok(out)
}
