//! Watershed superpixels, arcs between them, and oriented arc re-scoring.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use super::{forward_pairs, Arc, SuperpixelPartition};
use crate::affinity::{AffinityMap, EdgeMap, Neighbor};
use crate::error::{Error, Result};
use crate::mask::{GridDims, InstanceLabelMap};
use crate::scalar::Real;

const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

#[derive(Clone, Copy)]
struct Key {
    level: f64,
    seq: u64,
}

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
        self.level.total_cmp(&o.level).then(self.seq.cmp(&o.seq))
    }
}

/// Labels the 4-connected regional minima (plateaus with no strictly lower
/// 4-neighbour), numbered in raster order of their first pixel.
fn regional_minima(dims: GridDims, v: &[f64]) -> (Vec<u32>, u32) {
    let mut plateau = vec![u32::MAX; dims.len()];
    let mut labels = vec![0u32; dims.len()];
    let mut n = 0u32;
    let mut members = Vec::new();
    let mut stack = Vec::new();
    for start in 0..dims.len() {
        if plateau[start] != u32::MAX {
            continue;
        }
        plateau[start] = start as u32;
        members.clear();
        stack.push(start);
        let mut is_min = true;
        while let Some(i) = stack.pop() {
            members.push(i);
            let (r, c) = dims.pixel(i);
            for &(dr, dc) in &FOUR {
                let Some((nr, nc)) = dims.offset(r, c, dr, dc) else { continue };
                let j = dims.index(nr, nc);
                if v[j] < v[i] {
                    is_min = false;
                } else if v[j] == v[i] && plateau[j] == u32::MAX {
                    plateau[j] = start as u32;
                    stack.push(j);
                }
            }
        }
        if is_min {
            n += 1;
            for &i in &members {
                labels[i] = n;
            }
        }
    }
    (labels, n)
}

/// Minima-seeded flooding of the edge map over 4-neighbours, followed by arc
/// collection over all 8-adjacent pixel pairs that straddle two superpixels.
///
/// Pixels are flooded in order of `(edge value, queue order)`; a pixel takes
/// the label of the first labelled pixel that reaches it, seeds being queued
/// in raster order. Initial arc strength is the mean over its pairs of the
/// pair's mean edge value.
pub fn watershed<T: Real>(edge: &EdgeMap<T>) -> Result<(SuperpixelPartition, Vec<Arc<T>>)> {
    let dims = edge.dims();
    let v: Vec<f64> = edge.as_slice().iter().map(|x| x.as_f64()).collect();
    let (mut labels, n) = regional_minima(dims, &v);

    let mut queued: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push_neighbors = |i: usize, label: u32, heap: &mut BinaryHeap<Reverse<(Key, usize, u32)>>, queued: &mut [bool]| {
        let (r, c) = dims.pixel(i);
        for &(dr, dc) in &FOUR {
            let Some((nr, nc)) = dims.offset(r, c, dr, dc) else { continue };
            let j = dims.index(nr, nc);
            if !queued[j] {
                queued[j] = true;
                heap.push(Reverse((Key { level: v[j], seq }, j, label)));
                seq += 1;
            }
        }
    };
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            push_neighbors(i, l, &mut heap, &mut queued);
        }
    }
    while let Some(Reverse((_, i, label))) = heap.pop() {
        labels[i] = label;
        push_neighbors(i, label, &mut heap, &mut queued);
    }

    let sp = SuperpixelPartition::from_parts_unchecked(InstanceLabelMap::new(dims, labels)?, n as usize);
    let arcs = collect_arcs(&sp, edge);
    Ok((sp, arcs))
}

fn collect_arcs<T: Real>(sp: &SuperpixelPartition, edge: &EdgeMap<T>) -> Vec<Arc<T>> {
    let dims = sp.dims();
    let lab = sp.labels().labels();
    let mut by_pair: BTreeMap<(u32, u32), Vec<(u32, u32)>> = BTreeMap::new();
    for (i, j, _) in forward_pairs(dims) {
        let (a, b) = (lab[i], lab[j]);
        if a == b {
            continue;
        }
        let (key, pair) = if a < b { ((a, b), (i as u32, j as u32)) } else { ((b, a), (j as u32, i as u32)) };
        by_pair.entry(key).or_default().push(pair);
    }
    by_pair
        .into_iter()
        .map(|((a, b), pairs)| {
            let mut arc = Arc { region_a: a, region_b: b, pairs, strength: T::zero() };
            arc.strength = arc_edge_strength(&arc, edge);
            arc
        })
        .collect()
}

/// Mean over an arc's pairs of the pair's mean edge value.
pub fn arc_edge_strength<T: Real>(arc: &Arc<T>, edge: &EdgeMap<T>) -> T {
    let e = edge.as_slice();
    let sum: f64 = arc.pairs.iter().map(|&(i, j)| 0.5 * (e[i as usize].as_f64() + e[j as usize].as_f64())).sum();
    T::lit((sum / arc.pairs.len() as f64).clamp(0.0, 1.0))
}

/// Undirected neighbour axis used for oriented re-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OwtAxis {
    Horizontal,
    Vertical,
    Diagonal,
    AntiDiagonal,
}

impl OwtAxis {
    const ALL: [OwtAxis; 4] = [OwtAxis::Horizontal, OwtAxis::Vertical, OwtAxis::Diagonal, OwtAxis::AntiDiagonal];

    /// `(dr, dc)` step of the axis.
    pub fn step(self) -> (isize, isize) {
        match self {
            OwtAxis::Horizontal => (0, 1),
            OwtAxis::Vertical => (1, 0),
            OwtAxis::Diagonal => (1, 1),
            OwtAxis::AntiDiagonal => (1, -1),
        }
    }
}

/// Axis most nearly perpendicular to the principal direction of the arc's
/// pair midpoints. `None` for arcs under 3 pairs or with coincident
/// midpoints.
pub fn owt_axis<T: Real>(arc: &Arc<T>, dims: GridDims) -> Option<OwtAxis> {
    if arc.pairs.len() < 3 {
        return None;
    }
    let mids: Vec<(f64, f64)> = arc
        .pairs
        .iter()
        .map(|&(i, j)| {
            let (r1, c1) = dims.pixel(i as usize);
            let (r2, c2) = dims.pixel(j as usize);
            (0.5 * (r1 + r2) as f64, 0.5 * (c1 + c2) as f64)
        })
        .collect();
    let n = mids.len() as f64;
    let mr = mids.iter().map(|m| m.0).sum::<f64>() / n;
    let mc = mids.iter().map(|m| m.1).sum::<f64>() / n;
    let (mut srr, mut scc, mut src) = (0.0, 0.0, 0.0);
    for &(r, c) in &mids {
        srr += (r - mr) * (r - mr);
        scc += (c - mc) * (c - mc);
        src += (r - mr) * (c - mc);
    }
    if srr + scc <= 1e-12 {
        return None;
    }
    let phi = 0.5 * (2.0 * src).atan2(srr - scc);
    let normal = (-phi.sin(), phi.cos());
    let score = |a: OwtAxis| {
        let (dr, dc) = a.step();
        let len = ((dr * dr + dc * dc) as f64).sqrt();
        (normal.0 * dr as f64 + normal.1 * dc as f64).abs() / len
    };
    let mut best = OwtAxis::ALL[0];
    for a in OwtAxis::ALL.into_iter().skip(1) {
        if score(a) > score(best) + 1e-12 {
            best = a;
        }
    }
    Some(best)
}

/// Re-scores arcs from the affinity channel pair perpendicular to the arc.
///
/// Each pair contributes the mean, over its two pixels, of `1 - pair
/// affinity` between the pixel and its neighbour along the chosen axis,
/// stepping towards the other side of the arc (both ways when the pair is
/// orthogonal to the axis). Arcs under 3 pairs keep their strength.
pub fn owt_rescore<T: Real>(arcs: &[Arc<T>], aff: &AffinityMap<T>) -> Result<Vec<Arc<T>>> {
    let dims = aff.dims();
    let mut out = Vec::with_capacity(arcs.len());
    for arc in arcs {
        if let Some(&(i, j)) = arc.pairs.iter().find(|&&(i, j)| i as usize >= dims.len() || j as usize >= dims.len()) {
            return Err(Error::OutOfRange { what: "arc pixel index", value: i.max(j) as f64 });
        }
        let mut arc = arc.clone();
        if let Some(axis) = owt_axis(&arc, dims) {
            if let Some(s) = oriented_strength(&arc, aff, axis) {
                arc.strength = T::lit(s.clamp(0.0, 1.0));
            }
        }
        out.push(arc);
    }
    Ok(out)
}

fn oriented_strength<T: Real>(arc: &Arc<T>, aff: &AffinityMap<T>, axis: OwtAxis) -> Option<f64> {
    let dims = aff.dims();
    let (ar, ac) = axis.step();
    let boundary = |(r, c): (usize, usize), sign: isize| -> Option<f64> {
        let p = Neighbor::from_offset(sign * ar, sign * ac)?;
        aff.neighbor(p, r, c)?;
        Some(1.0 - aff.pair_affinity(p, r, c).as_f64())
    };
    let mut total = 0.0;
    let mut n = 0usize;
    for &(i, j) in &arc.pairs {
        let x = dims.pixel(i as usize);
        let y = dims.pixel(j as usize);
        let dot = (y.0 as isize - x.0 as isize) * ar + (y.1 as isize - x.1 as isize) * ac;
        let probes: &[(_, isize)] = match dot.signum() {
            0 => &[(x, 1), (x, -1), (y, 1), (y, -1)],
            s if s > 0 => &[(x, 1), (y, -1)],
            _ => &[(x, -1), (y, 1)],
        };
        let vals: Vec<f64> = probes.iter().filter_map(|&(px, s)| boundary(px, s)).collect();
        if !vals.is_empty() {
            total += vals.iter().sum::<f64>() / vals.len() as f64;
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(h: usize, w: usize) -> GridDims {
        GridDims::new(h, w).unwrap()
    }

    #[test]
    fn flat_map_is_one_superpixel() {
        let e = EdgeMap::<f64>::constant(dims(5, 7), 0.0).unwrap();
        let (sp, arcs) = watershed(&e).unwrap();
        assert_eq!(sp.count(), 1);
        assert!(arcs.is_empty());
    }

    #[test]
    fn strip_splits_at_ridge() {
        let e = EdgeMap::<f64>::from_vec(dims(1, 5), vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let (sp, arcs) = watershed(&e).unwrap();
        assert_eq!(sp.count(), 2);
        // the ridge pixel is reached first from the left basin
        assert_eq!(sp.labels().labels(), &[1, 1, 1, 2, 2]);
        assert_eq!(arcs.len(), 1);
        assert_eq!(arcs[0].pairs, vec![(2, 3)]);
        assert_eq!(arcs[0].strength, 0.5);
    }

    /// Steepest-descent oracle: from every pixel follow the strictly lowest
    /// 4-neighbour until a minimum; on a surface without plateaus this must
    /// agree with flooding away from the ridge.
    fn descend(e: &EdgeMap<f64>, mut p: (usize, usize)) -> (usize, usize) {
        let d = e.dims();
        loop {
            let mut best = p;
            for (dr, dc) in FOUR {
                if let Some(q) = d.offset(p.0, p.1, dr, dc) {
                    if e.get(q.0, q.1) < e.get(best.0, best.1) {
                        best = q;
                    }
                }
            }
            if best == p {
                return p;
            }
            p = best;
        }
    }

    #[test]
    fn two_basin_bowl_matches_descent_oracle() {
        let d = dims(16, 16);
        let (m1, m2) = ((5.3, 4.1), (10.2, 11.7));
        let f = |r: usize, c: usize| {
            let a = (r as f64 - m1.0).powi(2) + (c as f64 - m1.1).powi(2);
            let b = (r as f64 - m2.0).powi(2) + (c as f64 - m2.1).powi(2);
            a.min(b) / 200.0
        };
        let e = EdgeMap::from_fn(d, |r, c| f(r, c).min(1.0)).unwrap();
        let (sp, arcs) = watershed(&e).unwrap();
        assert_eq!(sp.count(), 2);
        assert!(sp.is_four_connected());
        assert_eq!(arcs.len(), 1);
        let min_a = descend(&e, (0, 0));
        for r in 0..16 {
            for c in 0..16 {
                let m = descend(&e, (r, c));
                let expected = if m == min_a { 1 } else { 2 };
                let da = ((r as f64 - m1.0).powi(2) + (c as f64 - m1.1).powi(2)).sqrt();
                let db = ((r as f64 - m2.0).powi(2) + (c as f64 - m2.1).powi(2)).sqrt();
                // pixels right on the ridge may go either way
                if (da - db).abs() > 1.5 {
                    assert_eq!(sp.labels().get(r, c), expected, "pixel ({r},{c})");
                }
            }
        }
        // arc pairs hug the bisector: |da - db| has slope at most 2 per unit
        // step, and one 8-step separates each arc pixel from the other basin
        let band = 1.5 + 2.0 * std::f64::consts::SQRT_2;
        for &(i, j) in &arcs[0].pairs {
            for p in [d.pixel(i as usize), d.pixel(j as usize)] {
                let da = ((p.0 as f64 - m1.0).powi(2) + (p.1 as f64 - m1.1).powi(2)).sqrt();
                let db = ((p.0 as f64 - m2.0).powi(2) + (p.1 as f64 - m2.1).powi(2)).sqrt();
                assert!((da - db).abs() <= band, "{p:?} {}", da - db);
            }
        }
    }

    #[test]
    fn labels_every_pixel_once_per_minimum() {
        let mut s = crate::seed::Stream::new(12);
        let d = dims(20, 17);
        let e = EdgeMap::<f64>::from_fn(d, |_, _| (s.below(5) as f64) / 4.0).unwrap();
        let (sp, arcs) = watershed(&e).unwrap();
        let v: Vec<f64> = e.as_slice().to_vec();
        let (_, n) = regional_minima(d, &v);
        assert_eq!(sp.count(), n as usize);
        assert!(sp.labels().labels().iter().all(|&l| l >= 1 && l as usize <= sp.count()));
        assert!(sp.is_four_connected());
        assert!(arcs.iter().all(|a| a.region_a < a.region_b && !a.pairs.is_empty() && a.strength.is_unit()));
    }

    fn vertical_split(d: GridDims, col: usize) -> (SuperpixelPartition, Vec<Arc<f64>>) {
        let labels = (0..d.len()).map(|i| if d.pixel(i).1 < col { 1 } else { 2 }).collect();
        let sp = SuperpixelPartition::new(InstanceLabelMap::new(d, labels).unwrap()).unwrap();
        let e = EdgeMap::<f64>::constant(d, 0.25).unwrap();
        let arcs = collect_arcs(&sp, &e);
        (sp, arcs)
    }

    #[test]
    fn vertical_arc_uses_horizontal_channels() {
        let d = dims(8, 8);
        let (_, arcs) = vertical_split(d, 4);
        assert_eq!(owt_axis(&arcs[0], d), Some(OwtAxis::Horizontal));
        let aff = AffinityMap::<f64>::from_fn(d, |p, _, _| if matches!(p.index(), 3 | 4) { 0.0 } else { 1.0 }).unwrap();
        assert_eq!(owt_rescore(&arcs, &aff).unwrap()[0].strength, 1.0);
        let ones = AffinityMap::<f64>::from_fn(d, |_, _, _| 1.0).unwrap();
        assert_eq!(owt_rescore(&arcs, &ones).unwrap()[0].strength, 0.0);
    }

    #[test]
    fn diagonal_staircase_uses_diagonal_channels() {
        let d = dims(10, 10);
        let labels = (0..d.len()).map(|i| { let (r, c) = d.pixel(i); if c > r { 1 } else { 2 } }).collect();
        let sp = SuperpixelPartition::new(InstanceLabelMap::new(d, labels).unwrap()).unwrap();
        let arcs = collect_arcs(&sp, &EdgeMap::constant(d, 0.5).unwrap());
        assert_eq!(arcs.len(), 1);

        // PCA oracle via a dense symmetric eigensolver.
        let mids: Vec<(f64, f64)> = arcs[0].pairs.iter().map(|&(i, j)| {
            let (a, b) = (d.pixel(i as usize), d.pixel(j as usize));
            ((a.0 + b.0) as f64 / 2.0, (a.1 + b.1) as f64 / 2.0)
        }).collect();
        let n = mids.len() as f64;
        let (mr, mc) = (mids.iter().map(|m| m.0).sum::<f64>() / n, mids.iter().map(|m| m.1).sum::<f64>() / n);
        let mut cov = nalgebra::Matrix2::<f64>::zeros();
        for &(r, c) in &mids {
            let v = nalgebra::Vector2::new(r - mr, c - mc);
            cov += v * v.transpose();
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let k = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
        let dir = eig.eigenvectors.column(k);
        let normal = (-dir[1], dir[0]);
        let oracle = OwtAxis::ALL
            .into_iter()
            .max_by(|a, b| {
                let s = |x: OwtAxis| {
                    let (dr, dc) = x.step();
                    (normal.0 * dr as f64 + normal.1 * dc as f64).abs() / ((dr * dr + dc * dc) as f64).sqrt()
                };
                s(*a).total_cmp(&s(*b))
            })
            .unwrap();
        assert_eq!(oracle, OwtAxis::AntiDiagonal);
        assert_eq!(owt_axis(&arcs[0], d), Some(oracle));

        let aff = AffinityMap::<f64>::from_fn(d, |p, _, _| if matches!(p.index(), 2 | 5) { 0.0 } else { 1.0 }).unwrap();
        assert_eq!(owt_rescore(&arcs, &aff).unwrap()[0].strength, 1.0);
    }

    #[test]
    fn short_arcs_keep_strength() {
        let d = dims(1, 3);
        let sp = SuperpixelPartition::new(InstanceLabelMap::new(d, vec![1, 2, 2]).unwrap()).unwrap();
        let arcs = collect_arcs(&sp, &EdgeMap::<f64>::from_vec(d, vec![0.2, 0.4, 0.0]).unwrap());
        let ones = AffinityMap::<f64>::from_fn(d, |_, _, _| 1.0).unwrap();
        let out = owt_rescore(&arcs, &ones).unwrap();
        assert!((out[0].strength - 0.3).abs() < 1e-15);
    }
}
