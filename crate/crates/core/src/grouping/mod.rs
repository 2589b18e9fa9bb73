//! Grouping affinity and edge maps into candidate regions.
//!
//! Four mechanisms share the types in this module:
//! thresholded connected components ([`cc_group`]), graph-based hierarchical
//! grouping ([`gbh_group`]), and the watershed route ([`watershed`] with
//! optional [`owt_rescore`] and [`spectral_globalize`]) feeding an
//! ultrametric contour map ([`ucm_build`]). Hierarchies are flattened into
//! candidate masks by [`extract_regions`].
//!
//! Directed affinities are reduced to undirected pair affinities by averaging
//! the two directed entries ([`symmetric_pair_affinity`]).

mod cc;
mod gbh;
mod spectral;
mod ucm;
mod watershed;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

pub use cc::{cc_group, cc_labels};
pub use gbh::gbh_group;
pub use spectral::{
    spectral_eigenpairs, spectral_globalize, spectral_globalize_with, Eigenpairs, SpectralParams,
};
pub use ucm::{extract_regions, ucm_build};
pub use watershed::{arc_edge_strength, owt_axis, owt_rescore, watershed, OwtAxis};

use crate::affinity::{AffinityMap, EdgeMap, Neighbor};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, GridDims, InstanceLabelMap, Pixel};
use crate::scalar::Real;

/// Mean of the two directed affinities between 8-adjacent in-image pixels.
pub fn symmetric_pair_affinity<T: Real>(aff: &AffinityMap<T>, q: Pixel, r: Pixel) -> Result<T> {
    let dims = aff.dims();
    let in_image = |p: Pixel| p.0 < dims.height() && p.1 < dims.width();
    let dr = r.0 as isize - q.0 as isize;
    let dc = r.1 as isize - q.1 as isize;
    match Neighbor::from_offset(dr, dc) {
        Some(p) if in_image(q) && in_image(r) => Ok(aff.pair_affinity(p, q.0, q.1)),
        _ => Err(Error::NotAdjacent { a: q, b: r }),
    }
}

/// Pixel-wise arithmetic mean of a local and a globalised edge map.
pub fn combine_edges<T: Real>(local: &EdgeMap<T>, globalized: &EdgeMap<T>) -> Result<EdgeMap<T>> {
    mix_edges(local, globalized, 0.5)
}

/// `(1 - w) * local + w * globalized`; `w = 0.5` is [`combine_edges`].
pub fn mix_edges<T: Real>(local: &EdgeMap<T>, globalized: &EdgeMap<T>, w: f64) -> Result<EdgeMap<T>> {
    local.dims().check_same(&globalized.dims())?;
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::OutOfRange { what: "mix weight", value: w });
    }
    let (a, b) = (T::lit(1.0 - w), T::lit(w));
    let data = local
        .as_slice()
        .iter()
        .zip(globalized.as_slice())
        .map(|(&x, &y)| (a * x + b * y).max(T::zero()).min(T::one()))
        .collect();
    EdgeMap::from_vec(local.dims(), data)
}

/// Partition of every pixel into superpixels labelled `1..=count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelPartition {
    labels: InstanceLabelMap,
    count: usize,
}

impl SuperpixelPartition {
    /// Labels must cover every pixel with ids `1..=count`, each id used.
    pub fn new(labels: InstanceLabelMap) -> Result<Self> {
        let max = labels.labels().iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; max + 1];
        for &l in labels.labels() {
            if l == 0 {
                return Err(Error::param("superpixel partition leaves a pixel unlabelled"));
            }
            seen[l as usize] = true;
        }
        if seen.iter().skip(1).any(|s| !s) {
            return Err(Error::param("superpixel ids are not contiguous"));
        }
        Ok(Self { labels, count: max })
    }

    pub(crate) fn from_parts_unchecked(labels: InstanceLabelMap, count: usize) -> Self {
        Self { labels, count }
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.labels.dims()
    }

    pub fn labels(&self) -> &InstanceLabelMap {
        &self.labels
    }

    /// Number of superpixels.
    #[inline]
    pub fn count(&self) -> usize {
        self.count
    }

    /// One mask per superpixel, in id order.
    pub fn masks(&self) -> Vec<BinaryMask> {
        labels_to_masks(&self.labels, self.count)
    }

    /// `true` when every superpixel is 4-connected.
    pub fn is_four_connected(&self) -> bool {
        let dims = self.dims();
        let lab = self.labels.labels();
        let mut seen = vec![false; dims.len()];
        let mut components = vec![0usize; self.count + 1];
        let mut stack = Vec::new();
        for start in 0..dims.len() {
            if seen[start] {
                continue;
            }
            let l = lab[start];
            components[l as usize] += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (r, c) = dims.pixel(i);
                for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    if let Some((nr, nc)) = dims.offset(r, c, dr, dc) {
                        let j = dims.index(nr, nc);
                        if !seen[j] && lab[j] == l {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        components.iter().skip(1).all(|&n| n == 1)
    }
}

pub(crate) fn labels_to_masks(labels: &InstanceLabelMap, count: usize) -> Vec<BinaryMask> {
    let mut idx: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l != 0 {
            idx[l as usize - 1].push(i);
        }
    }
    idx.into_iter()
        .map(|v| BinaryMask::from_indices(labels.dims(), v).expect("indices in range"))
        .collect()
}

/// Boundary between two adjacent superpixels: every 8-adjacent pixel pair
/// straddling them, with a strength in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc<T> {
    /// Smaller superpixel id.
    pub region_a: u32,
    /// Larger superpixel id.
    pub region_b: u32,
    /// `(pixel in region_a, pixel in region_b)` as row-major indices.
    pub pairs: Vec<(u32, u32)>,
    pub strength: T,
}

/// One binary merge of a region hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge<T> {
    pub a: usize,
    pub b: usize,
    pub level: T,
    pub node: usize,
}

/// Merge tree over superpixel leaves.
///
/// Leaf node `i` is superpixel `i + 1`; internal nodes are numbered from
/// `leaves.count()` upwards in merge order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionHierarchy<T> {
    pub leaves: SuperpixelPartition,
    pub merges: Vec<Merge<T>>,
    /// Merges forced to join components that share no arc or edge.
    pub sentinel_merges: usize,
}

impl<T: Real> RegionHierarchy<T> {
    pub fn n_nodes(&self) -> usize {
        self.leaves.count() + self.merges.len()
    }

    /// Mask of every node, leaves first.
    pub fn node_masks(&self) -> Vec<BinaryMask> {
        let mut masks = self.leaves.masks();
        for m in &self.merges {
            let u = masks[m.a].union(&masks[m.b]).expect("same grid");
            masks.push(u);
        }
        masks
    }

    /// Partition obtained by applying every merge with `level <= t`; labels
    /// are leaf-root ids plus one.
    pub fn partition_at(&self, t: T) -> InstanceLabelMap {
        let n = self.n_nodes();
        let mut parent: Vec<usize> = (0..n).collect();
        for m in &self.merges {
            if m.level <= t {
                parent[m.a] = m.node;
                parent[m.b] = m.node;
            }
        }
        let root = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        let labels = self.leaves.labels().labels().iter().map(|&l| root(l as usize - 1) as u32 + 1).collect();
        InstanceLabelMap::new(self.leaves.dims(), labels).expect("same grid")
    }
}

/// Where a candidate region came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    CcThreshold(f64),
    Leaf(usize),
    Node(usize),
    Other(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::CcThreshold(t) => write!(f, "cc:{t}"),
            Provenance::Leaf(n) => write!(f, "leaf:{n}"),
            Provenance::Node(n) => write!(f, "node:{n}"),
            Provenance::Other(s) => f.write_str(s),
        }
    }
}

impl FromStr for Provenance {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parsed = match s.split_once(':') {
            Some(("cc", t)) => t.parse().ok().map(Provenance::CcThreshold),
            Some(("leaf", n)) => n.parse().ok().map(Provenance::Leaf),
            Some(("node", n)) => n.parse().ok().map(Provenance::Node),
            _ => None,
        };
        Ok(parsed.unwrap_or_else(|| Provenance::Other(s.to_string())))
    }
}

/// Candidate masks with provenance; nonempty and pairwise distinct.
#[derive(Debug, Clone)]
pub struct RegionSet {
    dims: GridDims,
    regions: Vec<(BinaryMask, Provenance)>,
    by_hash: HashMap<u64, Vec<usize>>,
}

impl RegionSet {
    pub fn new(dims: GridDims) -> Self {
        Self { dims, regions: Vec::new(), by_hash: HashMap::new() }
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Adds a mask unless it is empty or an exact duplicate. Returns whether
    /// it was added.
    pub fn insert(&mut self, mask: BinaryMask, provenance: Provenance) -> Result<bool> {
        self.dims.check_same(&mask.dims())?;
        if mask.is_empty() {
            return Ok(false);
        }
        let mut h = DefaultHasher::new();
        mask.hash(&mut h);
        let bucket = self.by_hash.entry(h.finish()).or_default();
        if bucket.iter().any(|&i| self.regions[i].0 == mask) {
            return Ok(false);
        }
        bucket.push(self.regions.len());
        self.regions.push((mask, provenance));
        Ok(true)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BinaryMask, &Provenance)> {
        self.regions.iter().map(|(m, p)| (m, p))
    }

    pub fn masks(&self) -> impl Iterator<Item = &BinaryMask> {
        self.regions.iter().map(|(m, _)| m)
    }

    pub fn into_vec(self) -> Vec<(BinaryMask, Provenance)> {
        self.regions
    }

    /// Keeps regions of at least `min_area` pixels.
    pub fn retain_min_area(self, min_area: usize) -> RegionSet {
        let mut out = RegionSet::new(self.dims);
        for (m, p) in self.regions {
            if m.area() >= min_area {
                out.insert(m, p).expect("same grid");
            }
        }
        out
    }
}

/// Unordered 8-adjacent pixel pairs `(i, j, direction)` with `i < j`, in
/// raster order of `i`.
pub(crate) fn forward_pairs(dims: GridDims) -> impl Iterator<Item = (usize, usize, Neighbor)> {
    (0..dims.len()).flat_map(move |i| {
        let (r, c) = dims.pixel(i);
        Neighbor::FORWARD.into_iter().filter_map(move |p| {
            let (dr, dc) = p.offset();
            dims.offset(r, c, dr, dc).map(|(nr, nc)| (i, dims.index(nr, nc), p))
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(h: usize, w: usize) -> GridDims {
        GridDims::new(h, w).unwrap()
    }

    #[test]
    fn pair_affinity_examples() {
        let d = dims(2, 2);
        let ones = AffinityMap::<f64>::from_fn(d, |_, _, _| 1.0).unwrap();
        assert_eq!(symmetric_pair_affinity(&ones, (0, 0), (1, 1)).unwrap(), 1.0);
        let half = AffinityMap::<f64>::from_fn(d, |p, _, _| if p.index() == 4 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(symmetric_pair_affinity(&half, (0, 0), (0, 1)).unwrap(), 0.5);
        assert_eq!(symmetric_pair_affinity(&half, (0, 1), (0, 0)).unwrap(), 0.5);
        assert!(symmetric_pair_affinity(&ones, (0, 0), (0, 0)).is_err());
        assert!(symmetric_pair_affinity(&ones, (1, 1), (1, 2)).is_err());

        let lm = InstanceLabelMap::new(dims(2, 3), vec![1, 1, 0, 1, 2, 2]).unwrap();
        let pa: AffinityMap<f64> = crate::affinity::encode_pa(&lm).unwrap();
        for (i, j, p) in forward_pairs(lm.dims()) {
            let (q, r) = (lm.dims().pixel(i), lm.dims().pixel(j));
            assert_eq!(symmetric_pair_affinity(&pa, q, r).unwrap(), pa.get(p, q.0, q.1));
        }
    }

    #[test]
    fn combine_examples() {
        let d = dims(3, 2);
        let a = EdgeMap::<f64>::constant(d, 0.0).unwrap();
        let b = EdgeMap::<f64>::constant(d, 1.0).unwrap();
        assert!(combine_edges(&a, &b).unwrap().as_slice().iter().all(|&v| v == 0.5));
        assert_eq!(combine_edges(&a, &b).unwrap(), combine_edges(&b, &a).unwrap());
        let c = EdgeMap::<f64>::from_fn(d, |r, c| (r * 2 + c) as f64 / 6.0).unwrap();
        assert_eq!(combine_edges(&c, &c).unwrap(), c);
        assert!(combine_edges(&c, &EdgeMap::constant(dims(2, 2), 0.0).unwrap()).is_err());
    }

    #[test]
    fn provenance_round_trip() {
        for p in [Provenance::CcThreshold(0.5), Provenance::Leaf(3), Provenance::Node(12), Provenance::Other("x".into())] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
    }

    #[test]
    fn region_set_dedups() {
        let d = dims(2, 2);
        let mut s = RegionSet::new(d);
        assert!(s.insert(BinaryMask::full(d), Provenance::Leaf(1)).unwrap());
        assert!(!s.insert(BinaryMask::full(d), Provenance::Leaf(2)).unwrap());
        assert!(!s.insert(BinaryMask::empty(d), Provenance::Leaf(3)).unwrap());
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn partition_validation() {
        let d = dims(1, 3);
        assert!(SuperpixelPartition::new(InstanceLabelMap::new(d, vec![1, 0, 2]).unwrap()).is_err());
        assert!(SuperpixelPartition::new(InstanceLabelMap::new(d, vec![1, 3, 3]).unwrap()).is_err());
        let sp = SuperpixelPartition::new(InstanceLabelMap::new(d, vec![1, 2, 1]).unwrap()).unwrap();
        assert_eq!(sp.count(), 2);
        assert!(!sp.is_four_connected());
    }
}
