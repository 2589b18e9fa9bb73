//! Pairwise affinity encoding of instance masks.
//!
//! Each pixel carries 8 affinities, one per neighbour of its 3x3 window in
//! row-major order. Entries whose neighbour lies outside the image are stored
//! as 0 and are excluded from aggregation, the loss and symmetry checks.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{instances_to_labelmap, GridDims, InstanceLabelMap, InstanceSet, OverlapPolicy, Pixel, OFFSETS8};
use crate::scalar::Real;
use crate::seed::Stream;

/// Default probability clamp of [`masked_weighted_bce`].
pub const DEFAULT_BCE_EPS: f64 = 1e-7;

/// Index of one of the 8 neighbours, row-major over the 3x3 window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Neighbor(u8);

impl Neighbor {
    pub const ALL: [Neighbor; 8] =
        [Neighbor(0), Neighbor(1), Neighbor(2), Neighbor(3), Neighbor(4), Neighbor(5), Neighbor(6), Neighbor(7)];

    /// The four neighbours after the centre in raster order; every unordered
    /// pixel pair is reached exactly once from its first pixel.
    pub const FORWARD: [Neighbor; 4] = [Neighbor(4), Neighbor(5), Neighbor(6), Neighbor(7)];

    pub fn new(p: u8) -> Option<Self> {
        (p < 8).then_some(Neighbor(p))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// `(dr, dc)` of the neighbour.
    #[inline]
    pub fn offset(self) -> (isize, isize) {
        OFFSETS8[self.0 as usize]
    }

    #[inline]
    pub fn opposite(self) -> Neighbor {
        Neighbor(7 - self.0)
    }

    /// The neighbour at `(dr, dc)`, if it is one of the 8.
    pub fn from_offset(dr: isize, dc: isize) -> Option<Neighbor> {
        OFFSETS8.iter().position(|&o| o == (dr, dc)).map(|p| Neighbor(p as u8))
    }
}

/// 8-channel affinity map with values in `[0, 1]`, channel-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMap<T> {
    dims: GridDims,
    data: Vec<T>,
}

impl<T: Real> AffinityMap<T> {
    pub fn zeros(dims: GridDims) -> Self {
        Self { dims, data: vec![T::zero(); 8 * dims.len()] }
    }

    /// Builds a map from a per-entry function. Off-image entries are forced
    /// to 0 without calling `f`.
    pub fn from_fn(dims: GridDims, mut f: impl FnMut(Neighbor, usize, usize) -> T) -> Result<Self> {
        let mut map = Self::zeros(dims);
        for p in Neighbor::ALL {
            for r in 0..dims.height() {
                for c in 0..dims.width() {
                    if map.neighbor(p, r, c).is_some() {
                        let v = f(p, r, c);
                        if !v.is_unit() {
                            return Err(Error::OutOfRange { what: "affinity", value: v.as_f64() });
                        }
                        let i = map.idx(p, r, c);
                        map.data[i] = v;
                    }
                }
            }
        }
        Ok(map)
    }

    /// Wraps a channel-major buffer of `8 * H * W` values. Off-image entries
    /// are normalised to 0.
    pub fn from_vec(dims: GridDims, data: Vec<T>) -> Result<Self> {
        if data.len() != 8 * dims.len() {
            return Err(Error::LengthMismatch { expected: 8 * dims.len(), found: data.len() });
        }
        let plane = dims.len();
        Self::from_fn(dims, |p, r, c| data[p.index() * plane + dims.index(r, c)])
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Channel-major values.
    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    fn idx(&self, p: Neighbor, row: usize, col: usize) -> usize {
        p.index() * self.dims.len() + self.dims.index(row, col)
    }

    #[inline]
    pub fn get(&self, p: Neighbor, row: usize, col: usize) -> T {
        self.data[self.idx(p, row, col)]
    }

    /// The in-image neighbour of `(row, col)` in direction `p`.
    #[inline]
    pub fn neighbor(&self, p: Neighbor, row: usize, col: usize) -> Option<Pixel> {
        let (dr, dc) = p.offset();
        self.dims.offset(row, col, dr, dc)
    }

    /// Mean of the two directed entries between 8-adjacent `q` and its
    /// neighbour in direction `p`. The caller guarantees the neighbour is
    /// in-image.
    #[inline]
    pub(crate) fn pair_affinity(&self, p: Neighbor, row: usize, col: usize) -> T {
        let (dr, dc) = p.offset();
        let nr = (row as isize + dr) as usize;
        let nc = (col as isize + dc) as usize;
        (self.get(p, row, col) + self.get(p.opposite(), nr, nc)) * T::lit(0.5)
    }

    pub fn cast<U: Real>(&self) -> AffinityMap<U> {
        AffinityMap { dims: self.dims, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

/// Boundary strength per pixel, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap<T> {
    dims: GridDims,
    data: Vec<T>,
}

impl<T: Real> EdgeMap<T> {
    pub fn from_vec(dims: GridDims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::LengthMismatch { expected: dims.len(), found: data.len() });
        }
        if let Some(v) = data.iter().find(|v| !v.is_unit()) {
            return Err(Error::OutOfRange { what: "edge strength", value: v.as_f64() });
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for r in 0..dims.height() {
            for c in 0..dims.width() {
                data.push(f(r, c));
            }
        }
        Self::from_vec(dims, data)
    }

    pub fn constant(dims: GridDims, value: T) -> Result<Self> {
        Self::from_vec(dims, vec![value; dims.len()])
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[self.dims.index(row, col)]
    }

    pub fn cast<U: Real>(&self) -> EdgeMap<U> {
        EdgeMap { dims: self.dims, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

/// Binary target, validity and per-entry weights for an external trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionTarget<T> {
    target: AffinityMap<T>,
    valid: Vec<bool>,
    weight: Vec<T>,
}

impl<T: Real> SupervisionTarget<T> {
    /// Rebuilds a target from stored validity flags: valid positives weigh
    /// `pos_weight`, valid negatives 1. The target must be binary and no
    /// off-image entry may be flagged valid.
    pub fn from_parts(target: AffinityMap<T>, valid: Vec<bool>, pos_weight: T) -> Result<Self> {
        if !(pos_weight.is_finite() && pos_weight > T::zero()) {
            return Err(Error::OutOfRange { what: "positive weight", value: pos_weight.as_f64() });
        }
        if valid.len() != target.data.len() {
            return Err(Error::LengthMismatch { expected: target.data.len(), found: valid.len() });
        }
        let dims = target.dims;
        let mut weight = vec![T::zero(); valid.len()];
        for (i, (&v, &t)) in valid.iter().zip(&target.data).enumerate() {
            if t != T::zero() && t != T::one() {
                return Err(Error::OutOfRange { what: "binary target entry", value: t.as_f64() });
            }
            if !v {
                continue;
            }
            let (r, c) = dims.pixel(i % dims.len());
            if target.neighbor(Neighbor((i / dims.len()) as u8), r, c).is_none() {
                return Err(Error::param(format!("off-image entry {i} flagged valid")));
            }
            weight[i] = if t == T::one() { pos_weight } else { T::one() };
        }
        Ok(Self { target, valid, weight })
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.target.dims
    }

    pub fn target(&self) -> &AffinityMap<T> {
        &self.target
    }

    /// Channel-major validity flags, same layout as the target.
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn weights(&self) -> &[T] {
        &self.weight
    }

    #[inline]
    pub fn is_valid(&self, p: Neighbor, row: usize, col: usize) -> bool {
        self.valid[self.target.idx(p, row, col)]
    }

    #[inline]
    pub fn weight(&self, p: Neighbor, row: usize, col: usize) -> T {
        self.weight[self.target.idx(p, row, col)]
    }
}

/// Channel pooling used to turn affinities into an edge map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    #[default]
    Min,
    Max,
    Mean,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::Min => "min",
            AggregationMode::Max => "max",
            AggregationMode::Mean => "mean",
        })
    }
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(AggregationMode::Min),
            "max" => Ok(AggregationMode::Max),
            "mean" => Ok(AggregationMode::Mean),
            other => Err(Error::param(format!("unknown aggregation mode {other:?}"))),
        }
    }
}

/// Anything that can be viewed as a non-overlapping instance label map.
pub trait AsLabelMap {
    fn label_map(&self) -> Result<Cow<'_, InstanceLabelMap>>;
}

impl AsLabelMap for InstanceLabelMap {
    fn label_map(&self) -> Result<Cow<'_, InstanceLabelMap>> {
        Ok(Cow::Borrowed(self))
    }
}

impl AsLabelMap for InstanceSet {
    fn label_map(&self) -> Result<Cow<'_, InstanceLabelMap>> {
        instances_to_labelmap(self, OverlapPolicy::Error).map(Cow::Owned)
    }
}

/// Binary affinity encoding: 1 iff a pixel and its neighbour carry the same
/// positive label. Background-background pairs are stored as 0.
pub fn encode_pa<T: Real>(instances: &impl AsLabelMap) -> Result<AffinityMap<T>> {
    let lm = instances.label_map()?;
    AffinityMap::from_fn(lm.dims(), |p, r, c| {
        let (nr, nc) = neighbor_unchecked(p, r, c);
        let a = lm.get(r, c);
        if a != 0 && a == lm.get(nr, nc) {
            T::one()
        } else {
            T::zero()
        }
    })
}

#[inline]
fn neighbor_unchecked(p: Neighbor, r: usize, c: usize) -> Pixel {
    let (dr, dc) = p.offset();
    ((r as isize + dr) as usize, (c as isize + dc) as usize)
}

/// Valid positive and negative directed entries of one label map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PaCounts {
    pub positives: u64,
    pub negatives: u64,
}

impl std::ops::Add for PaCounts {
    type Output = PaCounts;

    fn add(self, o: PaCounts) -> PaCounts {
        PaCounts { positives: self.positives + o.positives, negatives: self.negatives + o.negatives }
    }
}

pub fn pa_counts(lm: &InstanceLabelMap) -> PaCounts {
    let dims = lm.dims();
    let mut counts = PaCounts::default();
    for r in 0..dims.height() {
        for c in 0..dims.width() {
            let a = lm.get(r, c);
            for &(dr, dc) in &OFFSETS8 {
                let Some((nr, nc)) = dims.offset(r, c, dr, dc) else { continue };
                let b = lm.get(nr, nc);
                if a == 0 && b == 0 {
                    continue;
                }
                if a == b {
                    counts.positives += 1;
                } else {
                    counts.negatives += 1;
                }
            }
        }
    }
    counts
}

/// Target, validity and weights. Valid entries are in-image pairs that are
/// not background-background; positives weigh `pos_weight`, negatives 1.
pub fn build_supervision<T: Real>(instances: &impl AsLabelMap, pos_weight: T) -> Result<SupervisionTarget<T>> {
    if !(pos_weight.is_finite() && pos_weight > T::zero()) {
        return Err(Error::OutOfRange { what: "positive weight", value: pos_weight.as_f64() });
    }
    let lm = instances.label_map()?;
    let target: AffinityMap<T> = encode_pa(lm.as_ref())?;
    let dims = lm.dims();
    let mut valid = vec![false; target.data.len()];
    let mut weight = vec![T::zero(); target.data.len()];
    for p in Neighbor::ALL {
        for r in 0..dims.height() {
            for c in 0..dims.width() {
                let Some((nr, nc)) = target.neighbor(p, r, c) else { continue };
                if lm.get(r, c) == 0 && lm.get(nr, nc) == 0 {
                    continue;
                }
                let i = target.idx(p, r, c);
                valid[i] = true;
                weight[i] = if target.data[i] == T::one() { pos_weight } else { T::one() };
            }
        }
    }
    Ok(SupervisionTarget { target, valid, weight })
}

/// Negatives over positives across a dataset: the multiplier that balances
/// positive terms of the loss.
pub fn pos_weight<I: AsLabelMap>(dataset: &[I]) -> Result<f64> {
    let mut total = PaCounts::default();
    for item in dataset {
        total = total + pa_counts(item.label_map()?.as_ref());
    }
    pos_weight_from_counts(total)
}

pub fn pos_weight_from_counts(counts: PaCounts) -> Result<f64> {
    if counts.positives == 0 {
        return Err(Error::NoPositives);
    }
    if counts.negatives == 0 {
        return Err(Error::NoNegatives);
    }
    Ok(counts.negatives as f64 / counts.positives as f64)
}

/// Weighted binary cross entropy over valid entries, normalised by the total
/// valid weight. Invalid entries contribute exactly nothing.
pub fn masked_weighted_bce<T: Real>(pred: &AffinityMap<T>, sup: &SupervisionTarget<T>, eps: f64) -> Result<f64> {
    sup.dims().check_same(&pred.dims)?;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::OutOfRange { what: "clamp epsilon", value: eps });
    }
    let mut loss = 0.0f64;
    let mut total = 0.0f64;
    for (i, &ok) in sup.valid.iter().enumerate() {
        if !ok {
            continue;
        }
        let w = sup.weight[i].as_f64();
        let p = pred.data[i].as_f64();
        let term = if sup.target.data[i] == T::one() { -(p.max(eps)).ln() } else { -((1.0 - p).max(eps)).ln() };
        loss += w * term;
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::NoValidEntries);
    }
    Ok(loss / total)
}

fn pool<T: Real>(values: impl Iterator<Item = T>, mode: AggregationMode) -> Option<T> {
    let mut n = 0usize;
    let mut acc: Option<T> = None;
    let mut sum = 0.0f64;
    for v in values {
        n += 1;
        sum += v.as_f64();
        acc = Some(match (acc, mode) {
            (None, _) => v,
            (Some(a), AggregationMode::Min) => a.min(v),
            (Some(a), AggregationMode::Max) => a.max(v),
            (Some(a), AggregationMode::Mean) => a,
        });
    }
    match mode {
        AggregationMode::Mean if n > 0 => Some(T::lit(sum / n as f64)),
        _ => acc,
    }
}

/// Edge map `1 - pool(affinities)` over the in-image channels of each
/// pixel. A pixel without in-image neighbours (1x1 image) has edge 0.
pub fn aggregate<T: Real>(aff: &AffinityMap<T>, mode: AggregationMode) -> EdgeMap<T> {
    let dims = aff.dims;
    let mut data = Vec::with_capacity(dims.len());
    for r in 0..dims.height() {
        for c in 0..dims.width() {
            let vals = Neighbor::ALL.into_iter().filter(|&p| aff.neighbor(p, r, c).is_some()).map(|p| aff.get(p, r, c));
            let pooled = pool(vals, mode).unwrap_or(T::one());
            data.push((T::one() - pooled).max(T::zero()).min(T::one()));
        }
    }
    EdgeMap { dims, data }
}

/// Single-channel training target obtained by pooling the binary target
/// directly. A pixel is valid when any of its channels is valid. Max pooling
/// is rejected: its pooled target is 1 wherever the pixel touches its own
/// instance, which carries no boundary information.
pub fn aggregate_target_1ch<T: Real>(
    instances: &impl AsLabelMap,
    mode: AggregationMode,
) -> Result<(EdgeMap<T>, Vec<bool>)> {
    if mode == AggregationMode::Max {
        return Err(Error::UnsupportedMode("max"));
    }
    let sup = build_supervision(instances, T::one())?;
    let edge = aggregate(&sup.target, mode);
    let dims = sup.dims();
    let valid = (0..dims.len())
        .map(|i| {
            let (r, c) = dims.pixel(i);
            Neighbor::ALL.into_iter().any(|p| sup.is_valid(p, r, c))
        })
        .collect();
    Ok((edge, valid))
}

/// Test noise model: random flips, per-channel box smoothing, clamping and
/// re-symmetrisation. Deterministic in `seed`.
pub fn perturb<T: Real>(aff: &AffinityMap<T>, flip_prob: f64, smooth_radius: usize, seed: u64) -> Result<AffinityMap<T>> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::OutOfRange { what: "flip probability", value: flip_prob });
    }
    let dims = aff.dims;
    let plane = dims.len();
    let mut vals: Vec<f64> = aff.data.iter().map(|v| v.as_f64()).collect();
    let inside: Vec<bool> = (0..8 * plane)
        .map(|i| {
            let (r, c) = dims.pixel(i % plane);
            aff.neighbor(Neighbor((i / plane) as u8), r, c).is_some()
        })
        .collect();

    let mut rng = Stream::new(seed);
    for (v, &ok) in vals.iter_mut().zip(&inside) {
        if ok && rng.unit() < flip_prob {
            *v = 1.0 - *v;
        }
    }

    if smooth_radius > 0 {
        for p in 0..8 {
            let ch = &mut vals[p * plane..(p + 1) * plane];
            let ok = &inside[p * plane..(p + 1) * plane];
            box_smooth(dims, ch, ok, smooth_radius);
        }
    }

    for v in vals.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    for p in Neighbor::FORWARD {
        for r in 0..dims.height() {
            for c in 0..dims.width() {
                let Some((nr, nc)) = aff.neighbor(p, r, c) else { continue };
                let a = p.index() * plane + dims.index(r, c);
                let b = p.opposite().index() * plane + dims.index(nr, nc);
                let m = 0.5 * (vals[a] + vals[b]);
                vals[a] = m;
                vals[b] = m;
            }
        }
    }

    AffinityMap::from_vec(dims, vals.into_iter().map(T::lit).collect())
}

/// Mean over the `(2r+1)^2` window of in-image entries, via summed-area
/// tables over values and counts.
fn box_smooth(dims: GridDims, ch: &mut [f64], ok: &[bool], radius: usize) {
    let (h, w) = (dims.height(), dims.width());
    let mut sv = vec![0.0f64; (h + 1) * (w + 1)];
    let mut sn = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let (v, n) = if ok[i] { (ch[i], 1) } else { (0.0, 0) };
            let k = (r + 1) * (w + 1) + c + 1;
            sv[k] = v + sv[k - 1] + sv[k - (w + 1)] - sv[k - (w + 1) - 1];
            sn[k] = n + sn[k - 1] + sn[k - (w + 1)] - sn[k - (w + 1) - 1];
        }
    }
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !ok[i] {
                continue;
            }
            let r0 = r.saturating_sub(radius);
            let c0 = c.saturating_sub(radius);
            let r1 = (r + radius + 1).min(h);
            let c1 = (c + radius + 1).min(w);
            let at = |rr: usize, cc: usize| rr * (w + 1) + cc;
            let s = sv[at(r1, c1)] - sv[at(r0, c1)] - sv[at(r1, c0)] + sv[at(r0, c0)];
            let n = sn[at(r1, c1)] + sn[at(r0, c0)] - sn[at(r0, c1)] - sn[at(r1, c0)];
            ch[i] = s / f64::from(n);
        }
    }
}
