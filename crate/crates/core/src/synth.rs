//! Deterministic synthetic scenes and brute-force reference oracles.
//!
//! Scenes draw from [`Stream`] (ChaCha8 keyed by the seed), so a seed fixes
//! the scene on every platform. Shapes are placed by rejection sampling
//! inside their bounding boxes; every instance is 4-connected.

use serde::{Deserialize, Serialize};

use crate::affinity::{AffinityMap, Neighbor};
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, GridDims, InstanceLabelMap, InstanceSet};
use crate::objectness::ObjectnessBreakdown;
use crate::scalar::Real;
use crate::seed::Stream;

/// Largest grid side the oracles accept.
pub const ORACLE_MAX_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Blob,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Blob];
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangle" => Ok(ShapeKind::Rectangle),
            "ellipse" => Ok(ShapeKind::Ellipse),
            "blob" => Ok(ShapeKind::Blob),
            _ => Err(Error::param(format!("unknown shape kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive instance-count range.
    pub n_instances: (usize, usize),
    pub shape_kinds: Vec<ShapeKind>,
    /// Minimum number of background pixels between instances along the
    /// Chebyshev metric.
    pub min_separation: usize,
    /// With `false`, instances are at least one pixel apart whatever
    /// `min_separation` says.
    pub allow_contact: bool,
    pub seed: u64,
    /// Inclusive range of bounding-box sides.
    pub extent: (usize, usize),
    pub min_area: usize,
    pub max_attempts: usize,
}

impl SceneSpec {
    pub fn new(dims: GridDims, seed: u64) -> Self {
        let side = dims.height().min(dims.width());
        let lo = 5.min(side);
        Self {
            height: dims.height(),
            width: dims.width(),
            n_instances: (2, 8),
            shape_kinds: ShapeKind::ALL.to_vec(),
            min_separation: 1,
            allow_contact: false,
            seed,
            extent: (lo, (side / 3).max(lo)),
            min_area: 4,
            max_attempts: 2000,
        }
    }

    pub fn dims(&self) -> Result<GridDims> {
        GridDims::new(self.height, self.width)
    }

    /// Required background gap between instances.
    pub fn effective_gap(&self) -> usize {
        if self.allow_contact {
            self.min_separation
        } else {
            self.min_separation.max(1)
        }
    }

    fn validate(&self) -> Result<GridDims> {
        let dims = self.dims()?;
        let (lo, hi) = self.n_instances;
        if lo > hi {
            return Err(Error::param("n_instances range is empty"));
        }
        if hi > 0 && self.shape_kinds.is_empty() {
            return Err(Error::param("no shape kinds to draw from"));
        }
        let (a, b) = self.extent;
        if a == 0 || a > b || a > dims.height().min(dims.width()) {
            return Err(Error::param(format!("extent range {a}..={b} does not fit a {dims} grid")));
        }
        Ok(dims)
    }
}

/// Keeps the largest 4-connected component (ties: first in raster order).
fn largest_component(bits: &mut [bool], h: usize, w: usize) {
    let mut comp = vec![usize::MAX; bits.len()];
    let (mut best, mut best_size) = (usize::MAX, 0);
    let mut stack = Vec::new();
    for s in 0..bits.len() {
        if !bits[s] || comp[s] != usize::MAX {
            continue;
        }
        comp[s] = s;
        stack.push(s);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if bits[j] && comp[j] == usize::MAX {
                    comp[j] = s;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        if size > best_size {
            best = s;
            best_size = size;
        }
    }
    for (b, c) in bits.iter_mut().zip(comp) {
        *b = *b && c == best;
    }
}

fn morph(bits: &[bool], h: usize, w: usize, dilate: bool) -> Vec<bool> {
    (0..bits.len())
        .map(|i| {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            let mut any = false;
            let mut all = true;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    // outside the box counts as background for both ops
                    let v = nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w && bits[nr as usize * w + nc as usize];
                    any |= v;
                    all &= v;
                }
            }
            if dilate {
                any
            } else {
                all
            }
        })
        .collect()
}

/// Shape raster inside an `h x w` box.
fn draw_shape(kind: ShapeKind, h: usize, w: usize, s: &mut Stream) -> Vec<bool> {
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut bits: Vec<bool> = match kind {
        ShapeKind::Rectangle => vec![true; h * w],
        ShapeKind::Ellipse => (0..h * w)
            .map(|i| {
                let y = ((i / w) as f64 + 0.5 - cy) / cy;
                let x = ((i % w) as f64 + 0.5 - cx) / cx;
                x * x + y * y <= 1.0
            })
            .collect(),
        ShapeKind::Blob => {
            let k = s.range_inclusive(5, 9) as usize;
            let verts: Vec<(f64, f64)> = (0..k)
                .map(|j| {
                    let a = (j as f64 + s.uniform(-0.3, 0.3)) * std::f64::consts::TAU / k as f64;
                    let rho = s.uniform(0.55, 1.0);
                    (cy + rho * cy * a.sin(), cx + rho * cx * a.cos())
                })
                .collect();
            // pad by one pixel so the closing is not cut by the box edge
            let (ph, pw) = (h + 2, w + 2);
            let inside = |y: f64, x: f64| {
                let mut odd = false;
                for j in 0..k {
                    let (y0, x0) = verts[j];
                    let (y1, x1) = verts[(j + 1) % k];
                    if (y0 > y) != (y1 > y) && x < x0 + (y - y0) / (y1 - y0) * (x1 - x0) {
                        odd = !odd;
                    }
                }
                odd
            };
            let padded: Vec<bool> = (0..ph * pw)
                .map(|i| {
                    let (r, c) = (i / pw, i % pw);
                    r >= 1 && c >= 1 && r <= h && c <= w && inside((r - 1) as f64 + 0.5, (c - 1) as f64 + 0.5)
                })
                .collect();
            let closed = morph(&morph(&padded, ph, pw, true), ph, pw, false);
            (0..h * w).map(|i| closed[(i / w + 1) * pw + i % w + 1]).collect()
        }
    };
    largest_component(&mut bits, h, w);
    bits
}

/// Generates a scene; fails with [`Error::Placement`] when the attempt cap
/// runs out before the drawn instance count is placed.
pub fn generate_scene(spec: &SceneSpec) -> Result<InstanceSet> {
    let dims = spec.validate()?;
    let mut s = Stream::new(spec.seed);
    let n = s.range_inclusive(spec.n_instances.0 as u64, spec.n_instances.1 as u64) as usize;
    let gap = spec.effective_gap() as isize;
    let (hh, ww) = (dims.height(), dims.width());
    let mut occupied = vec![false; dims.len()];
    let mut set = InstanceSet::new(dims);
    let mut attempts = 0;
    while set.len() < n {
        if attempts == spec.max_attempts {
            return Err(Error::Placement { requested: n, achieved: set.len() });
        }
        attempts += 1;
        let kind = spec.shape_kinds[s.below(spec.shape_kinds.len() as u64) as usize];
        let bh = s.range_inclusive(spec.extent.0 as u64, spec.extent.1.min(hh) as u64) as usize;
        let bw = s.range_inclusive(spec.extent.0 as u64, spec.extent.1.min(ww) as u64) as usize;
        let r0 = s.below((hh - bh + 1) as u64) as usize;
        let c0 = s.below((ww - bw + 1) as u64) as usize;
        let bits = draw_shape(kind, bh, bw, &mut s);
        if bits.iter().filter(|&&b| b).count() < spec.min_area.max(1) {
            continue;
        }
        let pixels: Vec<(usize, usize)> =
            (0..bh * bw).filter(|&i| bits[i]).map(|i| (r0 + i / bw, c0 + i % bw)).collect();
        let clear = pixels.iter().all(|&(r, c)| {
            (-gap..=gap).all(|dr| {
                (-gap..=gap).all(|dc| dims.offset(r, c, dr, dc).is_none_or(|(nr, nc)| !occupied[dims.index(nr, nc)]))
            })
        });
        if !clear {
            continue;
        }
        for &(r, c) in &pixels {
            occupied[dims.index(r, c)] = true;
        }
        set.push(set.len() as u64 + 1, BinaryMask::from_pixels(dims, pixels)?)?;
    }
    Ok(set)
}

/// Post-hoc check of a generated scene: dims, instance count, area,
/// 4-connectivity, non-overlap and the Chebyshev gap between instances.
pub fn verify_scene(spec: &SceneSpec, set: &InstanceSet) -> std::result::Result<(), String> {
    let dims = spec.dims().map_err(|e| e.to_string())?;
    if set.dims() != dims {
        return Err(format!("scene dims {} differ from spec {dims}", set.dims()));
    }
    let n = set.len();
    if n < spec.n_instances.0 || n > spec.n_instances.1 {
        return Err(format!("{n} instances outside {:?}", spec.n_instances));
    }
    let gap = spec.effective_gap();
    for (id, m) in set.iter() {
        if m.area() < spec.min_area.max(1) {
            return Err(format!("instance {id} has area {}", m.area()));
        }
        let px: Vec<_> = m.pixels().collect();
        let mut seen = vec![false; px.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..px.len() {
                if !seen[j] && px[i].0.abs_diff(px[j].0) + px[i].1.abs_diff(px[j].1) == 1 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(format!("instance {id} is not 4-connected"));
        }
    }
    let pixels: Vec<Vec<(usize, usize)>> = set.masks().iter().map(|m| m.pixels().collect()).collect();
    for a in 0..n {
        for b in a + 1..n {
            let d = pixels[a]
                .iter()
                .flat_map(|p| pixels[b].iter().map(move |q| p.0.abs_diff(q.0).max(p.1.abs_diff(q.1))))
                .min()
                .unwrap_or(usize::MAX);
            if d == 0 {
                return Err(format!("instances {} and {} overlap", set.ids()[a], set.ids()[b]));
            }
            if d - 1 < gap {
                return Err(format!("instances {} and {} have gap {} < {gap}", set.ids()[a], set.ids()[b], d - 1));
            }
        }
    }
    Ok(())
}

fn oracle_dims(dims: GridDims) -> Result<()> {
    if dims.height() > ORACLE_MAX_SIDE || dims.width() > ORACLE_MAX_SIDE {
        return Err(Error::OracleBudget(format!("grid {dims} exceeds {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE}")));
    }
    Ok(())
}

/// Direction index of `(dr, dc)` written out case by case.
fn channel_of(dr: isize, dc: isize) -> usize {
    match (dr, dc) {
        (-1, -1) => 0,
        (-1, 0) => 1,
        (-1, 1) => 2,
        (0, -1) => 3,
        (0, 1) => 4,
        (1, -1) => 5,
        (1, 0) => 6,
        (1, 1) => 7,
        _ => unreachable!("not a neighbour offset"),
    }
}

fn undirected<T: Real>(aff: &AffinityMap<T>, a: (usize, usize), b: (usize, usize)) -> f64 {
    let (dr, dc) = (b.0 as isize - a.0 as isize, b.1 as isize - a.1 as isize);
    let fwd = aff.get(Neighbor::new(channel_of(dr, dc) as u8).expect("channel"), a.0, a.1);
    let back = aff.get(Neighbor::new(channel_of(-dr, -dc) as u8).expect("channel"), b.0, b.1);
    (fwd.as_f64() + back.as_f64()) / 2.0
}

fn chebyshev_one(a: (usize, usize), b: (usize, usize)) -> bool {
    a != b && a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1
}

/// Components of the graph keeping pairs with undirected affinity `>= t`,
/// found by recursive flood fill. Labels start at 1 in raster order.
pub fn oracle_components<T: Real>(aff: &AffinityMap<T>, t: T) -> Result<InstanceLabelMap> {
    let dims = aff.dims();
    oracle_dims(dims)?;
    fn fill<T: Real>(aff: &AffinityMap<T>, t: f64, p: (usize, usize), label: u32, out: &mut [u32]) {
        let dims = aff.dims();
        out[dims.index(p.0, p.1)] = label;
        for r in p.0.saturating_sub(1)..=(p.0 + 1).min(dims.height() - 1) {
            for c in p.1.saturating_sub(1)..=(p.1 + 1).min(dims.width() - 1) {
                let q = (r, c);
                if chebyshev_one(p, q) && out[dims.index(r, c)] == 0 && undirected(aff, p, q) >= t {
                    fill(aff, t, q, label, out);
                }
            }
        }
    }
    let mut out = vec![0u32; dims.len()];
    let mut next = 0;
    for r in 0..dims.height() {
        for c in 0..dims.width() {
            if out[dims.index(r, c)] == 0 {
                next += 1;
                fill(aff, t.as_f64(), (r, c), next, &mut out);
            }
        }
    }
    InstanceLabelMap::new(dims, out)
}

/// Objectness terms by enumerating every unordered pixel pair of the grid.
pub fn oracle_o_pa<T: Real>(region: &BinaryMask, aff: &AffinityMap<T>) -> Result<ObjectnessBreakdown<T>> {
    let dims = aff.dims();
    oracle_dims(dims)?;
    dims.check_same(&region.dims())?;
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let all: Vec<(usize, usize)> = (0..dims.height()).flat_map(|r| (0..dims.width()).map(move |c| (r, c))).collect();
    let inside = |p: (usize, usize)| region.contains(p.0, p.1);
    let (mut inner, mut outer) = (0.0, 0.0);
    for (x, &a) in all.iter().enumerate() {
        for &b in &all[x + 1..] {
            if !chebyshev_one(a, b) {
                continue;
            }
            match (inside(a), inside(b)) {
                (true, true) => inner += undirected(aff, a, b),
                (true, false) | (false, true) => outer += undirected(aff, a, b),
                _ => {}
            }
        }
    }
    let area = all.iter().filter(|&&p| inside(p)).count();
    let boundary = all
        .iter()
        .filter(|&&p| inside(p) && all.iter().any(|&q| chebyshev_one(p, q) && !inside(q)))
        .count();
    let o_pa = inner / area as f64 - if boundary == 0 { 0.0 } else { outer / boundary as f64 };
    Ok(ObjectnessBreakdown {
        inner_sum: T::lit(inner),
        outer_sum: T::lit(outer),
        inner_count: area,
        boundary_count: boundary,
        o_pa: T::lit(o_pa),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_instances_is_background() {
        let mut spec = SceneSpec::new(GridDims::new(16, 16).unwrap(), 1);
        spec.n_instances = (0, 0);
        assert!(generate_scene(&spec).unwrap().is_empty());
    }

    #[test]
    fn seed_determinism_and_validity() {
        for seed in 0..30 {
            let spec = SceneSpec::new(GridDims::new(48, 40).unwrap(), seed);
            let a = generate_scene(&spec).unwrap();
            assert_eq!(a.masks(), generate_scene(&spec).unwrap().masks());
            verify_scene(&spec, &a).unwrap();
        }
    }

    #[test]
    fn min_separation_two() {
        for seed in 0..20 {
            let mut spec = SceneSpec::new(GridDims::new(40, 40).unwrap(), seed);
            spec.min_separation = 2;
            let set = generate_scene(&spec).unwrap();
            verify_scene(&spec, &set).unwrap();
            // independent brute-force gap check
            let m = set.masks();
            for a in 0..m.len() {
                for b in a + 1..m.len() {
                    for p in m[a].pixels() {
                        for q in m[b].pixels() {
                            assert!(p.0.abs_diff(q.0).max(p.1.abs_diff(q.1)) >= 3);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn contact_allowed_without_overlap() {
        let mut spec = SceneSpec::new(GridDims::new(24, 24).unwrap(), 3);
        spec.allow_contact = true;
        spec.min_separation = 0;
        spec.n_instances = (6, 6);
        spec.shape_kinds = vec![ShapeKind::Rectangle];
        let set = generate_scene(&spec).unwrap();
        verify_scene(&spec, &set).unwrap();
    }

    #[test]
    fn placement_failure_reports_count() {
        let mut spec = SceneSpec::new(GridDims::new(8, 8).unwrap(), 0);
        spec.n_instances = (50, 50);
        spec.max_attempts = 200;
        match generate_scene(&spec) {
            Err(Error::Placement { requested: 50, achieved }) => assert!(achieved < 50),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn blobs_are_closed_and_connected() {
        let mut s = Stream::new(9);
        for _ in 0..50 {
            let (h, w) = (s.range_inclusive(5, 20) as usize, s.range_inclusive(5, 20) as usize);
            let bits = draw_shape(ShapeKind::Blob, h, w, &mut s);
            assert!(bits.iter().any(|&b| b));
        }
    }

    #[test]
    fn oracle_components_closed_forms() {
        let d = GridDims::new(4, 5).unwrap();
        let ones = AffinityMap::<f64>::from_fn(d, |_, _, _| 1.0).unwrap();
        assert!(oracle_components(&ones, 0.5).unwrap().labels().iter().all(|&l| l == 1));
        let zeros = AffinityMap::<f64>::zeros(d);
        let lm = oracle_components(&zeros, 0.5).unwrap();
        assert_eq!(lm.labels(), (1..=20).collect::<Vec<u32>>().as_slice());
        assert!(oracle_components(&AffinityMap::<f64>::zeros(GridDims::new(33, 2).unwrap()), 0.5).is_err());
    }

    #[test]
    fn oracle_o_pa_closed_forms() {
        let d = GridDims::new(2, 2).unwrap();
        let ones = AffinityMap::<f64>::from_fn(d, |_, _, _| 1.0).unwrap();
        assert_eq!(oracle_o_pa(&BinaryMask::full(d), &ones).unwrap().o_pa, 1.5);
        let d = GridDims::new(3, 3).unwrap();
        let ones = AffinityMap::<f64>::from_fn(d, |_, _, _| 1.0).unwrap();
        assert_eq!(oracle_o_pa(&BinaryMask::from_pixels(d, [(1, 1)]).unwrap(), &ones).unwrap().o_pa, -8.0);
    }
}
