//! Binary masks, label maps, run-length encoding and the geometric helpers
//! shared by every other module.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(row, col)` pixel coordinate.
pub type Pixel = (usize, usize);

/// Height and width of an image grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    height: usize,
    width: usize,
}

impl GridDims {
    /// Both sides must be positive and the pixel count must fit a `u32`
    /// index (pixel ids are stored as `u32` in arcs and run lengths).
    pub fn new(height: usize, width: usize) -> Result<Self> {
        let ok = height >= 1
            && width >= 1
            && height.checked_mul(width).is_some_and(|n| n <= u32::MAX as usize);
        if !ok {
            return Err(Error::InvalidDims { height, width });
        }
        Ok(Self { height, width })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels.
    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major linear index.
    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> Pixel {
        (index / self.width, index % self.width)
    }

    /// Returns the in-image pixel at `(row + dr, col + dc)`, if any.
    #[inline]
    pub fn offset(&self, row: usize, col: usize, dr: isize, dc: isize) -> Option<Pixel> {
        let r = row as isize + dr;
        let c = col as isize + dc;
        (r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width)
            .then_some((r as usize, c as usize))
    }

    pub(crate) fn check_same(&self, other: &GridDims) -> Result<()> {
        if self != other {
            return Err(Error::DimsMismatch { expected: *self, found: *other });
        }
        Ok(())
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// 8-connected offsets, row-major over the 3x3 window without its centre.
pub(crate) const OFFSETS8: [(isize, isize); 8] =
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// A set of pixels on a grid.
///
/// Storage is a bitset restricted to the band of rows that contain set
/// pixels, so small masks on large images stay small. The band is always
/// trimmed, which makes derived equality and hashing exact bitmap equality.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: GridDims,
    row0: usize,
    rows: usize,
    words: Vec<u64>,
    area: usize,
}

#[inline]
fn words_per_row(width: usize) -> usize {
    width.div_ceil(64)
}

impl BinaryMask {
    pub fn empty(dims: GridDims) -> Self {
        Self { dims, row0: 0, rows: 0, words: Vec::new(), area: 0 }
    }

    pub fn full(dims: GridDims) -> Self {
        Self::from_fn(dims, |_, _| true)
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let wpr = words_per_row(dims.width);
        let mut words = vec![0u64; wpr * dims.height];
        for r in 0..dims.height {
            for c in 0..dims.width {
                if f(r, c) {
                    words[r * wpr + c / 64] |= 1u64 << (c % 64);
                }
            }
        }
        Self::from_full_words(dims, words)
    }

    /// Builds a mask from row-major linear pixel indices.
    pub fn from_indices(dims: GridDims, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let wpr = words_per_row(dims.width);
        let mut words = vec![0u64; wpr * dims.height];
        for i in indices {
            if i >= dims.len() {
                return Err(Error::OutOfRange { what: "pixel index", value: i as f64 });
            }
            let (r, c) = dims.pixel(i);
            words[r * wpr + c / 64] |= 1u64 << (c % 64);
        }
        Ok(Self::from_full_words(dims, words))
    }

    pub fn from_pixels(dims: GridDims, pixels: impl IntoIterator<Item = Pixel>) -> Result<Self> {
        let mut idx = Vec::new();
        for (r, c) in pixels {
            if r >= dims.height || c >= dims.width {
                return Err(Error::OutOfRange { what: "pixel coordinate", value: (r.max(c)) as f64 });
            }
            idx.push(dims.index(r, c));
        }
        Self::from_indices(dims, idx)
    }

    /// Row-major booleans, one per pixel.
    pub fn from_bools(dims: GridDims, bits: &[bool]) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::LengthMismatch { expected: dims.len(), found: bits.len() });
        }
        Ok(Self::from_fn(dims, |r, c| bits[dims.index(r, c)]))
    }

    fn from_full_words(dims: GridDims, words: Vec<u64>) -> Self {
        let wpr = words_per_row(dims.width);
        let row_nonzero = |r: usize| words[r * wpr..(r + 1) * wpr].iter().any(|&w| w != 0);
        let Some(first) = (0..dims.height).find(|&r| row_nonzero(r)) else {
            return Self::empty(dims);
        };
        let last = (0..dims.height).rev().find(|&r| row_nonzero(r)).unwrap_or(first);
        let band = words[first * wpr..(last + 1) * wpr].to_vec();
        let area = band.iter().map(|w| w.count_ones() as usize).sum();
        Self { dims, row0: first, rows: last - first + 1, words: band, area }
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Number of set pixels.
    #[inline]
    pub fn area(&self) -> usize {
        self.area
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        if row < self.row0 || row >= self.row0 + self.rows || col >= self.dims.width {
            return false;
        }
        let wpr = words_per_row(self.dims.width);
        (self.words[(row - self.row0) * wpr + col / 64] >> (col % 64)) & 1 == 1
    }

    #[inline]
    pub fn contains_index(&self, index: usize) -> bool {
        let (r, c) = self.dims.pixel(index);
        self.contains(r, c)
    }

    /// Set pixels in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        let wpr = words_per_row(self.dims.width);
        (0..self.rows).flat_map(move |br| {
            (0..wpr).flat_map(move |wi| {
                let mut w = self.words[br * wpr + wi];
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let bit = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some((self.row0 + br, wi * 64 + bit))
                })
            })
        })
    }

    /// Set pixels as row-major linear indices, in increasing order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        let w = self.dims.width;
        self.pixels().map(move |(r, c)| r * w + c)
    }

    pub fn to_bools(&self) -> Vec<bool> {
        let mut out = vec![false; self.dims.len()];
        for i in self.indices() {
            out[i] = true;
        }
        out
    }

    /// `|self ∩ other|`. Both masks must share dims.
    pub fn intersection_area(&self, other: &BinaryMask) -> usize {
        debug_assert_eq!(self.dims, other.dims);
        let lo = self.row0.max(other.row0);
        let hi = (self.row0 + self.rows).min(other.row0 + other.rows);
        if lo >= hi {
            return 0;
        }
        let wpr = words_per_row(self.dims.width);
        let a = &self.words[(lo - self.row0) * wpr..(hi - self.row0) * wpr];
        let b = &other.words[(lo - other.row0) * wpr..(hi - other.row0) * wpr];
        a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as usize).sum()
    }

    /// Pixel-wise union. Both masks must share dims.
    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.dims.check_same(&other.dims)?;
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        let wpr = words_per_row(self.dims.width);
        let row0 = self.row0.min(other.row0);
        let end = (self.row0 + self.rows).max(other.row0 + other.rows);
        let mut words = vec![0u64; (end - row0) * wpr];
        for m in [self, other] {
            let off = (m.row0 - row0) * wpr;
            for (dst, src) in words[off..off + m.words.len()].iter_mut().zip(&m.words) {
                *dst |= *src;
            }
        }
        let area = words.iter().map(|w| w.count_ones() as usize).sum();
        Ok(BinaryMask { dims: self.dims, row0, rows: end - row0, words, area })
    }

    /// Complement within the grid.
    pub fn complement(&self) -> BinaryMask {
        BinaryMask::from_fn(self.dims, |r, c| !self.contains(r, c))
    }

    /// Tight inclusive bounding box, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        if self.is_empty() {
            return None;
        }
        let wpr = words_per_row(self.dims.width);
        let mut acc = vec![0u64; wpr];
        for row in self.words.chunks_exact(wpr) {
            for (a, w) in acc.iter_mut().zip(row) {
                *a |= *w;
            }
        }
        let first = acc.iter().position(|&w| w != 0)?;
        let last = acc.iter().rposition(|&w| w != 0)?;
        Some(BBox {
            row_min: self.row0,
            col_min: first * 64 + acc[first].trailing_zeros() as usize,
            row_max: self.row0 + self.rows - 1,
            col_max: last * 64 + 63 - acc[last].leading_zeros() as usize,
        })
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("dims", &self.dims)
            .field("area", &self.area)
            .field("bbox", &self.bbox())
            .finish()
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

/// Intersection over union; two empty masks give 0.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.dims.check_same(&b.dims)?;
    Ok(iou_unchecked(a, b))
}

#[inline]
pub(crate) fn iou_unchecked(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.intersection_area(b);
    let uni = a.area + b.area - inter;
    if uni == 0 {
        0.0
    } else {
        inter as f64 / uni as f64
    }
}

/// Pixels of the mask that have at least one in-image 8-neighbour outside
/// the mask. The image frame itself never makes a pixel a boundary pixel.
pub fn boundary_pixels(mask: &BinaryMask) -> BinaryMask {
    let dims = mask.dims;
    let idx = mask.pixels().filter(|&(r, c)| {
        OFFSETS8
            .iter()
            .any(|&(dr, dc)| dims.offset(r, c, dr, dc).is_some_and(|(nr, nc)| !mask.contains(nr, nc)))
    });
    BinaryMask::from_pixels(dims, idx.collect::<Vec<_>>()).expect("pixels come from the mask")
}

/// Tight inclusive bounds of the set pixels.
pub fn bbox(mask: &BinaryMask) -> Option<BBox> {
    mask.bbox()
}

/// Column-major run lengths, alternating background/foreground and starting
/// with a (possibly empty) background run.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RunLengthMask {
    dims: GridDims,
    counts: Vec<u32>,
}

impl RunLengthMask {
    /// Validates the count sum and rejects zero-length runs other than a
    /// leading one.
    pub fn new(dims: GridDims, counts: Vec<u32>) -> Result<Self> {
        let sum: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if sum != dims.len() as u64 {
            return Err(Error::RleCountMismatch { expected: dims.len() as u64, found: sum });
        }
        if let Some(pos) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::InvalidRle(format!("zero-length run at position {}", pos + 1)));
        }
        Ok(Self { dims, counts })
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    #[inline]
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground pixel count: the sum of the odd-position runs.
    pub fn area(&self) -> usize {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as usize).sum()
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RunLengthMask {
    let dims = mask.dims;
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for c in 0..dims.width {
        for r in 0..dims.height {
            let v = mask.contains(r, c);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RunLengthMask { dims, counts }
}

pub fn rle_decode(rle: &RunLengthMask) -> BinaryMask {
    let dims = rle.dims;
    let h = dims.height;
    let mut idx = Vec::with_capacity(rle.area());
    let mut pos = 0usize;
    for (k, &c) in rle.counts.iter().enumerate() {
        let c = c as usize;
        if k % 2 == 1 {
            idx.extend((pos..pos + c).map(|cm| dims.index(cm % h, cm / h)));
        }
        pos += c;
    }
    BinaryMask::from_indices(dims, idx).expect("run lengths validated against dims")
}

/// Per-pixel instance labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    dims: GridDims,
    labels: Vec<u32>,
}

impl InstanceLabelMap {
    pub fn new(dims: GridDims, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::LengthMismatch { expected: dims.len(), found: labels.len() });
        }
        Ok(Self { dims, labels })
    }

    pub fn background(dims: GridDims) -> Self {
        Self { dims, labels: vec![0; dims.len()] }
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    #[inline]
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[self.dims.index(row, col)]
    }
}

/// How [`instances_to_labelmap`] treats pixels claimed by several masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    Error,
    LastWins,
}

/// Ordered masks over one grid with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSet {
    dims: GridDims,
    masks: Vec<BinaryMask>,
    ids: Vec<u64>,
}

impl InstanceSet {
    pub fn new(dims: GridDims) -> Self {
        Self { dims, masks: Vec::new(), ids: Vec::new() }
    }

    pub fn from_parts(dims: GridDims, items: impl IntoIterator<Item = (u64, BinaryMask)>) -> Result<Self> {
        let mut set = Self::new(dims);
        for (id, m) in items {
            set.push(id, m)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, id: u64, mask: BinaryMask) -> Result<()> {
        self.dims.check_same(&mask.dims)?;
        if self.ids.contains(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.ids.push(id);
        self.masks.push(mask);
        Ok(())
    }

    #[inline]
    pub fn dims(&self) -> GridDims {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &BinaryMask)> {
        self.ids.iter().copied().zip(&self.masks)
    }
}

/// One mask per distinct positive label, ids ascending.
pub fn labelmap_to_instances(lm: &InstanceLabelMap) -> InstanceSet {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in lm.labels.iter().enumerate() {
        if l != 0 {
            groups.entry(l).or_default().push(i);
        }
    }
    let mut set = InstanceSet::new(lm.dims);
    for (label, idx) in groups {
        let mask = BinaryMask::from_indices(lm.dims, idx).expect("indices in range");
        set.ids.push(u64::from(label));
        set.masks.push(mask);
    }
    set
}

pub fn instances_to_labelmap(set: &InstanceSet, policy: OverlapPolicy) -> Result<InstanceLabelMap> {
    let mut labels = vec![0u32; set.dims.len()];
    for (id, mask) in set.iter() {
        let label = u32::try_from(id).ok().filter(|&l| l != 0).ok_or(Error::InvalidLabel(id))?;
        for i in mask.indices() {
            if labels[i] != 0 && policy == OverlapPolicy::Error {
                return Err(Error::Overlap {
                    first: u64::from(labels[i]),
                    second: id,
                    pixel: set.dims.pixel(i),
                });
            }
            labels[i] = label;
        }
    }
    Ok(InstanceLabelMap { dims: set.dims, labels })
}
