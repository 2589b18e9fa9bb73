//! Spectral globalization of an edge map.
//!
//! The edge map is optionally block-max downsampled and turned into an
//! 8-connected graph with weights `exp(-max(e_p, e_q) / sigma)`. The smallest
//! nontrivial eigenpairs of the normalized Laplacian are found with Lanczos
//! (full reorthogonalization, trivial eigenvector deflated) on
//! `D^-1/2 W D^-1/2`. The globalized edge is `sum_k |grad v_k| / sqrt(lambda_k)`
//! over generalized eigenvectors `v_k`, upsampled by nearest neighbour and
//! divided by its maximum.

use crate::affinity::EdgeMap;
use crate::error::{Error, Result};
use crate::mask::GridDims;
use crate::scalar::Real;
use crate::seed::Stream;

const START_SEED: u64 = 0x6c61_6e63_7a6f_7321;
const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParams {
    pub n_eigvecs: usize,
    pub downsample: usize,
    pub sigma: f64,
    /// Lanczos step cap.
    pub max_iter: usize,
    /// Residual bound `beta_m |s_m|` for accepting a Ritz pair.
    pub tol: f64,
}

impl SpectralParams {
    pub fn new(n_eigvecs: usize, downsample: usize, sigma: f64) -> Self {
        Self { n_eigvecs, downsample, sigma, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.n_eigvecs == 0 {
            return Err(Error::param("n_eigvecs must be at least 1"));
        }
        if self.downsample == 0 {
            return Err(Error::param("downsample must be at least 1"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::OutOfRange { what: "sigma", value: self.sigma });
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::OutOfRange { what: "lanczos tolerance", value: self.tol });
        }
        Ok(())
    }
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self { n_eigvecs: 4, downsample: 1, sigma: 0.1, max_iter: 1000, tol: 1e-9 }
    }
}

/// Smallest nontrivial eigenpairs of the normalized Laplacian on the coarse
/// grid. `values` ascend; `vectors[k]` is the generalized eigenvector
/// (`u / sqrt(d)`) for `values[k]`.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub dims: GridDims,
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
}

struct Graph {
    /// CSR over nodes; values are `w_ij / sqrt(d_i d_j)`.
    start: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
    sqrt_d: Vec<f64>,
}

impl Graph {
    fn build(dims: GridDims, e: &[f64], sigma: f64) -> Self {
        let n = dims.len();
        let mut start = Vec::with_capacity(n + 1);
        let mut col = Vec::with_capacity(n * 8);
        let mut w = Vec::with_capacity(n * 8);
        let mut d = vec![0.0; n];
        start.push(0);
        for i in 0..n {
            let (r, c) = dims.pixel(i);
            for (dr, dc) in crate::mask::OFFSETS8 {
                if let Some((nr, nc)) = dims.offset(r, c, dr, dc) {
                    let j = dims.index(nr, nc);
                    let wij = (-e[i].max(e[j]) / sigma).exp().max(f64::MIN_POSITIVE);
                    col.push(j);
                    w.push(wij);
                    d[i] += wij;
                }
            }
            start.push(col.len());
        }
        let sqrt_d: Vec<f64> = d.iter().map(|x| x.sqrt()).collect();
        let val = (0..n)
            .flat_map(|i| (start[i]..start[i + 1]).map(move |k| (i, k)))
            .map(|(i, k)| w[k] / (sqrt_d[i] * sqrt_d[col[k]]))
            .collect();
        Self { start, col, val, sqrt_d }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (self.start[i]..self.start[i + 1]).map(|k| self.val[k] * x[self.col[k]]).sum();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = dot(x, x).sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

/// Implicit QL on a symmetric tridiagonal matrix (`d` diagonal, `e[i]` the
/// entry between `i` and `i + 1`). Each row of `z` is rotated along with the
/// eigenvectors, so passing identity rows yields those rows of the
/// eigenvector matrix. Returns `false` if an eigenvalue fails to converge.
fn tql(d: &mut [f64], e: &mut [f64], z: &mut [Vec<f64>]) -> bool {
    let n = d.len();
    if n == 0 {
        return true;
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return false;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.iter_mut() {
                    let f = row[i + 1];
                    row[i + 1] = s * row[i] + c * f;
                    row[i] = c * row[i] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    true
}

fn identity_rows(m: usize, rows: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
    rows.map(|r| {
        let mut v = vec![0.0; m];
        v[r] = 1.0;
        v
    })
    .collect()
}

/// Indices of the `k` largest values, largest first.
fn top_k(vals: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn downsample(edge: &[f64], dims: GridDims, f: usize) -> Result<(GridDims, Vec<f64>)> {
    let (h, w) = (dims.height().div_ceil(f), dims.width().div_ceil(f));
    if h < 2 || w < 2 {
        return Err(Error::param(format!("downsampled grid {h}x{w} is smaller than 2x2")));
    }
    let coarse = GridDims::new(h, w)?;
    let mut out = vec![0.0f64; coarse.len()];
    for (i, &v) in edge.iter().enumerate() {
        let (r, c) = dims.pixel(i);
        let k = coarse.index(r / f, c / f);
        out[k] = out[k].max(v);
    }
    Ok((coarse, out))
}

pub fn spectral_eigenpairs<T: Real>(edge: &EdgeMap<T>, params: &SpectralParams) -> Result<Eigenpairs> {
    params.validate()?;
    let fine: Vec<f64> = edge.as_slice().iter().map(|x| x.as_f64()).collect();
    let (dims, coarse) = downsample(&fine, edge.dims(), params.downsample)?;
    eigenpairs_on(dims, &coarse, params)
}

fn eigenpairs_on(dims: GridDims, e: &[f64], params: &SpectralParams) -> Result<Eigenpairs> {
    let n = dims.len();
    let g = Graph::build(dims, e, params.sigma);
    let k = params.n_eigvecs.min(n - 1);

    let mut u0 = g.sqrt_d.clone();
    normalize(&mut u0);
    let mut q = {
        let mut s = Stream::new(START_SEED);
        (0..n).map(|_| s.unit() - 0.5).collect::<Vec<_>>()
    };
    axpy(-dot(&u0, &q), &u0, &mut q);
    normalize(&mut q);

    let cap = params.max_iter.min(n - 1).max(1);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut residual = f64::INFINITY;
    loop {
        let j = alpha.len();
        g.apply(&basis[j], &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        let a = dot(&basis[j], &w);
        axpy(-a, &basis[j], &mut w);
        alpha.push(a);
        for _ in 0..2 {
            axpy(-dot(&u0, &w), &u0, &mut w);
            for v in &basis {
                axpy(-dot(v, &w), v, &mut w);
            }
        }
        let b = dot(&w, &w).sqrt();
        let m = alpha.len();
        let invariant = b <= 1e-10;
        let at_cap = m >= cap;
        if m >= k && (invariant || at_cap || m % 10 == 0) {
            // residuals of the top Ritz pairs from the last row of S
            let (mut d, mut off) = (alpha.clone(), beta.clone());
            off.push(0.0);
            let mut last = identity_rows(m, std::iter::once(m - 1));
            if !tql(&mut d, &mut off, &mut last) {
                return Err(Error::NotConverged { iterations: m, residual: f64::NAN });
            }
            residual = if invariant { 0.0 } else { top_k(&d, k).iter().map(|&i| b * last[0][i].abs()).fold(0.0, f64::max) };
            if residual <= params.tol {
                return finish(dims, &g, &basis, &alpha, &beta, k, m);
            }
            if at_cap {
                return Err(Error::NotConverged { iterations: m, residual });
            }
        } else if invariant || at_cap {
            // Krylov space exhausted before k pairs exist
            return Err(Error::NotConverged { iterations: m, residual });
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(std::mem::replace(&mut w, vec![0.0; n]));
    }
}

fn finish(dims: GridDims, g: &Graph, basis: &[Vec<f64>], alpha: &[f64], beta: &[f64], k: usize, m: usize) -> Result<Eigenpairs> {
    let mut d = alpha.to_vec();
    let mut off = beta[..m - 1].to_vec();
    off.push(0.0);
    let mut z = identity_rows(m, 0..m);
    if !tql(&mut d, &mut off, &mut z) {
        return Err(Error::NotConverged { iterations: m, residual: f64::NAN });
    }
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for i in top_k(&d, k) {
        let mut u = vec![0.0; dims.len()];
        for (row, qv) in basis.iter().take(m).enumerate() {
            axpy(z[row][i], qv, &mut u);
        }
        let v = u.iter().zip(&g.sqrt_d).map(|(x, s)| x / s).collect();
        values.push((1.0 - d[i]).max(0.0));
        vectors.push(v);
    }
    Ok(Eigenpairs { dims, values, vectors, iterations: m })
}

/// Magnitude of the central-difference gradient (one-sided at the border).
fn gradient_magnitude(dims: GridDims, v: &[f64]) -> Vec<f64> {
    let diff = |lo: f64, hi: f64, span: usize| if span == 0 { 0.0 } else { (hi - lo) / span as f64 };
    (0..dims.len())
        .map(|i| {
            let (r, c) = dims.pixel(i);
            let (r0, r1) = (r.saturating_sub(1), (r + 1).min(dims.height() - 1));
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(dims.width() - 1));
            let gr = diff(v[dims.index(r0, c)], v[dims.index(r1, c)], r1 - r0);
            let gc = diff(v[dims.index(r, c0)], v[dims.index(r, c1)], c1 - c0);
            gr.hypot(gc)
        })
        .collect()
}

pub fn spectral_globalize<T: Real>(edge: &EdgeMap<T>, n_eigvecs: usize, downsample: usize, sigma: f64) -> Result<EdgeMap<T>> {
    spectral_globalize_with(edge, &SpectralParams::new(n_eigvecs, downsample, sigma))
}

/// A coarse grid with a constant edge value carries no contour, so the
/// result is all zeros without an eigensolve.
pub fn spectral_globalize_with<T: Real>(edge: &EdgeMap<T>, params: &SpectralParams) -> Result<EdgeMap<T>> {
    params.validate()?;
    let fine_dims = edge.dims();
    let fine: Vec<f64> = edge.as_slice().iter().map(|x| x.as_f64()).collect();
    let (dims, coarse) = downsample(&fine, fine_dims, params.downsample)?;
    let (lo, hi) = coarse.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if hi - lo == 0.0 {
        return EdgeMap::constant(fine_dims, T::zero());
    }
    let eig = eigenpairs_on(dims, &coarse, params)?;
    let mut acc = vec![0.0; dims.len()];
    for (lambda, v) in eig.values.iter().zip(&eig.vectors) {
        let scale = 1.0 / lambda.max(LAMBDA_FLOOR).sqrt();
        for (a, gm) in acc.iter_mut().zip(gradient_magnitude(dims, v)) {
            *a += scale * gm;
        }
    }
    let max = acc.iter().copied().fold(0.0, f64::max);
    let f = params.downsample;
    EdgeMap::from_fn(fine_dims, |r, c| {
        let x = acc[dims.index(r / f, c / f)];
        T::lit(if max > 0.0 { (x / max).clamp(0.0, 1.0) } else { 0.0 })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_halves() -> EdgeMap<f64> {
        let d = GridDims::new(8, 8).unwrap();
        EdgeMap::from_fn(d, |_, c| if c == 4 { 1.0 } else { 0.0 }).unwrap()
    }

    /// Dense normalized Laplacian eigenvalues (trivial one dropped), ascending.
    fn dense_oracle(dims: GridDims, e: &[f64], sigma: f64) -> Vec<f64> {
        let n = dims.len();
        let mut w = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (dims.pixel(i), dims.pixel(j));
                let cheb = (a.0 as isize - b.0 as isize).abs().max((a.1 as isize - b.1 as isize).abs());
                if cheb == 1 {
                    w[(i, j)] = (-e[i].max(e[j]) / sigma).exp();
                }
            }
        }
        let d: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
        let l = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - w[(i, j)] / (d[i] * d[j]).sqrt()
        });
        let mut vals: Vec<f64> = nalgebra::SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        vals.remove(0);
        vals
    }

    #[test]
    fn tql_matches_dense_solver() {
        let a = [2.0, -1.0, 0.5, 3.0, 1.0];
        let b = [0.7, 0.3, -1.2, 0.4];
        let t = nalgebra::DMatrix::from_fn(5, 5, |i, j| {
            if i == j {
                a[i]
            } else if i + 1 == j {
                b[i]
            } else if j + 1 == i {
                b[j]
            } else {
                0.0
            }
        });
        let mut expected: Vec<f64> = nalgebra::SymmetricEigen::new(t.clone()).eigenvalues.iter().copied().collect();
        expected.sort_by(f64::total_cmp);
        let (mut d, mut e) = (a.to_vec(), b.to_vec());
        e.push(0.0);
        let mut z = identity_rows(5, 0..5);
        assert!(tql(&mut d, &mut e, &mut z));
        for k in 0..5 {
            let v = nalgebra::DVector::from_fn(5, |r, _| z[r][k]);
            assert!((&t * &v - d[k] * &v).norm() < 1e-12);
        }
        d.sort_by(f64::total_cmp);
        for (x, y) in d.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvalues_match_dense_oracle() {
        let e = two_halves();
        let params = SpectralParams::new(4, 1, 0.1);
        let eig = spectral_eigenpairs(&e, &params).unwrap();
        let oracle = dense_oracle(e.dims(), e.as_slice(), 0.1);
        assert_eq!(eig.values.len(), 4);
        for (x, y) in eig.values.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }

        let mut s = Stream::new(5);
        let d = GridDims::new(9, 7).unwrap();
        let rnd = EdgeMap::<f64>::from_fn(d, |_, _| s.unit()).unwrap();
        let eig = spectral_eigenpairs(&rnd, &SpectralParams::new(3, 1, 0.3)).unwrap();
        let oracle = dense_oracle(d, rnd.as_slice(), 0.3);
        for (x, y) in eig.values.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn split_column_is_row_maximum() {
        let g = spectral_globalize(&two_halves(), 4, 1, 0.1).unwrap();
        for r in 0..8 {
            let row: Vec<f64> = (0..8).map(|c| g.get(r, c)).collect();
            let best = (0..8).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(best, 4, "row {r}: {row:?}");
        }
        // a single eigenvector already places every row maximum on the split
        let g1 = spectral_globalize(&two_halves(), 1, 1, 0.1).unwrap();
        for r in 0..8 {
            assert!((0..8).filter(|&c| c != 4).all(|c| g1.get(r, c) < g1.get(r, 4)));
        }
    }

    #[test]
    fn constant_map_is_zero() {
        let d = GridDims::new(6, 5).unwrap();
        for v in [0.0, 0.3, 1.0] {
            let g = spectral_globalize(&EdgeMap::<f64>::constant(d, v).unwrap(), 2, 1, 0.1).unwrap();
            assert!(g.as_slice().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn output_in_unit_range() {
        for seed in 0..5 {
            let mut s = Stream::new(seed);
            let d = GridDims::new(13, 11).unwrap();
            let e = EdgeMap::<f32>::from_fn(d, |_, _| s.unit() as f32).unwrap();
            let g = spectral_globalize(&e, 3, 2, 0.2).unwrap();
            assert!(g.as_slice().iter().all(|x| (0.0..=1.0).contains(x)));
            assert!(g.as_slice().contains(&1.0));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let e = two_halves();
        assert!(spectral_globalize(&e, 0, 1, 0.1).is_err());
        assert!(spectral_globalize(&e, 2, 0, 0.1).is_err());
        assert!(spectral_globalize(&e, 2, 8, 0.1).is_err());
        assert!(spectral_globalize(&e, 2, 1, 0.0).is_err());
        let capped = SpectralParams { max_iter: 3, ..SpectralParams::new(2, 1, 0.1) };
        assert!(matches!(spectral_globalize_with(&e, &capped), Err(Error::NotConverged { .. })));
    }
}
