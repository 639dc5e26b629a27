//! Sparse and dense kernels plus a matrix-free conjugate-gradient solver.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows. Panics on ragged input; meant for fixtures.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn frobenius_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Compressed sparse column view, used for `Aᵀ X` style products.
#[derive(Debug, Clone, PartialEq)]
struct Csc {
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

/// Sparse row-major (CSR) matrix of non-negative document features.
///
/// Column indices are strictly increasing within each row. A column-major
/// copy is built lazily the first time a transposed product is needed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMatrix {
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    #[serde(skip)]
    csc: OnceLock<Csc>,
}

impl PartialEq for FeatureMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n_cols == other.n_cols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
            && self.values == other.values
    }
}

impl FeatureMatrix {
    /// Builds a CSR matrix from raw arrays, validating its structure.
    pub fn from_csr(
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.first() != Some(&0) || row_ptr.last() != Some(&values.len()) {
            return Err(Error::InvalidArgument("malformed row offsets".into()));
        }
        if col_idx.len() != values.len() {
            return Err(Error::Dimension {
                expected: values.len(),
                got: col_idx.len(),
            });
        }
        for w in row_ptr.windows(2) {
            if w[0] > w[1] {
                return Err(Error::InvalidArgument("row offsets decrease".into()));
            }
            let cols = &col_idx[w[0]..w[1]];
            if cols.windows(2).any(|c| c[0] >= c[1]) {
                return Err(Error::InvalidArgument(
                    "column ids must be strictly increasing within a row".into(),
                ));
            }
            if cols.last().is_some_and(|&c| c as usize >= n_cols) {
                return Err(Error::InvalidArgument("column id out of range".into()));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        Ok(Self {
            n_cols,
            row_ptr,
            col_idx,
            values,
            csc: OnceLock::new(),
        })
    }

    /// Builds from per-row `(column, value)` lists, sorting each row and
    /// dropping explicit zeros.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in r {
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self::from_csr(n_cols, row_ptr, col_idx, values)
    }

    pub fn from_dense(m: &DenseMat) -> Self {
        let rows = (0..m.rows())
            .map(|i| {
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j as u32, v))
                    .collect()
            })
            .collect();
        Self::from_rows(m.cols(), rows).expect("dense matrix is finite")
    }

    pub fn to_dense(&self) -> DenseMat {
        let mut m = DenseMat::zeros(self.n_rows(), self.n_cols);
        for i in 0..self.n_rows() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m.set(i, c as usize, v);
            }
        }
        m
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &i in rows {
            let (c, v) = self.row(i);
            col_idx.extend_from_slice(c);
            values.extend_from_slice(v);
            row_ptr.push(values.len());
        }
        Self {
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
            csc: OnceLock::new(),
        }
    }

    fn csc(&self) -> &Csc {
        self.csc.get_or_init(|| {
            let mut counts = vec![0usize; self.n_cols + 1];
            for &c in &self.col_idx {
                counts[c as usize + 1] += 1;
            }
            for j in 0..self.n_cols {
                counts[j + 1] += counts[j];
            }
            let col_ptr = counts.clone();
            let mut next = counts;
            let mut row_idx = vec![0u32; self.nnz()];
            let mut values = vec![0.0; self.nnz()];
            for i in 0..self.n_rows() {
                let (cols, vals) = self.row(i);
                for (&c, &v) in cols.iter().zip(vals) {
                    let slot = next[c as usize];
                    row_idx[slot] = i as u32;
                    values[slot] = v;
                    next[c as usize] += 1;
                }
            }
            Csc {
                col_ptr,
                row_idx,
                values,
            }
        })
    }

    /// Row-wise products with a row-major `K × d` matrix: returns `X Wᵀ` (n × K).
    pub fn times_transpose(&self, w: &DenseMat) -> Result<DenseMat> {
        if w.cols() != self.n_cols {
            return Err(Error::Dimension {
                expected: self.n_cols,
                got: w.cols(),
            });
        }
        let k = w.rows();
        let d = self.n_cols;
        let mut out = DenseMat::zeros(self.n_rows(), k);
        if k == 0 {
            return Ok(out);
        }
        // d × K, so each nonzero reads K adjacent weights
        let mut wt = vec![0.0; d * k];
        for kk in 0..k {
            for (j, &v) in w.row(kk).iter().enumerate() {
                wt[j * k + kk] = v;
            }
        }
        par::for_each_block_mut(out.as_mut_slice(), par::ROW_CHUNK * k, |b, block| {
            let first = b * par::ROW_CHUNK;
            for (r, dst) in block.chunks_mut(k).enumerate() {
                let (cols, vals) = self.row(first + r);
                for (&c, &v) in cols.iter().zip(vals) {
                    let c = c as usize;
                    for (o, &wv) in dst.iter_mut().zip(&wt[c * k..(c + 1) * k]) {
                        *o += v * wv;
                    }
                }
            }
        });
        Ok(out)
    }

    /// `Aᵀ X` for a dense `n × K` matrix `A`, returned as `K × d`.
    ///
    /// Computed column by column through the CSC copy; each output entry is a
    /// sum over rows in ascending order.
    pub fn transpose_times(&self, a: &DenseMat) -> Result<DenseMat> {
        if a.rows() != self.n_rows() {
            return Err(Error::Dimension {
                expected: self.n_rows(),
                got: a.rows(),
            });
        }
        let k = a.cols();
        let d = self.n_cols;
        let csc = self.csc();
        // d × K, column j of X per row
        let mut t = vec![0.0; d * k];
        if k > 0 && d > 0 {
            const COL_CHUNK: usize = 512;
            par::for_each_block_mut(&mut t, COL_CHUNK * k, |b, block| {
                let first = b * COL_CHUNK;
                for (r, dst) in block.chunks_mut(k).enumerate() {
                    let j = first + r;
                    let (s, e) = (csc.col_ptr[j], csc.col_ptr[j + 1]);
                    for (&i, &v) in csc.row_idx[s..e].iter().zip(&csc.values[s..e]) {
                        let arow = a.row(i as usize);
                        for (o, &av) in dst.iter_mut().zip(arow) {
                            *o += av * v;
                        }
                    }
                }
            });
        }
        let mut out = DenseMat::zeros(k, d);
        for j in 0..d {
            for kk in 0..k {
                out.data[kk * d + j] = t[j * k + kk];
            }
        }
        Ok(out)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Sparse matrix times dense vector.
pub fn spmv(x: &FeatureMatrix, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != x.n_cols() {
        return Err(Error::Dimension {
            expected: x.n_cols(),
            got: v.len(),
        });
    }
    Ok(par::map_indices(x.n_rows(), |i| {
        let (cols, vals) = x.row(i);
        cols.iter().zip(vals).map(|(&c, &a)| a * v[c as usize]).sum()
    }))
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgResult {
    pub solution: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `A x = b` for a symmetric positive-definite operator given only
/// through `apply`.
///
/// Starts from `x = 0` and stops once `‖r‖ ≤ tol · max(1, ‖b‖)` or after
/// `max_iter` iterations. The iterate with the smallest residual seen is
/// returned. A zero right-hand side returns zero after 0 iterations.
pub fn cg_solve<F>(mut apply: F, b: &[f64], tol: f64, max_iter: usize) -> Result<CgResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("cg tolerance must be > 0, got {tol}")));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cg right-hand side"));
    }
    let m = b.len();
    let threshold = tol * norm2(b).max(1.0);
    let mut x = vec![0.0; m];
    let mut r = b.to_vec();
    let mut rr = dot(&r, &r);
    let mut best = (x.clone(), rr.sqrt());
    if rr.sqrt() <= threshold {
        return Ok(CgResult {
            solution: x,
            residual_norm: rr.sqrt(),
            iterations: 0,
            converged: true,
        });
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        let ap = apply(&p)?;
        if ap.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: ap.len(),
            });
        }
        let pap = dot(&p, &ap);
        if !pap.is_finite() || !(pap > 0.0) {
            return Err(Error::NonFinite("cg curvature (operator not positive definite?)"));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if !rr_new.is_finite() {
            return Err(Error::NonFinite("cg residual"));
        }
        let res = rr_new.sqrt();
        if res < best.1 {
            best = (x.clone(), res);
        }
        if res <= threshold {
            return Ok(CgResult {
                solution: x,
                residual_norm: res,
                iterations: it,
                converged: true,
            });
        }
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
    }
    Ok(CgResult {
        solution: best.0,
        residual_norm: best.1,
        iterations: max_iter,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_apply(a: &DenseMat) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + '_ {
        move |v: &[f64]| Ok((0..a.rows()).map(|i| dot(a.row(i), v)).collect())
    }

    #[test]
    fn spmv_examples() {
        let x = FeatureMatrix::from_dense(&DenseMat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]));
        assert_eq!(spmv(&x, &[3.0, 4.0]).unwrap(), vec![3.0, 8.0]);
        let z = FeatureMatrix::from_dense(&DenseMat::zeros(3, 2));
        assert_eq!(spmv(&z, &[5.0, -1.0]).unwrap(), vec![0.0; 3]);
        let x = FeatureMatrix::from_dense(&DenseMat::from_rows(&[vec![1.0, 2.0, 0.0]]));
        assert_eq!(spmv(&x, &[1.0, 1.0, 5.0]).unwrap(), vec![3.0]);
        assert!(matches!(spmv(&x, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cg_examples() {
        let r = cg_solve(|v| Ok(v.to_vec()), &[7.0, -2.0], 1e-10, 10).unwrap();
        assert_eq!(r.solution, vec![7.0, -2.0]);
        assert_eq!(r.iterations, 1);
        assert!(r.converged);

        let r = cg_solve(|v| Ok(vec![2.0 * v[0], 4.0 * v[1]]), &[2.0, 4.0], 1e-12, 10).unwrap();
        assert!((r.solution[0] - 1.0).abs() < 1e-12 && (r.solution[1] - 1.0).abs() < 1e-12);

        // [[4,1],[1,3]]^-1 [1,2] = [1/11, 7/11]
        let a = DenseMat::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let r = cg_solve(dense_apply(&a), &[1.0, 2.0], 1e-12, 10).unwrap();
        assert!((r.solution[0] - 1.0 / 11.0).abs() < 1e-10);
        assert!((r.solution[1] - 7.0 / 11.0).abs() < 1e-10);
    }

    #[test]
    fn cg_zero_rhs_is_exact_noop() {
        let r = cg_solve(|_| panic!("operator must not be called"), &[0.0; 4], 1e-4, 200).unwrap();
        assert_eq!(r.solution, vec![0.0; 4]);
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }

    #[test]
    fn cg_reports_non_convergence_and_errors() {
        let a = DenseMat::from_rows(&[vec![100.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.01]]);
        let r = cg_solve(dense_apply(&a), &[1.0, 1.0, 1.0], 1e-12, 1).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
        assert!(cg_solve(|v| Ok(vec![f64::NAN; v.len()]), &[1.0], 1e-4, 5).is_err());
        assert!(cg_solve(|v| Ok(vec![0.0; v.len()]), &[1.0], 1e-4, 5).is_err());
        assert!(cg_solve(|v| Ok(v.to_vec()), &[1.0], 0.0, 5).is_err());
    }

    #[test]
    fn transpose_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 600;
        let d = 700;
        let dense = DenseMat::from_vec(
            n,
            d,
            (0..n * d)
                .map(|_| if rng.random::<f64>() < 0.02 { rng.random::<f64>() } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let x = FeatureMatrix::from_dense(&dense);
        let w = DenseMat::from_vec(3, d, (0..3 * d).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let xw = x.times_transpose(&w).unwrap();
        for i in 0..n {
            for k in 0..3 {
                let expect = dot(dense.row(i), w.row(k));
                assert!((xw.get(i, k) - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
        let a = DenseMat::from_vec(n, 3, (0..n * 3).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let atx = x.transpose_times(&a).unwrap();
        for k in 0..3 {
            for j in 0..d {
                let expect: f64 = (0..n).map(|i| a.get(i, k) * dense.get(i, j)).sum();
                assert!((atx.get(k, j) - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn csr_validation() {
        assert!(FeatureMatrix::from_csr(2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(FeatureMatrix::from_csr(2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(FeatureMatrix::from_csr(2, vec![0, 1], vec![1], vec![f64::NAN]).is_err());
        let m = FeatureMatrix::from_csr(3, vec![0, 1, 1, 3], vec![2, 0, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.n_rows(), 3);
        let s = m.select_rows(&[2, 0]);
        assert_eq!(s.row(0), (&[0u32, 1][..], &[2.0, 3.0][..]));
        assert_eq!(s.row(1), (&[2u32][..], &[1.0][..]));
    }

    fn random_sparse(rng: &mut ChaCha8Rng, n: usize, d: usize, density: f64) -> DenseMat {
        let data = (0..n * d)
            .map(|_| if rng.random::<f64>() < density { rng.random_range(-3.0..3.0) } else { 0.0 })
            .collect();
        DenseMat::from_vec(n, d, data).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn spmv_matches_dense(seed in any::<u64>(), n in 1usize..40, d in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dense = random_sparse(&mut rng, n, d, 0.3);
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = spmv(&FeatureMatrix::from_dense(&dense), &v).unwrap();
            for i in 0..n {
                let expect = dot(dense.row(i), &v);
                let scale = dense.row(i).iter().zip(&v).map(|(a, b)| (a * b).abs()).sum::<f64>().max(1e-300);
                prop_assert!((got[i] - expect).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn cg_converges_within_dimension(seed in any::<u64>(), m in 1usize..=50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DenseMat::from_vec(m, m, (0..m * m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            // AᵀA + I; finite termination only survives rounding while κ stays moderate
            let mut spd = DenseMat::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    let v: f64 = (0..m).map(|k| a.get(k, i) * a.get(k, j)).sum();
                    spd.set(i, j, v + if i == j { 1.0 } else { 0.0 });
                }
            }
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tol = 1e-4;
            let r = cg_solve(dense_apply(&spd), &b, tol, m).unwrap();
            prop_assert!(r.converged, "residual {} after {} iters", r.residual_norm, r.iterations);
            prop_assert!(r.iterations <= m);
            prop_assert!(r.residual_norm <= tol * norm2(&b).max(1.0));
        }
    }
}
