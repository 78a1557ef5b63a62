//! Dense linear-algebra helpers on top of nalgebra: ordered symmetric
//! eigen-decompositions, SPD square roots and inverses, and a seeded
//! randomized truncated SVD for the `m x n` matrices that appear in
//! initialization.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::hypergraph::IncidenceMatrix;
use crate::rng;
use crate::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Each eigenvector is oriented so that its first entry of
/// non-negligible magnitude is positive.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let k = a.nrows();
        let sym = (a + a.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        // ties keep the solver's index order
        order.sort_by(|&x, &y| {
            eig.eigenvalues[y]
                .total_cmp(&eig.eigenvalues[x])
                .then(x.cmp(&y))
        });
        let values = DVector::from_iterator(k, order.iter().map(|&c| eig.eigenvalues[c]));
        let mut vectors = DMatrix::zeros(k, k);
        for (dst, &src) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(src).into_owned();
            let scale = v.amax();
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
                if *first < 0.0 {
                    v.neg_mut();
                }
            }
            vectors.set_column(dst, &v);
        }
        Self { values, vectors }
    }

    /// Smallest relative gap between consecutive eigenvalues.
    pub fn min_relative_gap(&self) -> f64 {
        let scale = self
            .values
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        self.values
            .as_slice()
            .windows(2)
            .map(|w| (w[0] - w[1]) / scale)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Principal square root of a symmetric positive definite matrix.
pub fn spd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power(a, 0.5)
}

/// `a^p` for symmetric positive definite `a`.
pub fn spd_power(a: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    let e = SymEigen::new(a);
    let top = e.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-13 * top.max(f64::MIN_POSITIVE);
    if e.values.iter().any(|&v| v <= floor) || top == 0.0 {
        return Err(Error::RankDeficient(format!(
            "matrix is not positive definite (eigenvalues {:?})",
            e.values.as_slice()
        )));
    }
    let d = DMatrix::from_diagonal(&e.values.map(|v| v.powf(p)));
    Ok(&e.vectors * d * e.vectors.transpose())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let inv = sym.cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    Some(a.clone().cholesky()?.solve(b))
}

/// Linear operator interface used by the randomized SVD.
pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A x`
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    /// `A^T x`
    fn apply_t(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self * x
    }
    fn apply_t(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.tr_mul(x)
    }
}

impl LinearOperator for IncidenceMatrix {
    fn nrows(&self) -> usize {
        self.m()
    }
    fn ncols(&self) -> usize {
        self.n()
    }
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.m(), x.ncols());
        for c in 0..x.ncols() {
            for j in 0..self.m() {
                out[(j, c)] = self.row(j).iter().map(|&i| x[(i as usize, c)]).sum();
            }
        }
        out
    }
    fn apply_t(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.n() {
                out[(i, c)] = self.col(i).iter().map(|&j| x[(j as usize, c)]).sum();
            }
        }
        out
    }
}

/// Leading singular triplets, singular values in descending order.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Randomized range-finder SVD (Gaussian sketch, subspace iteration with
/// re-orthonormalisation). Exact up to rounding when `rank + oversampling`
/// reaches `min(m, n)`.
pub fn truncated_svd<A: LinearOperator>(a: &A, rank: usize, seed: u64) -> Result<TruncatedSvd> {
    const OVERSAMPLE: usize = 10;
    const POWER_ITERS: usize = 6;
    let (m, n) = (a.nrows(), a.ncols());
    let full = m.min(n);
    if rank == 0 || full == 0 {
        return Ok(TruncatedSvd {
            u: DMatrix::zeros(m, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        });
    }
    let rank = rank.min(full);
    let width = (rank + OVERSAMPLE).min(full);

    let mut r = rng::rng(seed);
    let omega = DMatrix::from_fn(n, width, |_, _| StandardNormal.sample(&mut r));
    let mut y = a.apply(&omega);
    for _ in 0..POWER_ITERS {
        let q = y.qr().q();
        let w = a.apply_t(&q).qr().q();
        y = a.apply(&w);
    }
    let q = y.qr().q();
    let b = a.apply_t(&q).transpose();
    let svd = b.svd(true, true);
    let (ub, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(v)) => (u, v),
        _ => {
            return Err(Error::Numerical(
                "SVD did not return singular vectors".into(),
            ))
        }
    };
    if svd.singular_values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite singular values".into()));
    }
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    order.truncate(rank);

    let u_full = &q * &ub;
    let mut u = DMatrix::zeros(m, rank);
    let mut v = DMatrix::zeros(n, rank);
    let mut s = DVector::zeros(rank);
    for (dst, &src) in order.iter().enumerate() {
        let mut uc = u_full.column(src).into_owned();
        let mut vc = vt.row(src).transpose();
        // orient by the right singular vector
        let scale = vc.amax();
        if let Some(first) = vc.iter().find(|x| x.abs() > 1e-12 * scale) {
            if *first < 0.0 {
                uc.neg_mut();
                vc.neg_mut();
            }
        }
        u.set_column(dst, &uc);
        v.set_column(dst, &vc);
        s[dst] = svd.singular_values[src];
    }
    Ok(TruncatedSvd { u, s, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_sorted_descending_and_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 3.0, 0.1, 0.0, 0.1, 1.0]);
        let e = SymEigen::new(&a);
        assert!(e.values[0] > e.values[1] && e.values[1] > e.values[2]);
        let rec = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert_relative_eq!(rec, a, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = spd_sqrt(&a).unwrap();
        assert_relative_eq!(&s * &s, a, epsilon = 1e-12);
        assert!(spd_sqrt(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn randomized_svd_matches_dense_svd() {
        let mut r = rng::rng(3);
        let mut noise = |_: usize, _: usize| -> f64 { StandardNormal.sample(&mut r) };
        let low = DMatrix::from_fn(40, 3, &mut noise) * DMatrix::from_fn(3, 25, &mut noise);
        let a = low * 4.0 + DMatrix::from_fn(40, 25, &mut noise) * 0.1;
        let t = truncated_svd(&a, 3, 9).unwrap();
        let mut dense: Vec<f64> = a
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .collect();
        dense.sort_by(|x, y| y.total_cmp(x));
        for k in 0..3 {
            assert_relative_eq!(t.s[k], dense[k], epsilon = 1e-8);
            let av = &a * t.v.column(k);
            assert_relative_eq!(av, t.u.column(k) * t.s[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn randomized_svd_is_exact_when_sketch_covers_rank() {
        let a = DMatrix::from_fn(12, 8, |r, c| {
            ((r * 7 + c * 3) % 5) as f64 - 1.5 + (r == c) as u8 as f64
        });
        let t = truncated_svd(&a, 8, 1).unwrap();
        let rec = &t.u * DMatrix::from_diagonal(&t.s) * t.v.transpose();
        assert_relative_eq!(rec, a, epsilon = 1e-10);
    }

    #[test]
    fn incidence_operator_agrees_with_dense() {
        let y = IncidenceMatrix::from_fn(7, 5, |j, i| (i + 2 * j) % 3 == 0);
        let d = DMatrix::from_fn(7, 5, |j, i| if y.get(j, i) { 1.0 } else { 0.0 });
        let x = DMatrix::from_fn(5, 2, |i, c| (i as f64) - c as f64);
        assert_eq!(y.apply(&x), &d * &x);
        let w = DMatrix::from_fn(7, 2, |j, c| (j * c) as f64 + 0.5);
        assert_eq!(y.apply_t(&w), d.tr_mul(&w));
    }
}
