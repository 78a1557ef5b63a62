//! Probability model, log-likelihood and its derivatives, the identifiability
//! penalty, and the transform to canonical embedding coordinates.
//!
//! Two parameterizations are carried:
//!
//! * [`ModelParams`]: `(beta, alpha, F, Z)` with `sum(alpha) = 0` and
//!   column-centered `F`;
//! * [`UncenteredParams`]: `(alpha_dagger, F, Z)` with
//!   `alpha_dagger_i = beta + alpha_i`.
//!
//! In both, `theta_ji = alpha_dagger_i + f_j^T z_i` and
//! `p_ji = sigmoid(theta_ji)`. Hyperlink `j` is a vector of independent
//! Bernoulli(`p_ji`) memberships.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::hypergraph::IncidenceMatrix;
use crate::linalg::{spd_sqrt, SymEigen};
use crate::{Error, Result};

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))`.
#[inline]
pub fn log1pexp(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `log sigmoid(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -log1pexp(-x)
}

/// Derivative of the logistic function, `sigmoid(x) * sigmoid(-x)`.
#[inline]
pub fn sigmoid_prime(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Centered parameterization `(beta, alpha, F, Z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CenteredRepr", try_from = "CenteredRepr")]
pub struct ModelParams {
    pub beta: f64,
    pub alpha: DVector<f64>,
    pub f: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

/// Uncentered parameterization `(alpha_dagger, F, Z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "UncenteredRepr", try_from = "UncenteredRepr")]
pub struct UncenteredParams {
    pub alpha_dagger: DVector<f64>,
    pub f: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl ModelParams {
    pub fn new(beta: f64, alpha: DVector<f64>, f: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        check_shapes(alpha.len(), &f, &z)?;
        Ok(Self { beta, alpha, f, z })
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn m(&self) -> usize {
        self.f.nrows()
    }

    pub fn to_uncentered(&self) -> UncenteredParams {
        UncenteredParams {
            alpha_dagger: self.alpha.add_scalar(self.beta),
            f: self.f.clone(),
            z: self.z.clone(),
        }
    }

    /// `beta 1 1^T + 1 alpha^T + F Z^T`
    pub fn theta_matrix(&self) -> DMatrix<f64> {
        self.to_uncentered().theta_matrix()
    }
}

impl UncenteredParams {
    pub fn new(alpha_dagger: DVector<f64>, f: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        check_shapes(alpha_dagger.len(), &f, &z)?;
        Ok(Self { alpha_dagger, f, z })
    }

    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        Self {
            alpha_dagger: DVector::zeros(n),
            f: DMatrix::zeros(m, k),
            z: DMatrix::zeros(n, k),
        }
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn m(&self) -> usize {
        self.f.nrows()
    }

    /// `beta = mean(alpha_dagger)`, `alpha = alpha_dagger - beta`.
    pub fn to_centered(&self) -> ModelParams {
        let n = self.n().max(1) as f64;
        let beta = self.alpha_dagger.sum() / n;
        ModelParams {
            beta,
            alpha: self.alpha_dagger.add_scalar(-beta),
            f: self.f.clone(),
            z: self.z.clone(),
        }
    }

    #[inline]
    pub fn theta(&self, j: usize, i: usize) -> f64 {
        let mut t = self.alpha_dagger[i];
        for k in 0..self.k() {
            t += self.f[(j, k)] * self.z[(i, k)];
        }
        t
    }

    pub fn prob(&self, j: usize, i: usize) -> f64 {
        sigmoid(self.theta(j, i))
    }

    pub fn theta_matrix(&self) -> DMatrix<f64> {
        let mut t = &self.f * self.z.transpose();
        for (i, mut col) in t.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.alpha_dagger[i]);
        }
        t
    }

    /// `log P(y_j = indicator(e))` for a zero-based vertex subset `e`.
    pub fn hyperlink_log_probability(&self, j: usize, e: &[usize]) -> f64 {
        let mut member = vec![false; self.n()];
        for &i in e {
            member[i] = true;
        }
        (0..self.n())
            .map(|i| {
                let t = self.theta(j, i);
                if member[i] {
                    log_sigmoid(t)
                } else {
                    log_sigmoid(-t)
                }
            })
            .sum()
    }

    /// `prod_{i in e} p_ji * prod_{i not in e} (1 - p_ji)`.
    pub fn hyperlink_probability(&self, j: usize, e: &[usize]) -> f64 {
        self.hyperlink_log_probability(j, e).exp()
    }

    /// Flip embedding columns jointly (see [`sign_align`]).
    pub fn sign_aligned(&self, reference: Option<&DMatrix<f64>>) -> Self {
        let (f, z, _) = sign_align(&self.f, &self.z, reference);
        Self {
            alpha_dagger: self.alpha_dagger.clone(),
            f,
            z,
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.alpha_dagger.iter().all(|x| x.is_finite())
            && self.f.iter().all(|x| x.is_finite())
            && self.z.iter().all(|x| x.is_finite())
    }

    fn check_against(&self, y: &IncidenceMatrix) -> Result<()> {
        if y.m() != self.m() || y.n() != self.n() {
            return Err(Error::dims(format!(
                "incidence is {}x{} but parameters are {}x{}",
                y.m(),
                y.n(),
                self.m(),
                self.n()
            )));
        }
        Ok(())
    }
}

fn check_shapes(n_alpha: usize, f: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
    if z.nrows() != n_alpha {
        return Err(Error::dims(format!(
            "alpha has length {n_alpha} but Z has {} rows",
            z.nrows()
        )));
    }
    if f.ncols() != z.ncols() {
        return Err(Error::dims(format!(
            "F has {} columns but Z has {}",
            f.ncols(),
            z.ncols()
        )));
    }
    Ok(())
}

// Row-major JSON representations.

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], k: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().position(|r| r.len() != k) {
        return Err(Error::dims(format!(
            "{what} row {} has length {} (K = {k})",
            bad + 1,
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), k, |r, c| rows[r][c]))
}

#[derive(Serialize, Deserialize)]
struct CenteredRepr {
    beta: f64,
    alpha: Vec<f64>,
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    #[serde(rename = "Z")]
    z: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    k: usize,
}

impl From<ModelParams> for CenteredRepr {
    fn from(p: ModelParams) -> Self {
        Self {
            beta: p.beta,
            alpha: p.alpha.iter().copied().collect(),
            f: rows_of(&p.f),
            z: rows_of(&p.z),
            k: p.k(),
        }
    }
}

impl TryFrom<CenteredRepr> for ModelParams {
    type Error = Error;
    fn try_from(r: CenteredRepr) -> Result<Self> {
        ModelParams::new(
            r.beta,
            DVector::from_vec(r.alpha),
            from_rows(&r.f, r.k, "F")?,
            from_rows(&r.z, r.k, "Z")?,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct UncenteredRepr {
    alpha_dagger: Vec<f64>,
    #[serde(rename = "F")]
    f: Vec<Vec<f64>>,
    #[serde(rename = "Z")]
    z: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    k: usize,
}

impl From<UncenteredParams> for UncenteredRepr {
    fn from(p: UncenteredParams) -> Self {
        Self {
            alpha_dagger: p.alpha_dagger.iter().copied().collect(),
            f: rows_of(&p.f),
            z: rows_of(&p.z),
            k: p.k(),
        }
    }
}

impl TryFrom<UncenteredRepr> for UncenteredParams {
    type Error = Error;
    fn try_from(r: UncenteredRepr) -> Result<Self> {
        UncenteredParams::new(
            DVector::from_vec(r.alpha_dagger),
            from_rows(&r.f, r.k, "F")?,
            from_rows(&r.z, r.k, "Z")?,
        )
    }
}

/// Row-major copies of the embeddings for the hot loops.
pub(crate) struct Dense<'a> {
    pub a: &'a [f64],
    pub f: Vec<f64>,
    pub z: Vec<f64>,
    pub k: usize,
}

impl<'a> Dense<'a> {
    pub fn new(p: &'a UncenteredParams) -> Self {
        let k = p.k();
        let row_major = |x: &DMatrix<f64>| {
            let mut v = Vec::with_capacity(x.len());
            for r in 0..x.nrows() {
                for c in 0..k {
                    v.push(x[(r, c)]);
                }
            }
            v
        };
        Self {
            a: p.alpha_dagger.as_slice(),
            f: row_major(&p.f),
            z: row_major(&p.z),
            k,
        }
    }

    #[inline]
    pub fn f_row(&self, j: usize) -> &[f64] {
        &self.f[j * self.k..(j + 1) * self.k]
    }

    #[inline]
    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub fn theta(&self, j: usize, i: usize) -> f64 {
        let fj = self.f_row(j);
        let zi = self.z_row(i);
        let mut t = self.a[i];
        for k in 0..self.k {
            t += fj[k] * zi[k];
        }
        t
    }
}

/// `sum_ji { y_ji theta_ji - log(1 + exp(theta_ji)) }`.
pub fn log_likelihood(params: &UncenteredParams, y: &IncidenceMatrix, exec: Exec) -> Result<f64> {
    params.check_against(y)?;
    let d = Dense::new(params);
    let n = params.n();
    Ok(exec.sum(params.m(), |j| {
        let mut s = 0.0;
        for i in 0..n {
            s -= log1pexp(d.theta(j, i));
        }
        for &i in y.row(j) {
            s += d.theta(j, i as usize);
        }
        s
    }))
}

/// Gradient of the log-likelihood in the uncentered parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub alpha_dagger: DVector<f64>,
    pub z: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

/// Residual-form gradient with `R = Y - P`:
/// `d/d alpha_dagger_i = sum_j R_ji`, `d/d z_i = sum_j R_ji f_j`,
/// `d/d f_j = sum_i R_ji z_i`.
pub fn gradient(params: &UncenteredParams, y: &IncidenceMatrix, exec: Exec) -> Result<Gradient> {
    params.check_against(y)?;
    let k = params.k();
    let vb = vertex_blocks(params, y, exec, false);
    let lb = link_blocks(params, y, exec, false);
    Ok(Gradient {
        alpha_dagger: DVector::from_iterator(params.n(), vb.iter().map(|b| b.grad[0])),
        z: DMatrix::from_fn(params.n(), k, |i, c| vb[i].grad[1 + c]),
        f: DMatrix::from_fn(params.m(), k, |j, c| lb[j].grad[c]),
    })
}

/// Gradient and (optionally) Fisher information of the log-likelihood for one
/// row block: `nu_i = (alpha_dagger_i, z_i)` or `f_j`. `hess` is a dense
/// row-major `dim x dim` matrix, empty when not requested.
#[derive(Debug, Clone)]
pub(crate) struct BlockDerivs {
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

/// Per-vertex blocks over `q_j = (1, f_j)`:
/// gradient `sum_j R_ji q_j`, information `sum_j s'(theta_ji) q_j q_j^T`.
pub(crate) fn vertex_blocks(
    params: &UncenteredParams,
    y: &IncidenceMatrix,
    exec: Exec,
    with_hessian: bool,
) -> Vec<BlockDerivs> {
    let d = Dense::new(params);
    let (m, k) = (params.m(), params.k());
    let dim = k + 1;
    exec.map(params.n(), |i| {
        let mut grad = vec![0.0; dim];
        let mut hess = if with_hessian {
            vec![0.0; dim * dim]
        } else {
            Vec::new()
        };
        let zi = d.z_row(i);
        let mut q = vec![1.0; dim];
        for j in 0..m {
            let fj = d.f_row(j);
            let mut t = d.a[i];
            for c in 0..k {
                t += fj[c] * zi[c];
            }
            let p = sigmoid(t);
            q[1..].copy_from_slice(fj);
            for c in 0..dim {
                grad[c] -= p * q[c];
            }
            if with_hessian {
                let w = p * (1.0 - p);
                for r in 0..dim {
                    let wr = w * q[r];
                    for c in 0..=r {
                        hess[r * dim + c] += wr * q[c];
                    }
                }
            }
        }
        for &j in y.col(i) {
            grad[0] += 1.0;
            for (c, v) in d.f_row(j as usize).iter().enumerate() {
                grad[1 + c] += v;
            }
        }
        if with_hessian {
            symmetrize(&mut hess, dim);
        }
        BlockDerivs { grad, hess }
    })
}

/// Per-hyperlink blocks: gradient `sum_i R_ji z_i`, information
/// `sum_i s'(theta_ji) z_i z_i^T`.
pub(crate) fn link_blocks(
    params: &UncenteredParams,
    y: &IncidenceMatrix,
    exec: Exec,
    with_hessian: bool,
) -> Vec<BlockDerivs> {
    let d = Dense::new(params);
    let (n, k) = (params.n(), params.k());
    exec.map(params.m(), |j| {
        let mut grad = vec![0.0; k];
        let mut hess = if with_hessian {
            vec![0.0; k * k]
        } else {
            Vec::new()
        };
        let fj = d.f_row(j);
        for i in 0..n {
            let zi = d.z_row(i);
            let mut t = d.a[i];
            for c in 0..k {
                t += fj[c] * zi[c];
            }
            let p = sigmoid(t);
            for c in 0..k {
                grad[c] -= p * zi[c];
            }
            if with_hessian {
                let w = p * (1.0 - p);
                for r in 0..k {
                    let wr = w * zi[r];
                    for c in 0..=r {
                        hess[r * k + c] += wr * zi[c];
                    }
                }
            }
        }
        for &i in y.row(j) {
            for (c, v) in d.z_row(i as usize).iter().enumerate() {
                grad[c] += v;
            }
        }
        if with_hessian {
            symmetrize(&mut hess, k);
        }
        BlockDerivs { grad, hess }
    })
}

fn symmetrize(h: &mut [f64], dim: usize) {
    for r in 0..dim {
        for c in r + 1..dim {
            h[r * dim + c] = h[c * dim + r];
        }
    }
}

/// Gram matrices `Z^T Z / n` and `F^T F / m` and the column mean `F^T 1 / m`.
struct Grams {
    gz: DMatrix<f64>,
    gf: DMatrix<f64>,
    fbar: DVector<f64>,
}

impl Grams {
    fn new(z: &DMatrix<f64>, f: &DMatrix<f64>) -> Self {
        let n = z.nrows().max(1) as f64;
        let m = f.nrows().max(1) as f64;
        Self {
            gz: z.tr_mul(z) / n,
            gf: f.tr_mul(f) / m,
            fbar: f.row_sum().transpose() / m,
        }
    }
}

fn strict_lower_sq(a: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for r in 0..a.nrows() {
        for c in 0..r {
            s += a[(r, c)] * a[(r, c)];
        }
    }
    s
}

/// Lagrangian identifiability penalty
///
/// `(lambda m n / 8) ||diag(Z^T Z / n - F^T F / m)||^2
///  + (lambda m n / 2) ||F^T 1 / m||^2
///  + (lambda m n / 2) ||ndiag(F^T F / m)||^2
///  + (lambda m n / 2) ||ndiag(Z^T Z / n)||^2`
///
/// where `ndiag` keeps the strictly lower triangle.
pub fn penalty(z: &DMatrix<f64>, f: &DMatrix<f64>, lambda: f64) -> f64 {
    let g = Grams::new(z, f);
    let mn = (z.nrows() * f.nrows()) as f64;
    let diag: f64 = (0..z.ncols())
        .map(|k| (g.gz[(k, k)] - g.gf[(k, k)]).powi(2))
        .sum();
    lambda
        * mn
        * (diag / 8.0
            + 0.5 * g.fbar.norm_squared()
            + 0.5 * strict_lower_sq(&g.gf)
            + 0.5 * strict_lower_sq(&g.gz))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyGradient {
    pub z: DMatrix<f64>,
    pub f: DMatrix<f64>,
}

/// Gradient of [`penalty`]:
///
/// * `dP/dZ_ia = (lambda m / 2) d_a Z_ia + lambda m sum_{l != a} (Gz)_al Z_il`
/// * `dP/dF_ja = -(lambda n / 2) d_a F_ja + lambda n fbar_a + lambda n sum_{l != a} (Gf)_al F_jl`
///
/// with `d = diag(Gz - Gf)`.
pub fn penalty_gradient(z: &DMatrix<f64>, f: &DMatrix<f64>, lambda: f64) -> PenaltyGradient {
    let g = Grams::new(z, f);
    let (n, m, k) = (z.nrows() as f64, f.nrows() as f64, z.ncols());
    let d: Vec<f64> = (0..k).map(|a| g.gz[(a, a)] - g.gf[(a, a)]).collect();
    let mut offz = g.gz.clone();
    let mut offf = g.gf.clone();
    offz.fill_diagonal(0.0);
    offf.fill_diagonal(0.0);
    let mut pz = z * &offz * (lambda * m);
    for (a, mut col) in pz.column_iter_mut().enumerate() {
        col.axpy(0.5 * lambda * m * d[a], &z.column(a), 1.0);
    }
    let mut pf = f * &offf * (lambda * n);
    for (a, mut col) in pf.column_iter_mut().enumerate() {
        col.axpy(-0.5 * lambda * n * d[a], &f.column(a), 1.0);
        col.add_scalar_mut(lambda * n * g.fbar[a]);
    }
    PenaltyGradient { z: pz, f: pf }
}

/// Violations of the identifiability constraints, each a Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ConstraintResiduals {
    /// `||diag(Z^T Z / n - F^T F / m)||`
    pub diag_equality: f64,
    /// `||ndiag(F^T F / m)||`
    pub off_diag_f: f64,
    /// `||ndiag(Z^T Z / n)||`
    pub off_diag_z: f64,
    /// `||F^T 1 / m||`
    pub f_centering: f64,
}

impl ConstraintResiduals {
    pub fn of(f: &DMatrix<f64>, z: &DMatrix<f64>) -> Self {
        let g = Grams::new(z, f);
        let diag: f64 = (0..z.ncols())
            .map(|k| (g.gz[(k, k)] - g.gf[(k, k)]).powi(2))
            .sum();
        Self {
            diag_equality: diag.sqrt(),
            off_diag_f: strict_lower_sq(&g.gf).sqrt(),
            off_diag_z: strict_lower_sq(&g.gz).sqrt(),
            f_centering: g.fbar.norm(),
        }
    }

    pub fn max(&self) -> f64 {
        self.diag_equality
            .max(self.off_diag_f)
            .max(self.off_diag_z)
            .max(self.f_centering)
    }
}

/// Output of [`identifiability_transform`].
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    pub f: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// `F' = F G`, `Z' = Z G^{-T}`.
    pub g: DMatrix<f64>,
    /// Descending eigenvalues `rho_k^2`; also the common diagonal of
    /// `F'^T F' / m = Z'^T Z' / n` after squaring back (`rho_k`).
    pub spectrum: DVector<f64>,
    /// Some consecutive eigenvalues are closer than the gap tolerance, so the
    /// column order is not well identified.
    pub degenerate_spectrum: bool,
    pub residuals: ConstraintResiduals,
}

/// Relative eigen-gap below which a spectrum is reported as degenerate.
pub const SPECTRUM_GAP_TOL: f64 = 1e-8;

/// Rotate `(F, Z)` into canonical coordinates without changing `F Z^T`.
///
/// With `(V, Gamma)` the descending eigen-decomposition of
/// `(mn)^{-1} (Z^T Z)^{1/2} F^T F (Z^T Z)^{1/2}` and
/// `G = (Z^T Z / n)^{1/2} Gamma V^{-1/4}`, returns `(F G, Z G^{-T})`, for which
/// `F^T F / m = Z^T Z / n = V^{1/2}` is diagonal with decreasing entries.
/// `F` should already be column-centered.
pub fn identifiability_transform(f: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<CanonicalForm> {
    let (m, n, k) = (f.nrows(), z.nrows(), z.ncols());
    if f.ncols() != k {
        return Err(Error::dims("F and Z have different widths"));
    }
    let szz = z.tr_mul(z);
    let sff = f.tr_mul(f);
    let root = spd_sqrt(&szz).map_err(|_| Error::RankDeficient("Z^T Z is singular".into()))?;
    if spd_sqrt(&sff).is_err() {
        return Err(Error::RankDeficient("F^T F is singular".into()));
    }
    let mmat = &root * &sff * &root / (m as f64 * n as f64);
    let eig = SymEigen::new(&mmat);
    let top = eig.values[0];
    if eig.values.iter().any(|&v| v <= 1e-14 * top) {
        return Err(Error::RankDeficient(format!(
            "embedding cross-Gram spectrum {:?} has a zero eigenvalue",
            eig.values.as_slice()
        )));
    }
    let gap = eig.min_relative_gap();
    let degenerate = k > 1 && gap < SPECTRUM_GAP_TOL;
    if degenerate {
        log::warn!("degenerate embedding spectrum: relative gap {gap:.3e}");
    }
    let half = spd_sqrt(&(&szz / n as f64))?;
    let v_quarter = DMatrix::from_diagonal(&eig.values.map(|v| v.powf(-0.25)));
    let g = half * &eig.vectors * v_quarter;
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("transform matrix is singular".into()))?;
    let f2 = f * &g;
    let z2 = z * g_inv.transpose();
    let residuals = ConstraintResiduals::of(&f2, &z2);
    Ok(CanonicalForm {
        f: f2,
        z: z2,
        g,
        spectrum: eig.values,
        degenerate_spectrum: degenerate,
        residuals,
    })
}

/// Joint column sign flips `(F D, Z D)`.
///
/// Without a reference, column `k` is oriented so that the first nonzero entry
/// of `Z[., k]` (normally vertex 1) is positive. With a reference `Z_ref`,
/// `D` minimizes `||Z D - Z_ref||_F`. Returns the flipped matrices and the
/// diagonal of `D`.
pub fn sign_align(
    f: &DMatrix<f64>,
    z: &DMatrix<f64>,
    reference: Option<&DMatrix<f64>>,
) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let k = z.ncols();
    let signs: Vec<f64> = (0..k)
        .map(|c| {
            let col = z.column(c);
            let flip = match reference {
                Some(r) => col.dot(&r.column(c)) < 0.0,
                None => col.iter().find(|&&x| x != 0.0).is_some_and(|&x| x < 0.0),
            };
            if flip {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    let mut f2 = f.clone();
    let mut z2 = z.clone();
    for (c, &s) in signs.iter().enumerate() {
        if s < 0.0 {
            f2.column_mut(c).neg_mut();
            z2.column_mut(c).neg_mut();
        }
    }
    (f2, z2, signs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_params(m: usize, n: usize, k: usize, seed: u64) -> UncenteredParams {
        let mut r = rng::rng(seed);
        let mut g = || -> f64 { StandardNormal.sample(&mut r) };
        UncenteredParams {
            alpha_dagger: DVector::from_fn(n, |_, _| g() - 1.0),
            f: DMatrix::from_fn(m, k, |_, _| 0.7 * g()),
            z: DMatrix::from_fn(n, k, |_, _| 0.7 * g()),
        }
    }

    fn random_incidence(m: usize, n: usize, seed: u64) -> IncidenceMatrix {
        let mut r = rng::rng(seed);
        let dense: Vec<Vec<bool>> = (0..m)
            .map(|_| (0..n).map(|_| r.random_bool(0.4)).collect())
            .collect();
        IncidenceMatrix::from_fn(m, n, |j, i| dense[j][i])
    }

    #[test]
    fn theta_examples() {
        let p = UncenteredParams::zeros(1, 1, 2);
        assert_eq!(p.theta(0, 0), 0.0);
        let p = UncenteredParams::new(
            DVector::from_vec(vec![-3.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[2.0, 0.0]),
        )
        .unwrap();
        assert_eq!(p.theta(0, 0), -1.0);
    }

    #[test]
    fn theta_matrix_matches_loop() {
        let p = random_params(5, 4, 2, 1);
        let t = p.theta_matrix();
        for j in 0..5 {
            for i in 0..4 {
                let mut v = p.alpha_dagger[i];
                for c in 0..2 {
                    v += p.f[(j, c)] * p.z[(i, c)];
                }
                assert_relative_eq!(t[(j, i)], v, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(sigmoid(-3.0), 1.0 / (1.0 + 3f64.exp()), epsilon = 1e-16);
        assert_relative_eq!(sigmoid(-3.0), 0.047_425_873_177_566_78, epsilon = 1e-15);
        for x in [50.0, -50.0, 700.0, -745.0] {
            let (a, b) = (sigmoid(x), sigmoid(-x));
            assert!(a.is_finite() && b.is_finite());
            assert!((a + b - 1.0).abs() < 1e-12);
        }
        assert!(sigmoid(30.0) < 1.0 && sigmoid(-50.0) > 0.0);
        assert_relative_eq!(log1pexp(40.0), 40.0 + (-40f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(log1pexp(-40.0), (-40f64).exp(), max_relative = 1e-12);
        assert_eq!(log1pexp(1000.0), 1000.0);
    }

    #[test]
    fn hyperlink_probability_examples() {
        let p = UncenteredParams::zeros(1, 2, 1);
        assert_relative_eq!(p.hyperlink_probability(0, &[0]), 0.25, epsilon = 1e-15);
        let q = random_params(2, 3, 1, 4);
        let empty: f64 = (0..3).map(|i| 1.0 - q.prob(1, i)).product();
        assert_relative_eq!(q.hyperlink_probability(1, &[]), empty, epsilon = 1e-14);
    }

    #[test]
    fn log_likelihood_examples() {
        let y = random_incidence(3, 4, 2);
        let zero = UncenteredParams::zeros(3, 4, 2);
        assert_relative_eq!(
            log_likelihood(&zero, &y, Exec::Sequential).unwrap(),
            -12.0 * 2f64.ln(),
            epsilon = 1e-12
        );
        let y1 = IncidenceMatrix::from_rows(2, vec![vec![0]]);
        let p = UncenteredParams::zeros(1, 2, 1);
        assert_relative_eq!(
            log_likelihood(&p, &y1, Exec::Sequential).unwrap(),
            0.25f64.ln(),
            epsilon = 1e-14
        );
        assert!(log_likelihood(&p, &y, Exec::Sequential).is_err());
    }

    #[test]
    fn gradient_examples() {
        let (m, n) = (4, 3);
        let y = IncidenceMatrix::from_fn(m, n, |_, _| true);
        let g = gradient(&UncenteredParams::zeros(m, n, 2), &y, Exec::Sequential).unwrap();
        for i in 0..n {
            assert_relative_eq!(g.alpha_dagger[i], m as f64 / 2.0);
        }
    }

    #[test]
    fn penalty_vanishes_on_canonical_embeddings() {
        // F, Z with F^T F / m = Z^T Z / n = diag(2, 1), F centered
        let r2 = 2f64.sqrt();
        let f = DMatrix::from_row_slice(4, 2, &[r2, 1.0, -r2, 1.0, r2, -1.0, -r2, -1.0]);
        let z = DMatrix::from_row_slice(2, 2, &[2f64.sqrt(), 1.0, -(2f64.sqrt()), 1.0]);
        let r = ConstraintResiduals::of(&f, &z);
        assert!(r.max() < 1e-14, "{r:?}");
        assert!(penalty(&z, &f, 3.0).abs() < 1e-12);
        let pg = penalty_gradient(&z, &f, 3.0);
        assert!(pg.z.amax() < 1e-12 && pg.f.amax() < 1e-12);
    }

    #[test]
    fn centering_term_alone() {
        // F = F0 + 1 c^T with c along one axis keeps the Gram diagonal;
        // Z is chosen with the same Gram, so only ||fbar||^2 survives.
        let r2 = 2f64.sqrt();
        let f0 = DMatrix::from_row_slice(4, 2, &[r2, 1.0, -r2, 1.0, r2, -1.0, -r2, -1.0]);
        let mut f = f0.clone();
        f.column_mut(0).add_scalar_mut(0.5);
        let z = DMatrix::from_row_slice(2, 2, &[1.5, 1.0, -1.5, 1.0]);
        let lam = 1.5;
        let r = ConstraintResiduals::of(&f, &z);
        assert!(r.diag_equality < 1e-14 && r.off_diag_f < 1e-14 && r.off_diag_z < 1e-14);
        assert_relative_eq!(
            penalty(&z, &f, lam),
            lam * 8.0 / 2.0 * 0.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn transform_is_a_fixed_point_on_canonical_input() {
        let r2 = 2f64.sqrt();
        let f = DMatrix::from_row_slice(4, 2, &[r2, 1.0, -r2, 1.0, r2, -1.0, -r2, -1.0]);
        let z = DMatrix::from_row_slice(2, 2, &[2f64.sqrt(), 1.0, -(2f64.sqrt()), 1.0]);
        let c = identifiability_transform(&f, &z).unwrap();
        let (f2, z2, _) = sign_align(&c.f, &c.z, Some(&z));
        assert_relative_eq!(f2, f, epsilon = 1e-12);
        assert_relative_eq!(z2, z, epsilon = 1e-12);
        for r in 0..2 {
            for s in 0..2 {
                let expect = if r == s { 1.0 } else { 0.0 };
                assert_relative_eq!(c.g[(r, s)].abs(), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn transform_rejects_rank_deficiency() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, -1.0, 0.0, 0.0]);
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            identifiability_transform(&f, &z),
            Err(Error::RankDeficient(_))
        ));
        assert!(matches!(
            identifiability_transform(&z, &DMatrix::zeros(2, 2)),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn sign_convention() {
        let z = DMatrix::from_row_slice(2, 2, &[-0.3, 0.2, 1.0, 1.0]);
        let f = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let (f2, z2, s) = sign_align(&f, &z, None);
        assert_eq!(s, vec![-1.0, 1.0]);
        assert_eq!(z2[(0, 0)], 0.3);
        assert_eq!(f2[(0, 0)], -1.0);
        assert_eq!(&f2 * z2.transpose(), &f * z.transpose());
        let (f3, z3, _) = sign_align(&f2, &z2, None);
        assert_eq!((f3, z3), (f2, z2));

        // zero first entry: next nonzero row decides
        let z = DMatrix::from_row_slice(3, 1, &[0.0, -2.0, 1.0]);
        let (_, z2, _) = sign_align(&DMatrix::zeros(1, 1), &z, None);
        assert_eq!(z2[(1, 0)], 2.0);
    }
}
