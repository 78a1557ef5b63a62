//! Constrained maximum likelihood.
//!
//! [`fit`] maximizes the penalized log-likelihood over the region
//! `{ -C_beta <= mean(alpha_dagger) <= C3, |alpha_dagger - mean| <= C4,
//! ||f_j||, ||z_i|| <= C5, F centered }` and returns embeddings in canonical
//! coordinates. [`fit_f1`] maximizes the plain log-likelihood over the
//! `(beta, alpha, F, Z)` region with bounds `C1`, `C2`.
//!
//! Both run the same projected ascent engine: alternating block steps on the
//! vertex parameters `(alpha_dagger_i, z_i)` and the hyperlink embeddings
//! `f_j`, each step scaled by the per-row Fisher information, followed by an
//! Armijo backtracking search on the penalized objective. When the sweeps
//! slow down, a truncated Newton step on all parameters jointly follows. Every candidate is
//! re-expressed in canonical coordinates (a reparameterization that leaves
//! `Theta` unchanged) and projected back onto the feasible region before it is
//! scored, so each accepted iterate is feasible and the objective never
//! decreases.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::hypergraph::IncidenceMatrix;
use crate::linalg::{spd_solve, truncated_svd};
use crate::model::{
    self, identifiability_transform, link_blocks, logit, penalty, penalty_gradient, sign_align,
    vertex_blocks, ConstraintResiduals, ModelParams, UncenteredParams,
};
use crate::{rng, Error, Result};

/// Tuning and stopping controls for [`fit`] and [`fit_f1`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Latent dimension.
    pub k: usize,
    /// Multiplier `C' >= 1` in `C_beta = C' * C_hat`.
    pub c_prime: f64,
    /// `|alpha_i|`, `||f_j||`, `||z_i||` bound of the `(beta, alpha, F, Z)` region.
    pub c1: f64,
    /// Upper bound on `beta` in the `(beta, alpha, F, Z)` region.
    pub c2: f64,
    /// When set, the upper bound on `mean(alpha_dagger)` is
    /// `-c3_prime * C_beta`; otherwise it is `c2`.
    pub c3_prime: Option<f64>,
    /// Bound on `|alpha_dagger_i - mean(alpha_dagger)|`.
    pub c4: f64,
    /// Bound on embedding row norms.
    pub c5: f64,
    /// Penalty weight.
    pub lambda: f64,
    /// Initial step of each backtracking search.
    pub step: f64,
    pub shrink: f64,
    /// Sufficient-increase constant.
    pub armijo: f64,
    /// Relative objective change that ends the iteration.
    pub tol: f64,
    pub max_iters: usize,
    /// Singular value threshold multiplier for initialization.
    pub usvt_multiplier: f64,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 2,
            c_prime: 1.5,
            c1: 2.0,
            c2: 1.0,
            c3_prime: None,
            c4: 2.0,
            c5: 2.0,
            lambda: 1.0,
            step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            tol: 1e-8,
            max_iters: 2000,
            usvt_multiplier: 2.01,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl FitConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c4", self.c4),
            ("c5", self.c5),
            ("lambda", self.lambda),
            ("step", self.step),
            ("tol", self.tol),
            ("armijo", self.armijo),
            ("usvt_multiplier", self.usvt_multiplier),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        if !(self.c_prime >= 1.0 && self.c_prime.is_finite()) {
            return Err(Error::config(format!(
                "c_prime must be >= 1, got {}",
                self.c_prime
            )));
        }
        if let Some(c) = self.c3_prime {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::config(format!(
                    "c3_prime must lie in (0, 1), got {c}"
                )));
            }
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::config(format!(
                "shrink must lie in (0, 1), got {}",
                self.shrink
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be positive"));
        }
        Ok(())
    }

    pub fn f2_region(&self, c_beta: f64) -> F2Region {
        match self.c3_prime {
            Some(c3) => F2Region::new(c_beta, c3, self.c4, self.c5),
            None => F2Region::with_upper(c_beta, self.c2, self.c4, self.c5),
        }
    }

    pub fn f1_region(&self, c_beta: f64) -> F1Region {
        F1Region {
            c_beta,
            c1: self.c1,
            c2: self.c2,
        }
    }
}

/// Feasible region of the uncentered problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F2Region {
    pub c_beta: f64,
    /// Upper bound `C3` on `mean(alpha_dagger)`.
    pub upper: f64,
    pub c4: f64,
    pub c5: f64,
}

impl F2Region {
    /// `C3 = -c3_prime * C_beta`.
    pub fn new(c_beta: f64, c3_prime: f64, c4: f64, c5: f64) -> Self {
        Self::with_upper(c_beta, -c3_prime * c_beta, c4, c5)
    }

    pub fn with_upper(c_beta: f64, upper: f64, c4: f64, c5: f64) -> Self {
        Self {
            c_beta,
            upper: upper.max(-c_beta),
            c4,
            c5,
        }
    }

    fn as_box(&self) -> BoxBounds {
        BoxBounds {
            mean_lo: -self.c_beta,
            mean_hi: self.upper,
            dev_max: self.c4,
            row_max: self.c5,
        }
    }
}

/// Feasible region of the centered problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Region {
    pub c_beta: f64,
    pub c1: f64,
    pub c2: f64,
}

impl F1Region {
    fn as_box(&self) -> BoxBounds {
        BoxBounds {
            mean_lo: -self.c_beta,
            mean_hi: self.c2.max(-self.c_beta),
            dev_max: self.c1,
            row_max: self.c1,
        }
    }
}

/// Both regions share one shape in the uncentered coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BoxBounds {
    mean_lo: f64,
    mean_hi: f64,
    dev_max: f64,
    row_max: f64,
}

impl BoxBounds {
    fn project(&self, p: &mut UncenteredParams) {
        project_offsets(
            p.alpha_dagger.as_mut_slice(),
            self.mean_lo,
            self.mean_hi,
            self.dev_max,
        );
        project_centered_rows(&mut p.f, self.row_max);
        clip_rows(&mut p.z, self.row_max);
    }

    fn violation(&self, p: &UncenteredParams) -> f64 {
        let n = p.n().max(1) as f64;
        let mean = p.alpha_dagger.sum() / n;
        let mut v = (self.mean_lo - mean).max(mean - self.mean_hi).max(0.0);
        for a in p.alpha_dagger.iter() {
            v = v.max((a - mean).abs() - self.dev_max);
        }
        for x in [&p.f, &p.z] {
            for r in x.row_iter() {
                v = v.max(r.norm() - self.row_max);
            }
        }
        let m = p.m().max(1) as f64;
        v.max(p.f.row_sum().amax() / m)
    }
}

/// Project onto `{ x : lo <= mean(x) <= hi, |x_i - mean(x)| <= dev_max }`.
fn project_offsets(x: &mut [f64], lo: f64, hi: f64, dev_max: f64) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let target = mean.clamp(lo, hi);
    let mut dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    project_centered_box(&mut dev, dev_max);
    for (xi, d) in x.iter_mut().zip(dev) {
        *xi = target + d;
    }
}

/// Euclidean projection of a zero-sum vector onto
/// `{ d : sum(d) = 0, |d_i| <= b }`: `d_i <- clamp(d_i - tau, -b, b)` with the
/// shift `tau` that restores a zero sum.
fn project_centered_box(d: &mut [f64], b: f64) {
    if d.iter().all(|v| v.abs() <= b) {
        return;
    }
    let total = |tau: f64, d: &[f64]| d.iter().map(|v| (v - tau).clamp(-b, b)).sum::<f64>();
    let (mut lo, mut hi) = (
        d.iter().copied().fold(f64::INFINITY, f64::min) - b,
        d.iter().copied().fold(f64::NEG_INFINITY, f64::max) + b,
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid, d) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // solve exactly on the active set found by bisection
    let tau0 = 0.5 * (lo + hi);
    let (mut free_sum, mut free, mut fixed) = (0.0, 0usize, 0.0);
    for &v in d.iter() {
        let s = v - tau0;
        if s >= b {
            fixed += b;
        } else if s <= -b {
            fixed -= b;
        } else {
            free_sum += v;
            free += 1;
        }
    }
    let tau = if free > 0 {
        (free_sum + fixed) / free as f64
    } else {
        tau0
    };
    for v in d.iter_mut() {
        *v = (*v - tau).clamp(-b, b);
    }
}

fn clip_rows(x: &mut DMatrix<f64>, max: f64) {
    for mut r in x.row_iter_mut() {
        let norm = r.norm();
        if norm > max {
            r *= max / norm;
        }
    }
}

fn center_columns(x: &mut DMatrix<f64>) {
    let m = x.nrows().max(1) as f64;
    for mut c in x.column_iter_mut() {
        let mean = c.sum() / m;
        c.add_scalar_mut(-mean);
    }
}

/// Column-center and bound the row norms; a final uniform rescale keeps both
/// exactly when radial clipping and centering disagree.
fn project_centered_rows(f: &mut DMatrix<f64>, max: f64) {
    center_columns(f);
    for _ in 0..3 {
        if f.row_iter().all(|r| r.norm() <= max) {
            return;
        }
        clip_rows(f, max);
        center_columns(f);
    }
    let top = f.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    if top > max {
        *f *= max / top;
    }
}

/// Project onto the uncentered feasible region: center `F`, clip the mean of
/// `alpha_dagger` into `[-C_beta, C3]`, project its deviations onto the
/// `C4`-box (keeping them zero-sum), and bound every embedding row by `C5`.
pub fn project_f2(params: &UncenteredParams, region: &F2Region) -> UncenteredParams {
    let mut p = params.clone();
    region.as_box().project(&mut p);
    p
}

/// Project onto the centered feasible region: center `alpha` and `F`, clip
/// `beta` into `[-C_beta, C2]`, project `alpha` onto the `C1`-box, and bound
/// every embedding row by `C1`.
pub fn project_f1(params: &ModelParams, region: &F1Region) -> ModelParams {
    let mut u = params.to_uncentered();
    region.as_box().project(&mut u);
    let mut c = u.to_centered();
    // beta and alpha are exactly representable from the clamped pieces
    c.beta =
        (params.beta + params.alpha.mean()).clamp(-region.c_beta, region.c2.max(-region.c_beta));
    let mut alpha: Vec<f64> = params
        .alpha
        .iter()
        .map(|a| a - params.alpha.mean())
        .collect();
    project_centered_box(&mut alpha, region.c1);
    c.alpha = DVector::from_vec(alpha);
    c
}

/// Data-driven bound on `-beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CBeta {
    /// `-log(density)`, a point estimate of `-beta`.
    pub c_hat: f64,
    /// `C' * c_hat`.
    pub c_beta: f64,
}

pub fn tune_c_beta(y: &IncidenceMatrix, c_prime: f64) -> Result<CBeta> {
    let ones = y.nnz();
    if ones == 0 || y.m() == 0 || y.n() == 0 {
        return Err(Error::domain(
            "cannot tune C_beta: the incidence matrix has no nonzero entries \
             (every hyperlink is empty, which is the regime where the model is not estimable)",
        ));
    }
    let c_hat = -(ones as f64 / (y.m() as f64 * y.n() as f64)).ln();
    Ok(CBeta {
        c_hat,
        c_beta: c_prime * c_hat,
    })
}

/// Singular value thresholding estimate of the probability matrix, clipped to
/// `[delta, 1 - delta]`. Keeps at most `max_rank` components with singular
/// value above `multiplier * sqrt(max(m, n) * density)`.
pub fn usvt_probability(
    y: &IncidenceMatrix,
    max_rank: usize,
    multiplier: f64,
    delta: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let (m, n) = (y.m(), y.n());
    let density = y.density();
    let threshold = multiplier * ((m.max(n) as f64) * density).sqrt();
    let svd = truncated_svd(y, max_rank, seed)?;
    let kept: Vec<usize> = (0..svd.s.len()).filter(|&c| svd.s[c] > threshold).collect();
    let mut p = DMatrix::zeros(m, n);
    for &c in &kept {
        let u = svd.u.column(c) * svd.s[c];
        p.ger(1.0, &u, &svd.v.column(c), 1.0);
    }
    p.apply(|x: &mut f64| *x = x.clamp(delta, 1.0 - delta));
    Ok(p)
}

/// Clipping level `max(1e-6, exp(-2 C_beta))`, capped at 1/2, used by [`usvt_init`].
pub fn usvt_delta(c_beta: f64) -> f64 {
    1e-6f64.max((-2.0 * c_beta).exp()).min(0.5)
}

/// Spectral initialization.
///
/// `Theta_0 = logit(P_hat)` from [`usvt_probability`] with `K + 1` components;
/// `alpha_dagger_0` are its column means; `(F_0, Z_0)` come from the rank-`K`
/// SVD `U S V^T` of the column-centered remainder as
/// `F_0 = U S^{1/2} (n/m)^{1/4}`, `Z_0 = V S^{1/2} (m/n)^{1/4}`.
///
/// Falls back to zero embeddings and `alpha_dagger_i = logit(clipped column
/// mean of Y)` when `min(m, n) <= K` or the decomposition fails. The result is
/// not projected.
pub fn usvt_init(
    y: &IncidenceMatrix,
    k: usize,
    c_beta: f64,
    multiplier: f64,
    seed: u64,
) -> UncenteredParams {
    let delta = usvt_delta(c_beta);
    match try_usvt_init(y, k, delta, multiplier, seed) {
        Ok(p) if p.is_finite() => p,
        Ok(_) | Err(_) => fallback_init(y, k, delta),
    }
}

fn try_usvt_init(
    y: &IncidenceMatrix,
    k: usize,
    delta: f64,
    multiplier: f64,
    seed: u64,
) -> Result<UncenteredParams> {
    let (m, n) = (y.m(), y.n());
    if m <= k || n <= k {
        return Err(Error::domain(
            "too few rows or columns for a spectral start",
        ));
    }
    let mut theta = usvt_probability(y, k + 1, multiplier, delta, rng::child_seed(seed, 0))?;
    theta.apply(|p: &mut f64| *p = logit(*p));
    let floor = 1e-10 * theta.norm().max(1.0);
    let alpha = DVector::from_iterator(n, theta.column_iter().map(|c| c.mean()));
    for (i, mut c) in theta.column_iter_mut().enumerate() {
        c.add_scalar_mut(-alpha[i]);
    }
    let svd = truncated_svd(&theta, k, rng::child_seed(seed, 1))?;
    let (mf, nf) = (m as f64, n as f64);
    let mut f = DMatrix::zeros(m, k);
    let mut z = DMatrix::zeros(n, k);
    for c in (0..svd.s.len()).filter(|&c| svd.s[c] > floor) {
        let root = svd.s[c].sqrt();
        f.set_column(c, &(svd.u.column(c) * (root * (nf / mf).powf(0.25))));
        z.set_column(c, &(svd.v.column(c) * (root * (mf / nf).powf(0.25))));
    }
    UncenteredParams::new(alpha, f, z)
}

fn fallback_init(y: &IncidenceMatrix, k: usize, delta: f64) -> UncenteredParams {
    let m = y.m().max(1) as f64;
    let alpha = DVector::from_fn(y.n(), |i, _| {
        logit((y.col(i).len() as f64 / m).clamp(delta, 1.0 - delta))
    });
    UncenteredParams {
        alpha_dagger: alpha,
        f: DMatrix::zeros(y.m(), k),
        z: DMatrix::zeros(y.n(), k),
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// `(alpha_dagger, F, Z)`; for [`fit`] in canonical coordinates with the
    /// default column-sign convention.
    pub params: UncenteredParams,
    /// The same point as `(beta, alpha, F, Z)`.
    pub params_centered: ModelParams,
    pub c_beta: f64,
    pub c_hat: f64,
    /// Penalized objective after initialization and after every iteration.
    pub objective_trace: Vec<f64>,
    pub log_likelihood: f64,
    pub penalty: f64,
    pub constraint_residuals: ConstraintResiduals,
    pub iterations: usize,
    pub converged: bool,
    /// Largest distance from the feasible region over accepted iterates.
    pub max_iterate_violation: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

impl FitResult {
    pub fn k(&self) -> usize {
        self.params.k()
    }

    pub fn theta_hat(&self) -> DMatrix<f64> {
        self.params.theta_matrix()
    }
}

/// Constrained maximum likelihood in the uncentered parameterization, with the
/// identifiability penalty and canonical finalization.
pub fn fit(y: &IncidenceMatrix, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let tuned = tune_c_beta(y, config.c_prime)?;
    let region = config.f2_region(tuned.c_beta).as_box();
    run(y, config, tuned, region, config.lambda, true)
}

/// Constrained maximum likelihood over the centered region bounded by
/// `C1`, `C2`, without the identifiability penalty.
pub fn fit_f1(y: &IncidenceMatrix, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let tuned = tune_c_beta(y, config.c_prime)?;
    let region = config.f1_region(tuned.c_beta).as_box();
    run(y, config, tuned, region, 0.0, false)
}

/// Feasibility of a point with respect to the region [`fit`] uses.
pub fn f2_violation(p: &UncenteredParams, region: &F2Region) -> f64 {
    region.as_box().violation(p)
}

/// Feasibility of a point with respect to the region [`fit_f1`] uses.
pub fn f1_violation(p: &UncenteredParams, region: &F1Region) -> f64 {
    region.as_box().violation(p)
}

struct Engine<'a> {
    y: &'a IncidenceMatrix,
    region: BoxBounds,
    lambda: f64,
    exec: Exec,
}

impl Engine<'_> {
    fn objective(&self, p: &UncenteredParams) -> f64 {
        let ll = model::log_likelihood(p, self.y, self.exec).unwrap_or(f64::NAN);
        if self.lambda > 0.0 {
            ll - penalty(&p.z, &p.f, self.lambda)
        } else {
            ll
        }
    }

    /// Same `Theta`, canonical coordinates, then projected.
    fn settle(&self, mut p: UncenteredParams) -> UncenteredParams {
        absorb_f_mean(&mut p);
        if let Ok(c) = identifiability_transform(&p.f, &p.z) {
            let (f, z, _) = sign_align(&c.f, &c.z, None);
            p.f = f;
            p.z = z;
        }
        self.region.project(&mut p);
        p
    }
}

/// Move `F`'s column means into `alpha_dagger` so that `Theta` is unchanged.
fn absorb_f_mean(p: &mut UncenteredParams) {
    let m = p.m().max(1) as f64;
    let fbar = p.f.row_sum().transpose() / m;
    p.alpha_dagger += &p.z * &fbar;
    for (c, mut col) in p.f.column_iter_mut().enumerate() {
        col.add_scalar_mut(-fbar[c]);
    }
}

#[derive(Clone, Copy)]
enum Block {
    Vertex,
    Link,
}

fn run(
    y: &IncidenceMatrix,
    config: &FitConfig,
    tuned: CBeta,
    region: BoxBounds,
    lambda: f64,
    canonical: bool,
) -> Result<FitResult> {
    let engine = Engine {
        y,
        region,
        lambda,
        exec: config.exec,
    };
    let k = config.k;
    let mut warnings = Vec::new();

    let mut start = usvt_init(y, k, tuned.c_beta, config.usvt_multiplier, config.seed);
    break_symmetry(&mut start, config.seed);
    let mut x = engine.settle(start);
    let mut q = engine.objective(&x);
    if !q.is_finite() {
        return Err(Error::Numerical(format!(
            "objective is {q} at the initial point"
        )));
    }
    let mut trace = vec![q];
    let mut worst = region.violation(&x);
    let mut converged = false;
    let mut iterations = 0;
    let mut last_gain = f64::INFINITY;

    for _ in 0..config.max_iters {
        iterations += 1;
        let q_prev = q;
        let mut moved = false;
        for block in [Block::Vertex, Block::Link] {
            if let Some((nx, nq)) = block_step(&engine, config, &x, q, block)? {
                x = nx;
                q = nq;
                moved = true;
                worst = worst.max(region.violation(&x));
            }
        }
        // block sweeps converge linearly; a joint step once they slow down
        let gain = q - q_prev;
        let crawling = gain >= CRAWL_RATIO * last_gain || !moved;
        last_gain = gain;
        if crawling {
            if let Some((nx, nq)) = joint_step(&engine, config, &x, q)? {
                x = nx;
                q = nq;
                moved = true;
                worst = worst.max(region.violation(&x));
            }
        }
        trace.push(q);
        if !moved || (q - q_prev).abs() <= config.tol * q_prev.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!(
            "stopped after {} iterations without meeting tol = {:e}",
            config.max_iters, config.tol
        ));
    }

    if canonical {
        absorb_f_mean(&mut x);
        match identifiability_transform(&x.f, &x.z) {
            Ok(c) => {
                if c.degenerate_spectrum {
                    warnings.push(format!(
                        "embedding spectrum {:?} has near-equal eigenvalues; column order is not identified",
                        c.spectrum.as_slice()
                    ));
                }
                x.f = c.f;
                x.z = c.z;
            }
            Err(e) => warnings.push(format!("identifiability transform skipped: {e}")),
        }
        x = x.sign_aligned(None);
        let v = region.violation(&x);
        if v > 1e-10 {
            warnings.push(format!(
                "canonical coordinates exceed the feasible region by {v:.3e}"
            ));
        }
    }

    let log_likelihood = model::log_likelihood(&x, y, config.exec)?;
    let pen = penalty(&x.z, &x.f, config.lambda);
    let residuals = ConstraintResiduals::of(&x.f, &x.z);
    Ok(FitResult {
        params_centered: x.to_centered(),
        params: x,
        c_beta: tuned.c_beta,
        c_hat: tuned.c_hat,
        objective_trace: trace,
        log_likelihood,
        penalty: pen,
        constraint_residuals: residuals,
        iterations,
        converged,
        max_iterate_violation: worst,
        warnings,
        labels: None,
    })
}

/// Sweep-over-sweep gain ratio above which block ascent counts as slow.
const CRAWL_RATIO: f64 = 0.25;

/// Give embedding columns that the spectral start left at zero a small seeded
/// perturbation, since exact zeros are a stationary point of the bilinear term.
fn break_symmetry(p: &mut UncenteredParams, seed: u64) {
    let scale =
        p.f.column_iter()
            .zip(p.z.column_iter())
            .map(|(f, z)| f.norm() * z.norm())
            .fold(0.0, f64::max)
            .max(1.0);
    let noise = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut r = rng::rng(rng::child_seed(seed, 2));
    for c in 0..p.k() {
        if p.f.column(c).norm() * p.z.column(c).norm() <= 1e-8 * scale {
            for v in p.f.column_mut(c).iter_mut() {
                *v = noise.sample(&mut r);
            }
            for v in p.z.column_mut(c).iter_mut() {
                *v = noise.sample(&mut r);
            }
        }
    }
}

/// One scaled-gradient step with backtracking on one block. Returns the new
/// point and objective when a step is accepted.
fn block_step(
    engine: &Engine,
    config: &FitConfig,
    x: &UncenteredParams,
    q: f64,
    block: Block,
) -> Result<Option<(UncenteredParams, f64)>> {
    let k = x.k();
    let pen = (engine.lambda > 0.0).then(|| penalty_gradient(&x.z, &x.f, engine.lambda));
    let (derivs, dim) = match block {
        Block::Vertex => (vertex_blocks(x, engine.y, engine.exec, true), k + 1),
        Block::Link => (link_blocks(x, engine.y, engine.exec, true), k),
    };
    let rows = match block {
        Block::Vertex => &x.z,
        Block::Link => &x.f,
    };
    let offset = dim - k;
    let dirs: Vec<(Vec<f64>, f64)> = engine.exec.map(derivs.len(), |r| {
        let d = &derivs[r];
        let mut g = DVector::from_column_slice(&d.grad);
        if let Some(pg) = &pen {
            match block {
                Block::Vertex => {
                    for c in 0..k {
                        g[1 + c] -= pg.z[(r, c)];
                    }
                }
                Block::Link => {
                    for c in 0..k {
                        g[c] -= pg.f[(r, c)];
                    }
                }
            }
        }
        let mut h = DMatrix::from_row_slice(dim, dim, &d.hess);
        let g_row = g.rows(offset, k).clone_owned();
        if let Some(u) = outward_normal(&rows.row(r).transpose(), &g_row, engine.region.row_max) {
            let mut e = DVector::zeros(dim);
            e.rows_mut(offset, k).copy_from(&u);
            let proj = DMatrix::identity(dim, dim) - &e * e.transpose();
            let scale = (h.trace() / dim as f64).max(1e-4);
            g = &proj * g;
            h = &proj * h * &proj + &e * e.transpose() * scale;
        }
        let ridge = 1e-8 * (h.trace() / dim as f64).max(1e-4);
        for c in 0..dim {
            h[(c, c)] += ridge;
        }
        let step = spd_solve(&h, &g).unwrap_or_else(|| g.clone() / ridge.max(1.0));
        let slope = g.dot(&step);
        (step.iter().copied().collect(), slope)
    });
    let slope: f64 = dirs.iter().map(|d| d.1).sum();
    if !(slope > 0.0) || !slope.is_finite() {
        return Ok(None);
    }

    line_search(engine, config, x, q, slope, |cand, t| match block {
        Block::Vertex => {
            for (i, (d, _)) in dirs.iter().enumerate() {
                cand.alpha_dagger[i] += t * d[0];
                for c in 0..k {
                    cand.z[(i, c)] += t * d[1 + c];
                }
            }
        }
        Block::Link => {
            for (j, (d, _)) in dirs.iter().enumerate() {
                for c in 0..k {
                    cand.f[(j, c)] += t * d[c];
                }
            }
        }
    })
}

/// Armijo backtracking along `advance(candidate, t)`; every candidate is
/// settled before it is scored.
fn line_search(
    engine: &Engine,
    config: &FitConfig,
    x: &UncenteredParams,
    q: f64,
    slope: f64,
    advance: impl Fn(&mut UncenteredParams, f64),
) -> Result<Option<(UncenteredParams, f64)>> {
    let mut t = config.step;
    for _ in 0..60 {
        let mut cand = x.clone();
        advance(&mut cand, t);
        let cand = engine.settle(cand);
        let qc = engine.objective(&cand);
        if qc.is_finite() && qc >= q + config.armijo * t * slope {
            return Ok(Some((cand, qc)));
        }
        if qc.is_nan() {
            return Err(Error::Numerical(
                "objective became NaN during line search".into(),
            ));
        }
        t *= config.shrink;
    }
    Ok(None)
}

/// Unit radial direction of a row on the norm bound whose ascent direction
/// points outward. Such rows only move tangentially, as in projected Newton.
fn outward_normal(row: &DVector<f64>, grad: &DVector<f64>, max: f64) -> Option<DVector<f64>> {
    let norm = row.norm();
    (norm >= max * (1.0 - 1e-9) && grad.dot(row) > 0.0).then(|| row / norm)
}

/// Parameters packed as `(alpha_dagger, vec Z, vec F)`.
fn pack(a: &DVector<f64>, z: &DMatrix<f64>, f: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        a.len() + z.len() + f.len(),
        a.iter().chain(z.iter()).chain(f.iter()).copied(),
    )
}

fn unpack(
    v: &DVector<f64>,
    n: usize,
    m: usize,
    k: usize,
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let s = v.as_slice();
    (
        DVector::from_column_slice(&s[..n]),
        DMatrix::from_column_slice(n, k, &s[n..n + n * k]),
        DMatrix::from_column_slice(m, k, &s[n + n * k..]),
    )
}

/// Truncated Newton step on all parameters at once. The direction solves
/// `(I + H_P + ridge) d = g` by conjugate gradients, where `I` is the Fisher
/// information of the likelihood and `H_P` the penalty Hessian. Alternating
/// block steps alone crawl along directions that move `F` and `Z` together.
fn joint_step(
    engine: &Engine,
    config: &FitConfig,
    x: &UncenteredParams,
    q: f64,
) -> Result<Option<(UncenteredParams, f64)>> {
    const CG_ITERS: usize = 10;
    let (n, m, k) = (x.n(), x.m(), x.k());
    if n == 0 || m == 0 {
        return Ok(None);
    }
    // residuals R = Y - P and weights W = P (1 - P) from one pass over Theta
    let mut w = x.theta_matrix();
    engine
        .exec
        .for_each_chunk_mut(w.as_mut_slice(), m, |_, col| {
            col.iter_mut().for_each(|t| *t = model::sigmoid(*t))
        });
    let mut resid = -&w;
    engine
        .exec
        .for_each_chunk_mut(resid.as_mut_slice(), m, |i, col| {
            for &j in engine.y.col(i) {
                col[j as usize] += 1.0;
            }
        });
    engine
        .exec
        .for_each_chunk_mut(w.as_mut_slice(), m, |_, col| {
            col.iter_mut().for_each(|p| *p *= 1.0 - *p)
        });
    let ga = resid.row_sum().transpose();
    let mut gz = resid.tr_mul(&x.f);
    let mut gf = &resid * &x.z;
    if engine.lambda > 0.0 {
        let pg = penalty_gradient(&x.z, &x.f, engine.lambda);
        gz -= pg.z;
        gf -= pg.f;
    }
    let normals = |rows: &DMatrix<f64>, grad: &DMatrix<f64>| -> Vec<(usize, DVector<f64>)> {
        (0..rows.nrows())
            .filter_map(|r| {
                outward_normal(
                    &rows.row(r).transpose(),
                    &grad.row(r).transpose(),
                    engine.region.row_max,
                )
                .map(|u| (r, u))
            })
            .collect()
    };
    let (nz, nf) = (normals(&x.z, &gz), normals(&x.f, &gf));
    let tangent = |v: &mut DVector<f64>| {
        for (base, rows, list) in [(n, n, &nz), (n + n * k, m, &nf)] {
            for (r, u) in list {
                let dot: f64 = (0..k).map(|c| v[base + c * rows + r] * u[c]).sum();
                for c in 0..k {
                    v[base + c * rows + r] -= dot * u[c];
                }
            }
        }
    };
    let mut g = pack(&ga, &gz, &gf);
    tangent(&mut g);

    let ridge = 1e-8 * (w.sum() / n as f64).max(1e-4);
    let eps = 1e-6;
    let hess = |v: &DVector<f64>| -> DVector<f64> {
        let (va, vz, vf) = unpack(v, n, m, k);
        // u_ji = w_ji * (va_i + f_j . vz_i + vf_j . z_i), one column per vertex
        let mut u = DMatrix::<f64>::zeros(m, n);
        let (fs, vfs, ws) = (x.f.as_slice(), vf.as_slice(), w.as_slice());
        engine
            .exec
            .for_each_chunk_mut(u.as_mut_slice(), m, |i, col| {
                col.fill(va[i]);
                for c in 0..k {
                    let (a, b) = (vz[(i, c)], x.z[(i, c)]);
                    let (fc, vfc) = (&fs[c * m..(c + 1) * m], &vfs[c * m..(c + 1) * m]);
                    for ((o, &fj), &vj) in col.iter_mut().zip(fc).zip(vfc) {
                        *o += a * fj + b * vj;
                    }
                }
                for (o, &wj) in col.iter_mut().zip(&ws[i * m..(i + 1) * m]) {
                    *o *= wj;
                }
            });
        let us = u.as_slice();
        let per_vertex = engine.exec.map(n, |i| {
            let col = &us[i * m..(i + 1) * m];
            let mut acc = vec![col.iter().sum::<f64>(); k + 1];
            for c in 0..k {
                acc[1 + c] = col
                    .iter()
                    .zip(&fs[c * m..(c + 1) * m])
                    .map(|(a, b)| a * b)
                    .sum();
            }
            acc
        });
        let oa = DVector::from_fn(n, |i, _| per_vertex[i][0]);
        let mut oz = DMatrix::from_fn(n, k, |i, c| per_vertex[i][1 + c]);
        let mut of = &u * &x.z;
        if engine.lambda > 0.0 {
            let norm = vz.norm().max(vf.norm()).max(1e-300);
            let h = eps / norm;
            let plus = penalty_gradient(&(&x.z + &vz * h), &(&x.f + &vf * h), engine.lambda);
            let minus = penalty_gradient(&(&x.z - &vz * h), &(&x.f - &vf * h), engine.lambda);
            oz += (plus.z - minus.z) / (2.0 * h);
            of += (plus.f - minus.f) / (2.0 * h);
        }
        let mut out = pack(&oa, &oz, &of) + v * ridge;
        tangent(&mut out);
        out
    };

    let gnorm = g.norm();
    if !(gnorm > 0.0) || !gnorm.is_finite() {
        return Ok(None);
    }
    let mut d = DVector::zeros(g.len());
    let mut r = g.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for _ in 0..CG_ITERS {
        let hp = hess(&p);
        let curv = p.dot(&hp);
        if !(curv > 0.0) {
            break;
        }
        let a = rr / curv;
        d.axpy(a, &p, 1.0);
        r.axpy(-a, &hp, 1.0);
        let rr_next = r.norm_squared();
        if rr_next.sqrt() <= 1e-6 * gnorm {
            break;
        }
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    let slope = g.dot(&d);
    if !(slope > 0.0) || !slope.is_finite() {
        return Ok(None);
    }
    let (da, dz, df) = unpack(&d, n, m, k);
    line_search(engine, config, x, q, slope, |cand, t| {
        cand.alpha_dagger.axpy(t, &da, 1.0);
        cand.z += &dz * t;
        cand.f += &df * t;
    })
}

/// Dense `Theta_hat - Theta_star` error normalized by `sqrt(mn)`.
pub fn relative_theta_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (estimate - truth).norm() / ((estimate.nrows() * estimate.ncols()) as f64).sqrt()
}
