//! Synthetic designs and Monte-Carlo experiment drivers.
//!
//! Ground truth follows the mixture design: vertices are split at random into
//! `K` groups of near-equal size, `z_i ~ N(e_k, Sigma)` truncated to within 1
//! of `e_k` on each coordinate, `f_j ~ N(0, Sigma)` truncated to `[-1, 1]` and
//! then column-centered, `alpha_i ~ Uniform[-1, 1]` then centered, with
//! `Sigma_ab = 0.2 rho^|a-b|`. Every random stream is derived from the design
//! seed through [`rng::child_seed`], so outputs are reproducible regardless of
//! thread count.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::estimator::{fit, fit_f1, FitConfig, FitResult};
use crate::exec::Exec;
use crate::hypergraph::{Hypergraph, IncidenceMatrix};
use crate::inference::{PluginCovariances, Target};
use crate::model::{identifiability_transform, sigmoid, ModelParams, UncenteredParams};
use crate::rng::{self, child_seed};
use crate::stats::{mean, median, quantile};
use crate::{Error, Result};

/// Size and generation parameters of one synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDesign {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Autoregressive correlation of the embedding coordinates.
    pub rho: f64,
    pub beta_star: f64,
    pub seed: u64,
    pub mc_reps: usize,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            n: 200,
            m: 1000,
            k: 2,
            rho: 0.0,
            beta_star: -1.0,
            seed: 0,
            mc_reps: 1,
        }
    }
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.k == 0 || self.mc_reps == 0 {
            return Err(Error::config("n, m, k and mc_reps must be positive"));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::config(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if !self.beta_star.is_finite() {
            return Err(Error::config("beta_star must be finite"));
        }
        Ok(())
    }
}

/// True parameters of a synthetic instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: ModelParams,
    /// Zero-based group of each vertex.
    pub groups: Vec<usize>,
}

impl GroundTruth {
    pub fn uncentered(&self) -> UncenteredParams {
        self.params.to_uncentered()
    }

    pub fn theta_matrix(&self) -> DMatrix<f64> {
        self.params.theta_matrix()
    }

    /// The truth in canonical coordinates (same `Theta`), for comparing
    /// embeddings with a fit.
    pub fn canonical(&self) -> Result<UncenteredParams> {
        let mut u = self.uncentered();
        let c = identifiability_transform(&u.f, &u.z)?;
        u.f = c.f;
        u.z = c.z;
        Ok(u.sign_aligned(None))
    }
}

fn ar_cholesky(k: usize, rho: f64) -> DMatrix<f64> {
    let sigma = DMatrix::from_fn(k, k, |a, b| 0.2 * rho.powi((a as i32 - b as i32).abs()));
    sigma
        .cholesky()
        .expect("AR(1) covariance is positive definite")
        .l()
}

/// `mean + L x` with `x` standard normal, redrawn until every coordinate is
/// within 1 of `mean`.
fn truncated_normal(mean: &DVector<f64>, l: &DMatrix<f64>, r: &mut rng::Rng) -> DVector<f64> {
    let k = mean.len();
    loop {
        let x = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut *r));
        let d = l * x;
        if d.iter().all(|v| v.abs() <= 1.0) {
            return mean + d;
        }
    }
}

/// Near-equal group sizes in index order: the first `n % k` groups get one extra.
pub fn group_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|g| n / k + usize::from(g < n % k)).collect()
}

pub fn gen_ground_truth(design: &SimDesign) -> Result<GroundTruth> {
    design.validate()?;
    let (n, m, k) = (design.n, design.m, design.k);
    let l = ar_cholesky(k, design.rho);

    let mut groups: Vec<usize> = group_sizes(n, k)
        .into_iter()
        .enumerate()
        .flat_map(|(g, s)| std::iter::repeat_n(g, s))
        .collect();
    groups.shuffle(&mut rng::rng(child_seed(design.seed, 0)));

    let mut r = rng::rng(child_seed(design.seed, 1));
    let mut z = DMatrix::zeros(n, k);
    for (i, &g) in groups.iter().enumerate() {
        let mut e = DVector::zeros(k);
        e[g] = 1.0;
        z.set_row(i, &truncated_normal(&e, &l, &mut r).transpose());
    }

    let mut r = rng::rng(child_seed(design.seed, 2));
    let zero = DVector::zeros(k);
    let mut f = DMatrix::zeros(m, k);
    for j in 0..m {
        f.set_row(j, &truncated_normal(&zero, &l, &mut r).transpose());
    }
    for mut c in f.column_iter_mut() {
        let mu = c.mean();
        c.add_scalar_mut(-mu);
    }

    let mut r = rng::rng(child_seed(design.seed, 3));
    let mut alpha = DVector::from_fn(n, |_, _| r.random_range(-1.0..=1.0));
    let mu = alpha.mean();
    alpha.add_scalar_mut(-mu);

    Ok(GroundTruth {
        params: ModelParams::new(design.beta_star, alpha, f, z)?,
        groups,
    })
}

/// Independent `y_ji ~ Bernoulli(prob(j, i))`; row `j` draws from its own
/// child stream of `seed`.
pub fn sample_incidence(
    m: usize,
    n: usize,
    seed: u64,
    exec: Exec,
    prob: impl Fn(usize, usize) -> f64 + Sync + Send,
) -> IncidenceMatrix {
    let rows = exec.map(m, |j| {
        let mut r = rng::rng(child_seed(seed, j as u64));
        (0..n)
            .filter(|&i| r.random::<f64>() < prob(j, i))
            .map(|i| i as u32)
            .collect::<Vec<u32>>()
    });
    IncidenceMatrix::from_rows(n, rows)
}

pub fn gen_incidence(gt: &GroundTruth, seed: u64, exec: Exec) -> IncidenceMatrix {
    let u = gt.uncentered();
    sample_incidence(u.m(), u.n(), seed, exec, |j, i| sigmoid(u.theta(j, i)))
}

pub fn gen_hypergraph(gt: &GroundTruth, seed: u64, exec: Exec) -> Hypergraph {
    gen_incidence(gt, seed, exec).to_hypergraph()
}

/// Instance `rep` of a design: ground truth and data, both seeded from
/// `(design.seed, rep)`.
pub fn gen_instance(
    design: &SimDesign,
    rep: usize,
    exec: Exec,
) -> Result<(GroundTruth, IncidenceMatrix)> {
    let seed = child_seed(design.seed, rep as u64);
    let gt = gen_ground_truth(&SimDesign {
        seed: child_seed(seed, 0),
        ..design.clone()
    })?;
    let y = gen_incidence(&gt, child_seed(seed, 1), exec);
    Ok((gt, y))
}

/// One row of an experiment table: a summary of `metric` over repetitions
/// of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub cell: Vec<String>,
    pub metric: String,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Repetitions that produced a value.
    pub reps: usize,
    /// Repetitions whose fit failed.
    pub failed: usize,
}

/// Experiment output: one row per (cell, metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub cell_columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl Table {
    fn new(cell_columns: &[&str]) -> Self {
        Self {
            cell_columns: cell_columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, cell: &[String], metric: &str, values: &[f64], failed: usize) {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        self.rows.push(TableRow {
            cell: cell.to_vec(),
            metric: metric.to_string(),
            mean: mean(&finite),
            median: median(&finite),
            q25: quantile(&finite, 0.25),
            q75: quantile(&finite, 0.75),
            reps: finite.len(),
            failed,
        });
    }

    /// First row matching a metric and the given cell values.
    pub fn get(&self, cell: &[&str], metric: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| {
            r.metric == metric && r.cell.iter().map(String::as_str).eq(cell.iter().copied())
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.cell_columns.clone();
        header.extend(
            ["metric", "mean", "median", "q25", "q75", "reps", "failed"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = r.cell.clone();
            rec.push(r.metric.clone());
            rec.extend([r.mean, r.median, r.q25, r.q75].iter().map(|v| fmt_num(*v)));
            rec.push(r.reps.to_string());
            rec.push(r.failed.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Shortest round-trip decimal; `NaN` becomes an empty field.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Which estimator an experiment fits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Centered parameterization without the identifiability penalty.
    #[default]
    F1,
    /// Uncentered parameterization with the penalty and canonical output.
    F2,
}

impl Estimator {
    pub fn run(self, y: &IncidenceMatrix, config: &FitConfig) -> Result<FitResult> {
        match self {
            Estimator::F1 => fit_f1(y, config),
            Estimator::F2 => fit(y, config),
        }
    }
}

/// Grid for [`experiment_error_scaling`]; one cell per `(n, K, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorScalingConfig {
    pub ns: Vec<usize>,
    /// `m = round(m_over_n * n)`.
    pub m_over_n: f64,
    pub ks: Vec<usize>,
    pub betas: Vec<f64>,
    pub rho: f64,
    pub reps: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub fit: FitConfig,
}

impl Default for ErrorScalingConfig {
    fn default() -> Self {
        Self {
            ns: vec![100, 200],
            m_over_n: 10.0,
            ks: vec![2],
            betas: vec![-3.0],
            rho: 0.0,
            reps: 10,
            seed: 0,
            estimator: Estimator::F1,
            fit: FitConfig::default(),
        }
    }
}

/// Errors of one fit against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitErrors {
    /// `||Theta_hat - Theta*||_F / sqrt(mn)`
    pub theta: f64,
    /// `||alpha_hat - alpha*||_2 / sqrt(n)`
    pub alpha: f64,
    /// `|beta_hat - beta*|`
    pub beta: f64,
}

impl FitErrors {
    pub fn of(fit: &FitResult, gt: &GroundTruth) -> Self {
        let th = fit.theta_hat();
        let truth = gt.theta_matrix();
        let c = &fit.params_centered;
        Self {
            theta: (&th - &truth).norm() / (th.len() as f64).sqrt(),
            alpha: (&c.alpha - &gt.params.alpha).norm() / (c.alpha.len() as f64).sqrt(),
            beta: (c.beta - gt.params.beta).abs(),
        }
    }
}

fn grid_seed(seed: u64, cell: usize) -> u64 {
    child_seed(seed, cell as u64)
}

/// Relative estimation error over a grid of designs.
pub fn experiment_error_scaling(config: &ErrorScalingConfig, exec: Exec) -> Result<Table> {
    if config.ns.is_empty() || config.ks.is_empty() || config.betas.is_empty() || config.reps == 0 {
        return Err(Error::config("error-scaling grid is empty"));
    }
    config.fit.validate()?;
    let mut table = Table::new(&["n", "m", "K", "beta"]);
    let mut cell = 0;
    for &n in &config.ns {
        for &k in &config.ks {
            for &beta in &config.betas {
                let m = ((config.m_over_n * n as f64).round() as usize).max(1);
                let design = SimDesign {
                    n,
                    m,
                    k,
                    rho: config.rho,
                    beta_star: beta,
                    seed: grid_seed(config.seed, cell),
                    mc_reps: config.reps,
                };
                design.validate()?;
                cell += 1;
                let fit_cfg = FitConfig {
                    k,
                    ..config.fit.clone()
                };
                let results = exec.map(config.reps, |rep| -> Option<FitErrors> {
                    let (gt, y) = gen_instance(&design, rep, Exec::Sequential).ok()?;
                    let cfg = FitConfig {
                        seed: child_seed(design.seed, 1_000_000 + rep as u64),
                        exec: Exec::Sequential,
                        ..fit_cfg.clone()
                    };
                    let fit = config.estimator.run(&y, &cfg).ok()?;
                    Some(FitErrors::of(&fit, &gt))
                });
                let failed = results.iter().filter(|r| r.is_none()).count();
                let ok: Vec<FitErrors> = results.into_iter().flatten().collect();
                let labels = vec![n.to_string(), m.to_string(), k.to_string(), fmt_num(beta)];
                table.push(
                    &labels,
                    "theta_rel_error",
                    &ok.iter().map(|e| e.theta).collect::<Vec<_>>(),
                    failed,
                );
                table.push(
                    &labels,
                    "alpha_error",
                    &ok.iter().map(|e| e.alpha).collect::<Vec<_>>(),
                    failed,
                );
                table.push(
                    &labels,
                    "beta_error",
                    &ok.iter().map(|e| e.beta).collect::<Vec<_>>(),
                    failed,
                );
            }
        }
    }
    Ok(table)
}

/// Grid for [`experiment_coverage`]; `m = n` in every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub ns: Vec<usize>,
    pub betas: Vec<f64>,
    pub k: usize,
    pub rho: f64,
    pub level: f64,
    pub reps: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            ns: vec![400],
            betas: vec![0.0, -1.0],
            k: 2,
            rho: 0.5,
            level: 0.95,
            reps: 20,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

/// Target families scored by the coverage experiment.
pub const COVERAGE_FAMILIES: [&str; 5] = ["alpha_dagger", "z", "f", "theta", "p"];

/// Per-family coverage proportion and mean interval length of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRecord {
    pub coverage: [f64; 5],
    pub length: [f64; 5],
}

/// Intervals for every `alpha_dagger`, `z`, `f` entry and the diagonal
/// `theta_ii`, `p_ii`, scored against the canonical truth.
pub fn coverage_record(
    fit: &FitResult,
    gt: &GroundTruth,
    level: f64,
    exec: Exec,
) -> Result<CoverageRecord> {
    let truth = gt.canonical()?;
    let est = fit.params.sign_aligned(Some(&truth.z));
    let cov = PluginCovariances::new(&est, exec)?;
    let (m, n) = (est.m(), est.n());
    let mut targets = cov.parameter_targets();
    for i in 0..m.min(n) {
        targets.push(Target::Theta(i, i));
        targets.push(Target::P(i, i));
    }
    let scored = exec.map(targets.len(), |t| -> Result<(usize, bool, f64)> {
        let target = targets[t];
        let ci = cov.interval(target, level)?;
        let value = match target {
            Target::AlphaDagger(i) => truth.alpha_dagger[i],
            Target::Z(i, c) => truth.z[(i, c)],
            Target::F(j, c) => truth.f[(j, c)],
            Target::Theta(j, i) => truth.theta(j, i),
            Target::P(j, i) => truth.prob(j, i),
        };
        let family = COVERAGE_FAMILIES
            .iter()
            .position(|f| *f == target.family())
            .expect("known family");
        Ok((family, ci.covers(value), ci.length()))
    });
    let mut hits = [0.0; 5];
    let mut lens = [0.0; 5];
    let mut counts = [0.0; 5];
    for s in scored {
        let (f, hit, len) = s?;
        counts[f] += 1.0;
        lens[f] += len;
        if hit {
            hits[f] += 1.0;
        }
    }
    let ratio = |a: [f64; 5]| {
        std::array::from_fn(|f| {
            if counts[f] > 0.0 {
                a[f] / counts[f]
            } else {
                f64::NAN
            }
        })
    };
    Ok(CoverageRecord {
        coverage: ratio(hits),
        length: ratio(lens),
    })
}

/// Empirical coverage and interval length of the plug-in intervals.
pub fn experiment_coverage(config: &CoverageConfig, exec: Exec) -> Result<Table> {
    if config.ns.is_empty() || config.betas.is_empty() || config.reps == 0 {
        return Err(Error::config("coverage grid is empty"));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::config(format!(
            "level must lie in (0, 1), got {}",
            config.level
        )));
    }
    if config.k != 2 {
        return Err(Error::config(format!(
            "the coverage design uses K = 2, got {}",
            config.k
        )));
    }
    config.fit.validate()?;
    let mut table = Table::new(&["n", "m", "K", "beta"]);
    let mut cell = 0;
    for &n in &config.ns {
        for &beta in &config.betas {
            let design = SimDesign {
                n,
                m: n,
                k: config.k,
                rho: config.rho,
                beta_star: beta,
                seed: grid_seed(config.seed, cell),
                mc_reps: config.reps,
            };
            design.validate()?;
            cell += 1;
            let results = exec.map(config.reps, |rep| -> Option<CoverageRecord> {
                let (gt, y) = gen_instance(&design, rep, Exec::Sequential).ok()?;
                let cfg = FitConfig {
                    k: config.k,
                    seed: child_seed(design.seed, 1_000_000 + rep as u64),
                    exec: Exec::Sequential,
                    ..config.fit.clone()
                };
                let fit = fit(&y, &cfg).ok()?;
                coverage_record(&fit, &gt, config.level, Exec::Sequential).ok()
            });
            let failed = results.iter().filter(|r| r.is_none()).count();
            let ok: Vec<CoverageRecord> = results.into_iter().flatten().collect();
            let labels = vec![
                n.to_string(),
                n.to_string(),
                config.k.to_string(),
                fmt_num(beta),
            ];
            for (f, name) in COVERAGE_FAMILIES.iter().enumerate() {
                let cov: Vec<f64> = ok.iter().map(|r| r.coverage[f]).collect();
                let len: Vec<f64> = ok.iter().map(|r| r.length[f]).collect();
                table.push(&labels, &format!("coverage_{name}"), &cov, failed);
                table.push(&labels, &format!("length_{name}"), &len, failed);
            }
        }
    }
    Ok(table)
}

/// Edge probability as a function of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Rate {
    /// `p = a / n`
    Constant { a: f64 },
    /// `p = n^eps / n`
    Power { eps: f64 },
}

impl Rate {
    pub fn p(&self, n: usize) -> f64 {
        let nf = n as f64;
        match *self {
            Rate::Constant { a } => (a / nf).min(1.0),
            Rate::Power { eps } => (nf.powf(eps) / nf).min(1.0),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Rate::Constant { a } => format!("{}/n", fmt_num(a)),
            Rate::Power { eps } => format!("n^{}/n", fmt_num(eps)),
        }
    }
}

/// `P(at least one of `count` independent groups of `size` Bernoulli(p) draws is all zero)`.
pub fn prob_some_empty(p: f64, size: usize, count: usize) -> f64 {
    let empty = (1.0 - p).powi(size as i32);
    1.0 - (1.0 - empty).powi(count as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsityConfig {
    pub ns: Vec<usize>,
    pub m_over_n: f64,
    pub rates: Vec<Rate>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SparsityConfig {
    fn default() -> Self {
        Self {
            ns: vec![200],
            m_over_n: 1.0,
            rates: vec![Rate::Constant { a: 0.5 }, Rate::Power { eps: 0.6 }],
            reps: 50,
            seed: 0,
        }
    }
}

/// Frequency of hypergraphs with an empty hyperlink or a null vertex under a
/// constant edge probability, next to the closed-form values.
pub fn experiment_sparsity(config: &SparsityConfig, exec: Exec) -> Result<Table> {
    if config.ns.is_empty() || config.rates.is_empty() || config.reps == 0 {
        return Err(Error::config("sparsity grid is empty"));
    }
    let mut table = Table::new(&["n", "m", "rate", "p"]);
    let mut cell = 0;
    for &n in &config.ns {
        for rate in &config.rates {
            let m = ((config.m_over_n * n as f64).round() as usize).max(1);
            let p = rate.p(n);
            let seed = grid_seed(config.seed, cell);
            cell += 1;
            let flags = exec.map(config.reps, |rep| -> Result<(f64, f64)> {
                let y = sample_incidence(
                    m,
                    n,
                    child_seed(seed, rep as u64),
                    Exec::Sequential,
                    |_, _| p,
                );
                let audit = y.to_hypergraph().audit()?;
                Ok((
                    f64::from(u8::from(!audit.non_informative_links.is_empty())),
                    f64::from(u8::from(!audit.null_vertices.is_empty())),
                ))
            });
            let flags = flags.into_iter().collect::<Result<Vec<_>>>()?;
            let labels = vec![n.to_string(), m.to_string(), rate.label(), fmt_num(p)];
            table.push(
                &labels,
                "empty_link",
                &flags.iter().map(|f| f.0).collect::<Vec<_>>(),
                0,
            );
            table.push(
                &labels,
                "null_vertex",
                &flags.iter().map(|f| f.1).collect::<Vec<_>>(),
                0,
            );
            table.push(&labels, "empty_link_oracle", &[prob_some_empty(p, n, m)], 0);
            table.push(
                &labels,
                "null_vertex_oracle",
                &[prob_some_empty(p, m, n)],
                0,
            );
        }
    }
    Ok(table)
}
