//! Plug-in asymptotic covariances and the intervals built from them.
//!
//! For a fitted point, with `q_j = (1, f_j)` and `w_ji = s'(theta_ji)`:
//!
//! * `A_inv[i] = (sum_j w_ji q_j q_j^T)^{-1}` is the covariance of
//!   `nu_i = (alpha_dagger_i, z_i)`;
//! * `B_inv[j] = (sum_i w_ji z_i z_i^T)^{-1}` is the covariance of `f_j`;
//! * `cross[j, i] = A_inv[i] (w_ji q_j z_i^T) B_inv[j]` couples the two.
//!
//! The global `exp(-beta)` and `m`, `n` normalizations of the asymptotic theory
//! cancel once the information sums are left unnormalized, so these are the
//! variances of the estimates themselves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::linalg::{spd_inverse, SymEigen};
use crate::model::{sigmoid, sigmoid_prime, UncenteredParams};
use crate::stats::{chi2_2_quantile, normal_critical};
use crate::{Error, Result};

/// Covariance blocks of a fitted model.
#[derive(Debug, Clone)]
pub struct PluginCovariances {
    params: UncenteredParams,
    a_inv: Vec<DMatrix<f64>>,
    b_inv: Vec<DMatrix<f64>>,
}

impl PluginCovariances {
    pub fn new(params: &UncenteredParams, exec: Exec) -> Result<Self> {
        let (m, n, k) = (params.m(), params.n(), params.k());
        let f = &params.f;
        let z = &params.z;
        let a_inv = exec
            .map(n, |i| {
                let mut info = DMatrix::zeros(k + 1, k + 1);
                let mut q = DVector::from_element(k + 1, 1.0);
                for j in 0..m {
                    for c in 0..k {
                        q[1 + c] = f[(j, c)];
                    }
                    info.ger(sigmoid_prime(params.theta(j, i)), &q, &q, 1.0);
                }
                invert(info, "vertex", i)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let b_inv = exec
            .map(m, |j| {
                let mut info = DMatrix::zeros(k, k);
                for i in 0..n {
                    let zi = z.row(i).transpose();
                    info.ger(sigmoid_prime(params.theta(j, i)), &zi, &zi, 1.0);
                }
                invert(info, "hyperlink", j)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params: params.clone(),
            a_inv,
            b_inv,
        })
    }

    pub fn params(&self) -> &UncenteredParams {
        &self.params
    }

    /// `(K+1) x (K+1)` covariance of `(alpha_dagger_i, z_i)`.
    pub fn cov_nu(&self, i: usize) -> &DMatrix<f64> {
        &self.a_inv[i]
    }

    /// `K x K` covariance of `f_j`.
    pub fn cov_f(&self, j: usize) -> &DMatrix<f64> {
        &self.b_inv[j]
    }

    /// `(K+1) x K` cross-covariance between `nu_i` and `f_j`.
    pub fn cross(&self, j: usize, i: usize) -> DMatrix<f64> {
        let q = self.q(j);
        let zi = self.params.z.row(i).transpose();
        let w = sigmoid_prime(self.params.theta(j, i));
        &self.a_inv[i] * (q * zi.transpose() * w) * &self.b_inv[j]
    }

    fn q(&self, j: usize) -> DVector<f64> {
        let k = self.params.k();
        DVector::from_fn(k + 1, |r, _| {
            if r == 0 {
                1.0
            } else {
                self.params.f[(j, r - 1)]
            }
        })
    }

    /// Plug-in variance of `theta_ji`:
    /// `q^T A_inv q + z^T B_inv z + 2 q^T cross z`.
    pub fn var_theta(&self, j: usize, i: usize) -> Result<f64> {
        let q = self.q(j);
        let zi = self.params.z.row(i).transpose();
        let v = (q.transpose() * &self.a_inv[i] * &q)[0]
            + (zi.transpose() * &self.b_inv[j] * &zi)[0]
            + 2.0 * (q.transpose() * self.cross(j, i) * &zi)[0];
        clamp_variance(v, j, i)
    }

    /// The same variance as a single quadratic form in the assembled joint
    /// covariance `[[A_inv, cross], [cross^T, B_inv]]`.
    pub fn var_theta_joint(&self, j: usize, i: usize) -> Result<f64> {
        let k = self.params.k();
        let d = 2 * k + 1;
        let cross = self.cross(j, i);
        let mut joint = DMatrix::zeros(d, d);
        joint
            .view_mut((0, 0), (k + 1, k + 1))
            .copy_from(&self.a_inv[i]);
        joint
            .view_mut((k + 1, k + 1), (k, k))
            .copy_from(&self.b_inv[j]);
        joint.view_mut((0, k + 1), (k + 1, k)).copy_from(&cross);
        joint
            .view_mut((k + 1, 0), (k, k + 1))
            .copy_from(&cross.transpose());
        let mut x = DVector::zeros(d);
        x.rows_mut(0, k + 1).copy_from(&self.q(j));
        x.rows_mut(k + 1, k)
            .copy_from(&self.params.z.row(i).transpose());
        clamp_variance((x.transpose() * &joint * &x)[0], j, i)
    }

    /// Delta-method variance of `p_ji = s(theta_ji)`.
    pub fn var_p(&self, j: usize, i: usize) -> Result<f64> {
        let w = sigmoid_prime(self.params.theta(j, i));
        Ok(w * w * self.var_theta(j, i)?)
    }

    pub fn variance(&self, target: Target) -> Result<f64> {
        self.check(target)?;
        match target {
            Target::AlphaDagger(i) => Ok(self.a_inv[i][(0, 0)]),
            Target::Z(i, c) => Ok(self.a_inv[i][(1 + c, 1 + c)]),
            Target::F(j, c) => Ok(self.b_inv[j][(c, c)]),
            Target::Theta(j, i) => self.var_theta(j, i),
            Target::P(j, i) => self.var_p(j, i),
        }
    }

    pub fn estimate(&self, target: Target) -> f64 {
        let p = &self.params;
        match target {
            Target::AlphaDagger(i) => p.alpha_dagger[i],
            Target::Z(i, c) => p.z[(i, c)],
            Target::F(j, c) => p.f[(j, c)],
            Target::Theta(j, i) => p.theta(j, i),
            Target::P(j, i) => sigmoid(p.theta(j, i)),
        }
    }

    /// Normal-approximation interval at `level`. Intervals for `p` are
    /// clipped to `[0, 1]`; `half_width` keeps the unclipped value.
    pub fn interval(&self, target: Target, level: f64) -> Result<ConfidenceInterval> {
        check_level(level)?;
        let variance = self.variance(target)?;
        let center = self.estimate(target);
        let half_width = normal_critical(level) * variance.sqrt();
        let (mut lo, mut hi) = (center - half_width, center + half_width);
        if matches!(target, Target::P(..)) {
            lo = lo.max(0.0);
            hi = hi.min(1.0);
        }
        Ok(ConfidenceInterval {
            target,
            center,
            variance,
            half_width,
            lo,
            hi,
            level,
        })
    }

    /// Confidence region for a two-dimensional `z_i`.
    pub fn ellipse(&self, i: usize, level: f64) -> Result<ConfidenceEllipse> {
        check_level(level)?;
        if self.params.k() != 2 {
            return Err(Error::domain(format!(
                "confidence ellipses need K = 2, the fit has K = {}",
                self.params.k()
            )));
        }
        self.check(Target::Z(i, 0))?;
        let a = &self.a_inv[i];
        Ok(ConfidenceEllipse {
            vertex: i,
            center: [self.params.z[(i, 0)], self.params.z[(i, 1)]],
            shape: [[a[(1, 1)], a[(1, 2)]], [a[(2, 1)], a[(2, 2)]]],
            radius2: chi2_2_quantile(level),
            level,
        })
    }

    /// Every `alpha_dagger`, `z` and `f` target, vertices first.
    pub fn parameter_targets(&self) -> Vec<Target> {
        let (m, n, k) = (self.params.m(), self.params.n(), self.params.k());
        let mut t = Vec::with_capacity((k + 1) * n + k * m);
        for i in 0..n {
            t.push(Target::AlphaDagger(i));
            t.extend((0..k).map(|c| Target::Z(i, c)));
        }
        for j in 0..m {
            t.extend((0..k).map(|c| Target::F(j, c)));
        }
        t
    }

    fn check(&self, target: Target) -> Result<()> {
        let (m, n, k) = (self.params.m(), self.params.n(), self.params.k());
        let ok = match target {
            Target::AlphaDagger(i) => i < n,
            Target::Z(i, c) => i < n && c < k,
            Target::F(j, c) => j < m && c < k,
            Target::Theta(j, i) | Target::P(j, i) => j < m && i < n,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "{target} is out of range for m = {m}, n = {n}, K = {k}"
            )))
        }
    }
}

fn invert(info: DMatrix<f64>, what: &str, index: usize) -> Result<DMatrix<f64>> {
    let e = SymEigen::new(&info);
    let top = e.values.max();
    let well_posed = top > 0.0 && e.values.min() > 1e-12 * top;
    well_posed
        .then(|| spd_inverse(&info))
        .flatten()
        .ok_or_else(|| {
            Error::RankDeficient(format!(
                "information matrix of {what} {} is singular",
                index + 1
            ))
        })
}

fn clamp_variance(v: f64, j: usize, i: usize) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -1e-12 {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!(
            "negative plug-in variance {v:e} for theta({}, {})",
            j + 1,
            i + 1
        )))
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )))
    }
}

/// A scalar quantity of a fitted model. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    AlphaDagger(usize),
    /// `(vertex, coordinate)`
    Z(usize, usize),
    /// `(hyperlink, coordinate)`
    F(usize, usize),
    /// `(hyperlink, vertex)`
    Theta(usize, usize),
    /// `(hyperlink, vertex)`
    P(usize, usize),
}

impl Target {
    pub fn family(&self) -> &'static str {
        match self {
            Target::AlphaDagger(_) => "alpha_dagger",
            Target::Z(..) => "z",
            Target::F(..) => "f",
            Target::Theta(..) => "theta",
            Target::P(..) => "p",
        }
    }

    /// One-based index label: `i`, `i:k`, `j:k` or `j:i`.
    pub fn index_label(&self) -> String {
        match *self {
            Target::AlphaDagger(i) => format!("{}", i + 1),
            Target::Z(a, b) | Target::F(a, b) | Target::Theta(a, b) | Target::P(a, b) => {
                format!("{}:{}", a + 1, b + 1)
            }
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[{}]", self.family(), self.index_label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub target: Target,
    pub center: f64,
    pub variance: f64,
    pub half_width: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    pub fn covers(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `{ x : (x - center)^T shape^{-1} (x - center) <= radius2 }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceEllipse {
    pub vertex: usize,
    pub center: [f64; 2],
    pub shape: [[f64; 2]; 2],
    pub radius2: f64,
    pub level: f64,
}

impl ConfidenceEllipse {
    fn shape_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                self.shape[0][0],
                self.shape[0][1],
                self.shape[1][0],
                self.shape[1][1],
            ],
        )
    }

    /// Semi-axis lengths (descending) and their unit directions as columns.
    pub fn axes(&self) -> ([f64; 2], DMatrix<f64>) {
        let e = SymEigen::new(&self.shape_matrix());
        let len = |v: f64| (v.max(0.0) * self.radius2).sqrt();
        ([len(e.values[0]), len(e.values[1])], e.vectors)
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        let d = DVector::from_vec(vec![x[0] - self.center[0], x[1] - self.center[1]]);
        match spd_inverse(&self.shape_matrix()) {
            Some(inv) => (d.transpose() * inv * &d)[0] <= self.radius2,
            None => false,
        }
    }

    /// `count` points on the boundary, counter-clockwise from the major axis.
    pub fn boundary(&self, count: usize) -> Vec<[f64; 2]> {
        let (len, dirs) = self.axes();
        (0..count)
            .map(|s| {
                let t = std::f64::consts::TAU * s as f64 / count as f64;
                let (a, b) = (len[0] * t.cos(), len[1] * t.sin());
                [
                    self.center[0] + a * dirs[(0, 0)] + b * dirs[(0, 1)],
                    self.center[1] + a * dirs[(1, 0)] + b * dirs[(1, 1)],
                ]
            })
            .collect()
    }
}
