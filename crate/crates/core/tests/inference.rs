use approx::assert_relative_eq;
use hyperlatent::estimator::{fit, FitConfig};
use hyperlatent::model::{sigmoid, UncenteredParams};
use hyperlatent::simulate::{gen_ground_truth, gen_incidence, gen_instance, SimDesign};
use hyperlatent::stats::normal_critical;
use hyperlatent::{rng, Exec, PluginCovariances, Target};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn fitted(n: usize, m: usize, seed: u64) -> UncenteredParams {
    let d = SimDesign {
        n,
        m,
        k: 2,
        rho: 0.5,
        beta_star: -0.5,
        seed,
        ..SimDesign::default()
    };
    let (_, y) = gen_instance(&d, 0, Exec::Parallel).unwrap();
    fit(&y, &FitConfig::with_k(2)).unwrap().params
}

fn sprime(t: f64) -> f64 {
    sigmoid(t) * (1.0 - sigmoid(t))
}

/// Information sums accumulated column by column over the transposed loop
/// order, then inverted with a general LU solver.
fn oracle_blocks(p: &UncenteredParams) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let (m, n, k) = (p.m(), p.n(), p.k());
    let mut a = vec![DMatrix::<f64>::zeros(k + 1, k + 1); n];
    let mut b = vec![DMatrix::<f64>::zeros(k, k); m];
    for j in (0..m).rev() {
        for i in (0..n).rev() {
            let w = sprime(p.theta(j, i));
            for c in 0..=k {
                for d in 0..=k {
                    let qc = if c == 0 { 1.0 } else { p.f[(j, c - 1)] };
                    let qd = if d == 0 { 1.0 } else { p.f[(j, d - 1)] };
                    a[i][(c, d)] += w * qc * qd;
                }
            }
            for c in 0..k {
                for d in 0..k {
                    b[j][(c, d)] += w * p.z[(i, c)] * p.z[(i, d)];
                }
            }
        }
    }
    let inv = |x: DMatrix<f64>| x.lu().try_inverse().unwrap();
    (
        a.into_iter().map(inv).collect(),
        b.into_iter().map(inv).collect(),
    )
}

#[test]
fn covariance_blocks_match_reordered_accumulation() {
    let p = fitted(60, 90, 1);
    let cov = PluginCovariances::new(&p, Exec::Parallel).unwrap();
    let (a, b) = oracle_blocks(&p);
    for i in 0..p.n() {
        let d = cov.cov_nu(i) - &a[i];
        assert!(d.amax() <= 1e-10 * a[i].amax(), "vertex {i}");
    }
    for j in 0..p.m() {
        let d = cov.cov_f(j) - &b[j];
        assert!(d.amax() <= 1e-10 * b[j].amax(), "hyperlink {j}");
    }
}

#[test]
fn blocks_are_symmetric_positive_definite_on_fits() {
    for seed in 0..3 {
        let p = fitted(80, 120, 10 + seed);
        let cov = PluginCovariances::new(&p, Exec::Parallel).unwrap();
        let mut r = rng::rng(seed);
        for _ in 0..100 {
            let j = r.random_range(0..p.m());
            let i = r.random_range(0..p.n());
            for s in [cov.cov_f(j), cov.cov_nu(i)] {
                assert!((s - s.transpose()).amax() <= 1e-12 * s.amax());
                assert!(s.clone().cholesky().is_some());
            }
        }
    }
}

#[test]
fn theta_variance_forms_agree_and_p_is_delta_method() {
    let p = fitted(50, 70, 3);
    let cov = PluginCovariances::new(&p, Exec::Sequential).unwrap();
    for (j, i) in [(0, 0), (5, 17), (69, 49), (33, 2)] {
        let v = cov.var_theta(j, i).unwrap();
        assert_relative_eq!(v, cov.var_theta_joint(j, i).unwrap(), max_relative = 1e-9);
        // three-term expansion with an explicitly built cross block
        let k = p.k();
        let mut q = DVector::from_element(k + 1, 1.0);
        for c in 0..k {
            q[1 + c] = p.f[(j, c)];
        }
        let z = p.z.row(i).transpose();
        let cross = cov.cov_nu(i) * (&q * z.transpose()) * cov.cov_f(j) * sprime(p.theta(j, i));
        let three = (q.transpose() * cov.cov_nu(i) * &q)[0]
            + (z.transpose() * cov.cov_f(j) * &z)[0]
            + 2.0 * (q.transpose() * &cross * &z)[0];
        assert_relative_eq!(v, three, max_relative = 1e-9);
        let s = sprime(p.theta(j, i));
        assert_relative_eq!(cov.var_p(j, i).unwrap(), s * s * v, max_relative = 1e-12);
    }
}

#[test]
fn intervals_widen_with_level_and_p_stays_in_unit_interval() {
    let p = fitted(50, 70, 4);
    let cov = PluginCovariances::new(&p, Exec::Sequential).unwrap();
    for t in [
        Target::AlphaDagger(3),
        Target::Z(7, 1),
        Target::F(11, 0),
        Target::Theta(2, 2),
    ] {
        let mut last = 0.0;
        for level in [0.5, 0.8, 0.9, 0.95, 0.99] {
            let ci = cov.interval(t, level).unwrap();
            assert!(ci.half_width > last);
            last = ci.half_width;
            assert_relative_eq!(
                ci.half_width,
                normal_critical(level) * ci.variance.sqrt(),
                max_relative = 1e-12
            );
        }
    }
    for j in 0..p.m() {
        for i in 0..p.n() {
            let ci = cov.interval(Target::P(j, i), 0.99).unwrap();
            assert!(ci.lo >= 0.0 && ci.hi <= 1.0);
        }
    }
}

#[test]
fn ellipse_axes_follow_the_z_block() {
    let p = fitted(50, 70, 5);
    let cov = PluginCovariances::new(&p, Exec::Sequential).unwrap();
    let e = cov.ellipse(9, 0.95).unwrap();
    assert_relative_eq!(e.radius2, -2.0 * 0.05f64.ln(), max_relative = 1e-12);
    let block = cov.cov_nu(9).view((1, 1), (2, 2)).clone_owned();
    let shape = DMatrix::from_fn(2, 2, |r, c| e.shape[r][c]);
    assert!((&shape - &block).amax() < 1e-15);
    let (lengths, vectors) = e.axes();
    let eig = block.clone().symmetric_eigen();
    let mut expected: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|l| (l * e.radius2).sqrt())
        .collect();
    expected.sort_by(|a, b| b.total_cmp(a));
    let mut got = lengths.to_vec();
    got.sort_by(|a, b| b.total_cmp(a));
    assert_relative_eq!(got[0], expected[0], max_relative = 1e-10);
    assert_relative_eq!(got[1], expected[1], max_relative = 1e-10);
    for c in 0..2 {
        let v = vectors.column(c);
        let bv = &block * v;
        let lambda = v.dot(&bv);
        assert!((bv - v * lambda).amax() < 1e-12);
    }
    for pt in e.boundary(32) {
        let off = [
            pt[0] + (pt[0] - e.center[0]) * 1e-6,
            pt[1] + (pt[1] - e.center[1]) * 1e-6,
        ];
        assert!(!e.contains(off));
    }
    assert!(e.contains([e.center[0], e.center[1]]));
}

#[test]
fn intervals_around_known_normal_draws_cover_at_nominal_rate() {
    let mut r = rng::rng(77);
    let reps = 20_000;
    let (truth, sd) = (0.3, 0.7);
    let z = normal_critical(0.9);
    let hits = (0..reps)
        .filter(|_| {
            let x: f64 = StandardNormal.sample(&mut r);
            let est = truth + sd * x;
            (est - z * sd..=est + z * sd).contains(&truth)
        })
        .count();
    let rate = hits as f64 / reps as f64;
    let se = (0.9 * 0.1 / reps as f64).sqrt();
    assert!((rate - 0.9).abs() < 4.0 * se, "coverage {rate}");
}

/// Refits over fresh data from one fixed truth; the spread of the estimates
/// should match the plug-in variance.
#[test]
fn plug_in_variance_matches_sampling_spread() {
    let design = SimDesign {
        n: 150,
        m: 150,
        k: 2,
        rho: 0.5,
        beta_star: 0.0,
        seed: 2024,
        ..SimDesign::default()
    };
    let gt = gen_ground_truth(&design).unwrap();
    let reps = 60;
    let cells: Vec<(usize, usize)> = {
        let mut r = rng::rng(5);
        (0..20)
            .map(|_| (r.random_range(0..150), r.random_range(0..150)))
            .collect()
    };
    let mut est = vec![Vec::new(); cells.len()];
    let mut plug = vec![Vec::new(); cells.len()];
    for rep in 0..reps {
        let y = gen_incidence(&gt, rng::child_seed(99, rep), Exec::Parallel);
        let p = fit(
            &y,
            &FitConfig {
                seed: rep,
                ..FitConfig::with_k(2)
            },
        )
        .unwrap()
        .params;
        let cov = PluginCovariances::new(&p, Exec::Parallel).unwrap();
        for (c, &(j, i)) in cells.iter().enumerate() {
            est[c].push(p.theta(j, i));
            plug[c].push(cov.var_theta(j, i).unwrap());
        }
    }
    let ratios: Vec<f64> = (0..cells.len())
        .map(|c| {
            let mu = est[c].iter().sum::<f64>() / reps as f64;
            let emp = est[c].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (reps - 1) as f64;
            emp / (plug[c].iter().sum::<f64>() / reps as f64)
        })
        .collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(
        (0.7..=1.4).contains(&mean_ratio),
        "mean ratio {mean_ratio}, per cell {ratios:?}"
    );
}
