use approx::assert_relative_eq;
use hyperlatent::model::{
    identifiability_transform, log_likelihood, penalty, sign_align, ConstraintResiduals,
    UncenteredParams,
};
use hyperlatent::{rng, Exec, IncidenceMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn draw(m: usize, n: usize, k: usize, seed: u64) -> (UncenteredParams, IncidenceMatrix) {
    let mut r = rng::rng(seed);
    let mut g = |s: f64| -> f64 {
        let x: f64 = StandardNormal.sample(&mut r);
        s * x
    };
    let p = UncenteredParams {
        alpha_dagger: DVector::from_fn(n, |_, _| g(1.0) - 0.5),
        f: DMatrix::from_fn(m, k, |_, _| g(0.8)),
        z: DMatrix::from_fn(n, k, |_, _| g(0.8)),
    };
    let mut r = rng::rng(seed ^ 0xabcdef);
    let cells: Vec<bool> = (0..m * n).map(|_| r.random_bool(0.35)).collect();
    let y = IncidenceMatrix::from_fn(m, n, |j, i| cells[j * n + i]);
    (p, y)
}

fn theta_loop(p: &UncenteredParams, j: usize, i: usize) -> f64 {
    let mut t = p.alpha_dagger[i];
    for c in 0..p.z.ncols() {
        t += p.f[(j, c)] * p.z[(i, c)];
    }
    t
}

#[test]
fn theta_matrix_matches_scalar_loop() {
    let (p, _) = draw(7, 9, 3, 1);
    let t = p.theta_matrix();
    for j in 0..7 {
        for i in 0..9 {
            assert_relative_eq!(t[(j, i)], theta_loop(&p, j, i), epsilon = 1e-14);
            assert_relative_eq!(p.theta(j, i), theta_loop(&p, j, i), epsilon = 1e-14);
        }
    }
}

#[test]
fn log_likelihood_matches_bernoulli_sum() {
    for seed in 0..10 {
        let (p, y) = draw(6, 8, 2, seed);
        let mut oracle = 0.0;
        for j in 0..6 {
            for i in 0..8 {
                let pr = 1.0 / (1.0 + (-theta_loop(&p, j, i)).exp());
                oracle += if y.get(j, i) {
                    pr.ln()
                } else {
                    (1.0 - pr).ln()
                };
            }
        }
        let ll = log_likelihood(&p, &y, Exec::Sequential).unwrap();
        assert_relative_eq!(ll, oracle, max_relative = 1e-12);
        let by_link: f64 = (0..6)
            .map(|j| {
                let e: Vec<usize> = y.row(j).iter().map(|&i| i as usize).collect();
                p.hyperlink_log_probability(j, &e)
            })
            .sum();
        assert_relative_eq!(ll, by_link, max_relative = 1e-12);
    }
}

#[test]
fn sequential_and_parallel_likelihoods_agree_exactly() {
    let (p, y) = draw(40, 30, 2, 5);
    let a = log_likelihood(&p, &y, Exec::Sequential).unwrap();
    let b = log_likelihood(&p, &y, Exec::Parallel).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn hyperlink_probability_of_a_single_vertex_set() {
    let (p, _) = draw(2, 3, 2, 9);
    let pr = |j, i| 1.0 / (1.0 + (-theta_loop(&p, j, i)).exp());
    let expected = pr(1, 1) * (1.0 - pr(1, 0)) * (1.0 - pr(1, 2));
    assert_relative_eq!(
        p.hyperlink_probability(1, &[1]),
        expected,
        max_relative = 1e-12
    );
}

fn centered(mut f: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in f.column_iter_mut() {
        let mu = c.mean();
        c.add_scalar_mut(-mu);
    }
    f
}

/// Eigenvalues of `(mn)^{-1} F^T F Z^T Z` for K = 2 from the characteristic
/// polynomial; this product is similar to the matrix the transform diagonalizes.
fn spectrum_2x2(f: &DMatrix<f64>, z: &DMatrix<f64>) -> [f64; 2] {
    let scale = (f.nrows() * z.nrows()) as f64;
    let a = f.tr_mul(f) * z.tr_mul(z) / scale;
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let disc = (tr * tr - 4.0 * det).sqrt();
    [(tr + disc) / 2.0, (tr - disc) / 2.0]
}

#[test]
fn identifiability_transform_against_closed_form_spectrum() {
    for seed in 0..20 {
        let (p, _) = draw(60, 45, 2, 100 + seed);
        let f = centered(p.f.clone());
        let c = identifiability_transform(&f, &p.z).unwrap();
        let [l1, l2] = spectrum_2x2(&f, &p.z);
        assert_relative_eq!(c.spectrum[0], l1, max_relative = 1e-10);
        assert_relative_eq!(c.spectrum[1], l2, max_relative = 1e-10);
        let gf = c.f.tr_mul(&c.f) / 60.0;
        let gz = c.z.tr_mul(&c.z) / 45.0;
        assert_relative_eq!(gf[(0, 0)], l1.sqrt(), max_relative = 1e-10);
        assert_relative_eq!(gz[(1, 1)], l2.sqrt(), max_relative = 1e-10);
        assert!(gf[(1, 0)].abs() < 1e-12 && gz[(1, 0)].abs() < 1e-12);
        let diff = &f * p.z.transpose() - &c.f * c.z.transpose();
        assert!(diff.amax() < 1e-10);
        assert!(c.residuals.max() < 1e-10);
        assert!(penalty(&c.z, &c.f, 1.0) < 1e-16);
    }
}

#[test]
fn identifiability_transform_is_invariant_to_reparameterization() {
    let (p, _) = draw(50, 40, 3, 7);
    let f = centered(p.f.clone());
    let base = identifiability_transform(&f, &p.z).unwrap();
    let g = DMatrix::from_row_slice(3, 3, &[1.3, 0.2, -0.4, 0.1, 0.7, 0.3, -0.2, 0.5, 1.1]);
    let g_inv_t = g.clone().try_inverse().unwrap().transpose();
    let moved = identifiability_transform(&(&f * &g), &(&p.z * g_inv_t)).unwrap();
    let (f1, z1, _) = sign_align(&base.f, &base.z, None);
    let (f2, z2, _) = sign_align(&moved.f, &moved.z, None);
    assert!((f1 - f2).amax() < 1e-9);
    assert!((z1 - z2).amax() < 1e-9);
}

#[test]
fn sign_align_recovers_flips() {
    let (p, _) = draw(20, 15, 3, 11);
    let d = [-1.0, 1.0, -1.0];
    let mut f = p.f.clone();
    let mut z = p.z.clone();
    for (c, s) in d.iter().enumerate() {
        f.column_mut(c).scale_mut(*s);
        z.column_mut(c).scale_mut(*s);
    }
    let (f2, z2, signs) = sign_align(&f, &z, Some(&p.z));
    assert_eq!(signs, d.to_vec());
    assert_eq!(f2, p.f);
    assert_eq!(z2, p.z);
}

#[test]
fn residuals_of_a_non_canonical_pair() {
    let f = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
    let z = DMatrix::from_row_slice(1, 1, &[2.0]);
    let r = ConstraintResiduals::of(&f, &z);
    // F^T F / m = 5, Z^T Z / n = 4, column mean 2
    assert_relative_eq!(r.diag_equality, 1.0);
    assert_relative_eq!(r.f_centering, 2.0);
    assert_eq!(r.off_diag_f, 0.0);
    assert_relative_eq!(penalty(&z, &f, 1.0), 2.0 / 8.0 * 1.0 + 2.0 / 2.0 * 4.0);
}
