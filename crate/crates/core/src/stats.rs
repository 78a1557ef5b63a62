//! Small statistical helpers: quantiles of reference distributions and of
//! samples.

use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided standard normal critical value `z_{(1+level)/2}`.
pub fn normal_critical(level: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(0.5 * (1.0 + level))
}

/// Quantile of the chi-square distribution with two degrees of freedom.
pub fn chi2_2_quantile(level: f64) -> f64 {
    -2.0 * (-level).ln_1p()
}

/// Linear-interpolation sample quantile (type 7). `NaN`s are skipped.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_quantiles() {
        assert_relative_eq!(normal_critical(0.95), 1.959_963_984_540_054, epsilon = 1e-9);
        assert_relative_eq!(
            chi2_2_quantile(0.95),
            5.991_464_547_107_979,
            epsilon = 1e-12
        );
        assert_relative_eq!(chi2_2_quantile(0.95), -2.0 * 0.05f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn sample_quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_relative_eq!(quantile(&v, 0.25), 1.75);
        assert!(median(&[]).is_nan());
    }
}
