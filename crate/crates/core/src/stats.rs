//! Small statistical helpers: moments with standard errors, the
//! Kolmogorov-Smirnov statistic, and a deterministic parallel reduction.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Sample mean and standard error of the mean. The standard error is `None`
/// for fewer than two observations.
pub fn mean_and_se(data: &[f64]) -> (f64, Option<f64>) {
    let n = data.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = data.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

/// Unbiased sample variance.
pub fn variance(data: &[f64]) -> f64 {
    let n = data.len();
    assert!(n >= 2, "variance needs at least two observations");
    let mean = data.iter().sum::<f64>() / n as f64;
    data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Kolmogorov-Smirnov distance between the empirical law of `data` and the
/// reference CDF. `data` need not be sorted.
pub fn ks_statistic<F: Fn(f64) -> f64>(data: &[f64], cdf: F) -> f64 {
    assert!(!data.is_empty());
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Critical value of the two-sided KS test at the 5% level (asymptotic).
pub fn ks_critical_5pct(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}

/// Map `f` over `0..n` in parallel and return the results ordered by index.
///
/// The output ordering (and hence any subsequent sequential reduction) is
/// independent of the number of worker threads, which keeps ensemble
/// statistics bitwise reproducible.
pub fn par_map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Same as [`par_map_indexed`] but each item may fail.
pub fn try_par_map_indexed<T, E, F>(n: usize, f: F) -> std::result::Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> std::result::Result<T, E> + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Ordinary least-squares slope of y against x, with the standard error of
/// the slope estimated from the residuals.
pub fn ls_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    assert!(n >= 3.0, "slope standard error needs at least 3 points");
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>();
    let sxy = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (intercept + slope * a)).powi(2))
        .sum::<f64>();
    let se = (ss_res / (n - 2.0) / sxx).sqrt();
    (slope, se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_se_basics() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0]);
        assert_relative_eq!(m, 2.0);
        assert_relative_eq!(se.unwrap(), (1.0f64 / 3.0).sqrt());
        let (m1, se1) = mean_and_se(&[5.0]);
        assert_eq!(m1, 5.0);
        assert!(se1.is_none());
    }

    #[test]
    fn ks_of_exact_uniform_grid_is_small() {
        let n = 1000;
        let data: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&data, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.5 / n as f64 + 1e-12, "d = {d}");
    }

    #[test]
    fn slope_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        let (s, se) = ls_slope(&x, &y);
        assert_relative_eq!(s, 2.0, epsilon = 1e-12);
        assert!(se < 1e-12);
    }
}
