//! Consistency of the binned conditional-expectation estimator against the
//! closed-form coefficients, including the L^2-projection optimality of the
//! analytic conditional expectation.

use coarse_forge_core::diagnostics::coefficient_gap;
use coarse_forge_core::effective::{
    analytic_effective, effective_from_profile, estimate_conditional, Bins,
};
use coarse_forge_core::models::{model_from_spec, CoarseMap};
use coarse_forge_core::sampling::sample_equilibrium;
use coarse_forge_core::stats;

#[test]
fn estimator_error_shrinks_when_sample_quadruples() {
    let model = model_from_spec("nr-gauss(4,0.5)").unwrap();
    let map = CoarseMap::first_coordinate(2);
    let bins = Bins::uniform(-2.0, 2.0, 25).unwrap();
    let max_central_dev = |n: usize, seed: u64| -> f64 {
        let sample = sample_equilibrium(&model, n, seed).unwrap();
        let profile = estimate_conditional(&sample, &model, &map, &bins).unwrap();
        let mut dev = 0.0f64;
        for i in profile.valid_bins() {
            if profile.centers[i].abs() <= 1.5 {
                dev = dev.max((profile.drift_mean[i] + profile.centers[i]).abs());
            }
        }
        dev
    };
    let coarse = max_central_dev(125_000, 40);
    let fine = max_central_dev(500_000, 41);
    let ratio = fine / coarse;
    assert!(ratio <= 0.6, "deviation ratio {ratio} ({coarse} -> {fine})");
}

#[test]
fn analytic_conditional_expectation_is_l2_optimal() {
    // On a fresh evaluation sample, E(F^1 - b_est)^2 - E(F^1 - b)^2 equals
    // E(b_est - b)^2 up to Monte Carlo error: the cross term vanishes because
    // b is the conditional mean. The excess is computed independently by
    // quadrature of the interpolant against the analytic drift.
    let model = model_from_spec("nr-gauss(4,0.5)").unwrap();
    let map = CoarseMap::first_coordinate(2);
    let train = sample_equilibrium(&model, 200_000, 50).unwrap();
    let bins = Bins::uniform(-3.0, 3.0, 30).unwrap();
    let profile = estimate_conditional(&train, &model, &map, &bins).unwrap();
    let est = effective_from_profile(&profile).unwrap();
    let exact = analytic_effective(&model).unwrap();

    let eval = sample_equilibrium(&model, 400_000, 51).unwrap();
    let n = eval.len();
    let mut diffs = Vec::with_capacity(n);
    let mut fbuf = [0.0; 2];
    for i in 0..n {
        let x = eval.point(i);
        model.eval_drift_into(x, &mut fbuf);
        let de = (fbuf[0] - est.drift1(x[0])).powi(2);
        let da = (fbuf[0] - exact.drift1(x[0])).powi(2);
        diffs.push(de - da);
    }
    let (mean_excess, se) = stats::mean_and_se(&diffs);

    // Quadrature of (b_est - b)^2 under the standard normal marginal.
    let m = 40_001;
    let lo = -8.0;
    let h = 16.0 / (m - 1) as f64;
    let mut q = 0.0;
    for i in 0..m {
        let z = lo + i as f64 * h;
        let w = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let tr = if i == 0 || i == m - 1 { 0.5 } else { 1.0 };
        q += tr * w * (est.drift1(z) + z).powi(2) * h;
    }

    assert!(
        (mean_excess - q).abs() <= 3.0 * se.unwrap() + 1e-6,
        "excess {mean_excess} vs quadrature {q} (se {:?})",
        se
    );
    // Monotonicity: the estimated surrogate can only do worse.
    assert!(mean_excess >= -3.0 * se.unwrap());
}

#[test]
fn estimated_diffusion_is_nonnegative_and_bounded() {
    let model = model_from_spec("var-diff(4,0.5,0.5)").unwrap();
    let map = CoarseMap::first_coordinate(2);
    let sample = sample_equilibrium(&model, 200_000, 60).unwrap();
    let bins = Bins::uniform(-2.5, 2.5, 25).unwrap();
    let profile = estimate_conditional(&sample, &model, &map, &bins).unwrap();
    let est = effective_from_profile(&profile).unwrap();
    // |Sigma^1| = sqrt(1 + delta sin^2) <= sqrt(1.5).
    let cap = 1.5f64.sqrt();
    let mut z = -4.0;
    while z <= 4.0 {
        let s = est.diffusion1(z);
        assert!((0.0..=cap + 1e-9).contains(&s), "sigma({z}) = {s}");
        z += 0.05;
    }
}

#[test]
fn estimated_coefficients_feed_the_gap_estimator() {
    // gap_drift with the estimated b stays close to the analytic value
    // gamma^2 a = 1; clamped queries are counted, not silently dropped.
    let model = model_from_spec("nr-gauss(4,0.5)").unwrap();
    let map = CoarseMap::first_coordinate(2);
    let train = sample_equilibrium(&model, 400_000, 70).unwrap();
    let bins = Bins::uniform(-3.0, 3.0, 30).unwrap();
    let profile = estimate_conditional(&train, &model, &map, &bins).unwrap();
    let est = effective_from_profile(&profile).unwrap();
    let eval = sample_equilibrium(&model, 200_000, 71).unwrap();
    let gap = coefficient_gap(&model, &est, &eval).unwrap();
    assert!((gap.gap_drift - 1.0).abs() < 0.05, "gap_drift = {}", gap.gap_drift);
    // ~0.27% of standard-normal mass lies outside [-3, 3].
    let frac = gap.clamped as f64 / eval.len() as f64;
    assert!(frac < 0.01, "clamped fraction {frac}");
}
