//! Ensemble-level oracles for the coupled simulation: a fine-step
//! brute-force reference, strong self-convergence of the integrator,
//! stationary statistics, bound-table consistency and reproducibility.

use coarse_forge_core::coupled::{
    error_stats, simulate_coupled, simulate_coupled_random_clock,
};
use coarse_forge_core::diagnostics::full_report;
use coarse_forge_core::effective::analytic_effective;
use coarse_forge_core::models::{model_from_spec, CoarseMap};
use coarse_forge_core::sampling::{brownian, euler_maruyama, sample_equilibrium, NoisePath};
use coarse_forge_core::stats;

fn map2() -> CoarseMap {
    CoarseMap::first_coordinate(2)
}

/// Sum blocks of `factor` fine increments into one coarse path.
fn coarsen(fine: &NoisePath, factor: usize) -> NoisePath {
    let n = fine.n_steps / factor;
    let d = fine.noise_dim;
    let mut increments = vec![0.0; n * d];
    for s in 0..n {
        for j in 0..d {
            let mut acc = 0.0;
            for sub in 0..factor {
                acc += fine.step(s * factor + sub)[j];
            }
            increments[s * d + j] = acc;
        }
    }
    NoisePath {
        dt: fine.dt * factor as f64,
        n_steps: n,
        noise_dim: d,
        increments,
        seed: fine.seed,
        path_index: fine.path_index,
    }
}

#[test]
fn em_strong_self_convergence_order_at_least_half() {
    // Reference: the same noise path refined by summing sub-increments.
    let model = model_from_spec("nr-gauss(4,0.5)").unwrap();
    let n_paths = 300;
    let dt = 1e-2;
    let n_coarse = 100;
    let mut e_dt = Vec::with_capacity(n_paths);
    let mut e_dt2 = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let fine = brownian(1001, p as u64, n_coarse * 64, 2, dt / 64.0).unwrap();
        let x0 = [0.4, -0.2];
        let reference = euler_maruyama(&model, &x0, &fine).unwrap();
        let r = reference.state(reference.n_steps()).to_vec();
        let c1 = euler_maruyama(&model, &x0, &coarsen(&fine, 64)).unwrap();
        let c2 = euler_maruyama(&model, &x0, &coarsen(&fine, 32)).unwrap();
        let d1 = c1.state(c1.n_steps());
        let d2 = c2.state(c2.n_steps());
        e_dt.push(((d1[0] - r[0]).powi(2) + (d1[1] - r[1]).powi(2)).sqrt());
        e_dt2.push(((d2[0] - r[0]).powi(2) + (d2[1] - r[1]).powi(2)).sqrt());
    }
    let (m1, _) = stats::mean_and_se(&e_dt);
    let (m2, _) = stats::mean_and_se(&e_dt2);
    let order = (m1 / m2).log2();
    assert!(order >= 0.5, "observed strong order {order} (e = {m1}, e/2 = {m2})");
}

#[test]
fn coupled_mean_matches_fine_step_oracle() {
    let model = model_from_spec("nr-gauss(4,0.5)").unwrap();
    let eff = analytic_effective(&model).unwrap();
    let map = map2();

    let run = simulate_coupled(&model, &eff, &map, 1e-3, 1.0, 10_000, 2024).unwrap();
    let s = error_stats(&run).unwrap();

    let oracle = simulate_coupled(&model, &eff, &map, 1e-5, 1.0, 1_000, 900).unwrap();
    let so = error_stats(&oracle).unwrap();

    let tol = 2.0 * (s.std_error.unwrap().powi(2) + so.std_error.unwrap().powi(2)).sqrt();
    assert!(
        (s.mean - so.mean).abs() <= tol,
        "mean {} vs oracle {} (tol {tol})",
        s.mean,
        so.mean
    );
}

#[test]
fn em_preserves_stationary_variance_up_to_dt() {
    // X ~ mu for all t; the EM chain distorts the stationary variance of X^1
    // by O(dt) on top of Monte Carlo error.
    let model = model_from_spec("nr-gauss(4,0.5)").unwrap();
    let n_paths = 3000;
    let finals: Vec<f64> = (0..n_paths)
        .map(|p| {
            let noise = brownian(55, p as u64, 2000, 2, 1e-3).unwrap();
            let init = sample_equilibrium(&model, 1, 7000 + p as u64).unwrap();
            let traj = euler_maruyama(&model, init.point(0), &noise).unwrap();
            traj.state(traj.n_steps())[0]
        })
        .collect();
    let var = stats::variance(&finals);
    assert!((var - 1.0).abs() < 0.08, "Var(X1_T) = {var}");
}

#[test]
fn equilibrium_pushforward_matches_xi_mu() {
    let model = model_from_spec("nr-gauss(4,0.5)").unwrap();
    let n = 50_000;
    let sample = sample_equilibrium(&model, n, 33).unwrap();
    let z: Vec<f64> = (0..n).map(|i| sample.point(i)[0]).collect();
    let d = stats::ks_statistic(&z, stats::std_normal_cdf);
    assert!(d < stats::ks_critical_5pct(n), "KS = {d}");
}

#[test]
fn measured_error_below_applicable_weak_bound_for_registry() {
    // Table-row check at T = 1 for every registry model.
    let cases = [
        ("torus-symplectic(1,0.7)", 0.45),
        ("nr-gauss(4,0.5)", 2.5),
        ("two-scale(4,0.5,0.5)", 2.5),
        ("var-diff(4,0.5,0.5)", 2.5),
    ];
    let map = map2();
    for (spec, r) in cases {
        let model = model_from_spec(spec).unwrap();
        let eff = analytic_effective(&model).unwrap();
        let run = simulate_coupled(&model, &eff, &map, 1e-3, 1.0, 500, 4242).unwrap();
        let s = error_stats(&run).unwrap();
        let sample = sample_equilibrium(&model, 100_000, 11).unwrap();
        let z_list: Vec<f64> = (-4..=4).map(|i| 0.25 * i as f64).collect();
        let report = full_report(&model, &map, &eff, &sample, &z_list, r, 1001, 1.0).unwrap();
        let bound = report.bounds.applicable_weak();
        let se = s.std_error.unwrap_or(0.0);
        assert!(
            s.mean <= bound + 3.0 * se,
            "{spec}: mean {} vs weak bound {bound}",
            s.mean
        );
    }
}

#[test]
fn ensemble_rerun_is_bitwise_identical_and_thread_count_independent() {
    let model = model_from_spec("var-diff(4,0.5,0.5)").unwrap();
    let eff = analytic_effective(&model).unwrap();
    let map = map2();
    let a = simulate_coupled(&model, &eff, &map, 1e-3, 0.5, 64, 9).unwrap();
    let b = simulate_coupled(&model, &eff, &map, 1e-3, 0.5, 64, 9).unwrap();
    assert_eq!(a.sup_err2, b.sup_err2);

    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = single.install(|| simulate_coupled(&model, &eff, &map, 1e-3, 0.5, 64, 9)).unwrap();
    assert_eq!(a.sup_err2, c.sup_err2);
}

#[test]
fn random_clock_gap_bounded_by_coefficient_variation() {
    // sup_t |psi - phi| <= int_0^T |(|Sigma^1|^2 - sigma^2)(X_s)| ds, whose
    // stationary mean is T * delta * E|sin^2(x2) - E sin^2|; the right side
    // is evaluated by 1-D quadrature under the exact Gaussian marginal.
    let a = 4.0;
    let delta = 0.5;
    let model = model_from_spec("var-diff(4,0.5,0.5)").unwrap();
    let eff = analytic_effective(&model).unwrap();
    let horizon = 1.0;
    let run = simulate_coupled_random_clock(&model, &eff, 1e-3, horizon, 2000, 77).unwrap();
    let gaps = run.clock_gap_sup.as_ref().unwrap();
    let (mean_gap, se) = stats::mean_and_se(gaps);

    // Quadrature oracle for E|sin^2(y) - m| with y ~ N(0, 1/a).
    let m = 0.5 * (1.0 - (-2.0f64 / a).exp());
    let sd = (1.0f64 / a).sqrt();
    let n = 80_001;
    let lo = -10.0 * sd;
    let h = 20.0 * sd / (n - 1) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let y = lo + i as f64 * h;
        let w = (-0.5 * a * y * y).exp() * if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        num += w * (y.sin().powi(2) - m).abs();
        den += w;
    }
    let bound = horizon * delta * num / den;
    assert!(
        mean_gap <= bound + 2.0 * se.unwrap(),
        "mean clock gap {mean_gap} vs bound {bound}"
    );
}

#[test]
fn both_couplings_report_on_var_diff() {
    // The two couplings realize different joint laws and neither is asserted
    // tighter; both must produce finite statistics, and only the clocked run
    // carries the clock-gap diagnostic.
    let model = model_from_spec("var-diff(4,0.5,0.5)").unwrap();
    let eff = analytic_effective(&model).unwrap();
    let plain = simulate_coupled(&model, &eff, &map2(), 1e-3, 1.0, 2000, 3).unwrap();
    let clocked = simulate_coupled_random_clock(&model, &eff, 1e-3, 1.0, 2000, 3).unwrap();
    let sp = error_stats(&plain).unwrap();
    let sc = error_stats(&clocked).unwrap();
    assert!(sp.mean.is_finite() && sp.mean >= 0.0);
    assert!(sc.mean.is_finite() && sc.mean >= 0.0);
    assert!(plain.clock_gap_sup.is_none());
    let gaps = clocked.clock_gap_sup.as_ref().unwrap();
    assert!(gaps.iter().all(|g| g.is_finite() && *g >= 0.0));
    // Non-constant |Sigma^1| vs constant sigma: the clocks genuinely drift.
    assert!(gaps.iter().any(|&g| g > 0.0));
}
