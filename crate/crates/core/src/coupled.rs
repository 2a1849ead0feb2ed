//! Coupled simulation of the projected dynamics xi(X_t) and the effective
//! dynamics Z_t.
//!
//! Both processes consume the same underlying noise: the projected Brownian
//! motion `dB = Sigma^1 dW / |Sigma^1|` drives Z directly in the plain
//! coupling, while the random-clock coupling realizes one intrinsic-time
//! Brownian motion and reads it at clock times `psi(t) = int |Sigma^1|^2` for
//! X and `phi(t) = int sigma^2(Z)` for Z.

use nalgebra::DMatrix;

use crate::bridge::IntrinsicBrownian;
use crate::effective::EffectiveModel;
use crate::error::{Error, Result};
use crate::models::{CoarseMap, SdeModel};
use crate::sampling::{
    all_finite, brownian, draw_equilibrium_point, draw_std_normal, em_step, stream_rng, EmScratch,
    EquilibriumSample, StreamPurpose,
};
use crate::stats;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Projected Brownian increment for the coordinate map (k = 1):
/// `dB = sum_j Sigma^{1j}(x) dW^j / |Sigma^1|(x)`.
pub fn project_noise(model: &SdeModel, x: &[f64], dw: &[f64]) -> Result<f64> {
    let dp = model.noise_dim;
    let mut sbuf = vec![0.0; model.dim() * dp];
    model.eval_sigma_into(x, &mut sbuf);
    project_row(&sbuf[..dp], dw)
}

fn project_row(row: &[f64], dw: &[f64]) -> Result<f64> {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(Error::DegenerateProjection);
    }
    let mut acc = 0.0;
    for (s, w) in row.iter().zip(dw) {
        acc += s * w;
    }
    Ok(acc / norm)
}

/// General affine version: `dB = Sigma_hat^{-1} (T Sigma) dW` with
/// `Sigma_hat^2 = (T Sigma)(T Sigma)^T`, a k-vector. Reduces to
/// [`project_noise`] for the coordinate map.
pub fn project_noise_map(
    model: &SdeModel,
    map: &CoarseMap,
    x: &[f64],
    dw: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let k = map.k();
    debug_assert_eq!(out.len(), k);
    let dp = model.noise_dim;
    let mut sbuf = vec![0.0; model.dim() * dp];
    model.eval_sigma_into(x, &mut sbuf);
    if map.is_first_coordinate() {
        out[0] = project_row(&sbuf[..dp], dw)?;
        return Ok(());
    }
    if k == 1 {
        // One row of T Sigma; same normalization as the coordinate case.
        let t = map.t_matrix();
        let d = model.dim();
        let mut row = vec![0.0; dp];
        for (j, r) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for l in 0..d {
                acc += t[(0, l)] * sbuf[l * dp + j];
            }
            *r = acc;
        }
        out[0] = project_row(&row, dw)?;
        return Ok(());
    }
    let d = model.dim();
    let t = map.t_matrix();
    let sigma = DMatrix::from_row_slice(d, dp, &sbuf);
    let t_sigma = t * sigma;
    let hat2 = &t_sigma * t_sigma.transpose();
    let hat = spd_sqrt(&hat2)?;
    let rhs = &t_sigma * DMatrix::from_column_slice(dp, 1, dw);
    let sol = hat
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::EigenSolve("singular Sigma_hat".into()))?;
    for i in 0..k {
        out[i] = sol[(i, 0)];
    }
    Ok(())
}

/// Symmetric positive-definite square root via eigendecomposition.
pub(crate) fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::NotPositiveDefinite("Sigma_hat^2".into()));
    }
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.sqrt()));
    Ok(&eig.eigenvectors * sqrt_vals * eig.eigenvectors.transpose())
}

/// Ensemble of coupled paths on a common time grid.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Per-path `sup_{grid t <= T} |xi(X_t) - Z_t|^2`.
    pub sup_err2: Vec<f64>,
    /// Per-path traces of (xi(X_t), Z_t) when stored; row-major (n+1) x k each.
    pub paths: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    /// Per-path `sup_t |psi(t) - phi(t)|` (random-clock runs only).
    pub clock_gap_sup: Option<Vec<f64>>,
    /// Number of effective-coefficient queries clamped to the sampled range.
    pub clamp_events: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CoupledOptions {
    pub store_paths: bool,
}

fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidInput(format!("need dt > 0 and T > 0, got dt={dt}, T={horizon}")));
    }
    let n = (horizon / dt).round();
    if n < 1.0 || !n.is_finite() {
        return Err(Error::InvalidInput(format!("horizon {horizon} shorter than one step {dt}")));
    }
    Ok(n as usize)
}

struct PathOut {
    sup2: f64,
    gap_sup: f64,
    clamps: u64,
    trace: Option<(Vec<f64>, Vec<f64>)>,
}

/// Simulate xi(X_t) and Z_t with the shared projected Brownian motion.
///
/// X_0 is drawn from the model's exact equilibrium sampler (or from
/// `initial_points` when supplied, cycling by path index); Z_0 = xi(X_0).
/// The noise projection is evaluated at the pre-step state of X.
pub fn simulate_coupled(
    model: &SdeModel,
    effective: &EffectiveModel,
    map: &CoarseMap,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<CoupledRun> {
    simulate_coupled_with(model, effective, map, dt, horizon, n_paths, seed, None, CoupledOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled_with(
    model: &SdeModel,
    effective: &EffectiveModel,
    map: &CoarseMap,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    initial_points: Option<&EquilibriumSample>,
    opts: CoupledOptions,
) -> Result<CoupledRun> {
    let n_steps = steps_for(horizon, dt)?;
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be >= 1".into()));
    }
    let d = model.dim();
    let k = map.k();
    if map.dim() != d {
        return Err(Error::DimensionMismatch(format!("map dim {} vs model {d}", map.dim())));
    }
    if effective.k() != k {
        return Err(Error::DimensionMismatch(format!(
            "effective model k = {} vs map k = {k}",
            effective.k()
        )));
    }

    let outs: Vec<PathOut> = stats::try_par_map_indexed(n_paths, |pi| -> Result<PathOut> {
        let path = pi as u64;
        let mut x = vec![0.0; d];
        init_state(model, initial_points, seed, path, &mut x)?;
        let noise = brownian(seed, path, n_steps, model.noise_dim, dt)?;

        let mut z = vec![0.0; k];
        map.apply_into(&x, &mut z);
        let mut xi = z.clone();
        let mut db = vec![0.0; k];
        let mut bz = vec![0.0; k];
        let mut sz = vec![0.0; k * k];
        let mut ws = EmScratch::new(model);
        let mut sup2 = 0.0f64;
        let mut clamps = 0u64;
        let mut trace = opts.store_paths.then(|| {
            let mut xt = Vec::with_capacity((n_steps + 1) * k);
            let mut zt = Vec::with_capacity((n_steps + 1) * k);
            xt.extend_from_slice(&xi);
            zt.extend_from_slice(&z);
            (xt, zt)
        });

        for n in 0..n_steps {
            let dw = noise.step(n);
            // dB at the pre-step state of X (Ito convention).
            project_noise_map(model, map, &x, dw, &mut db)?;
            if k == 1 && !effective.covers(z[0]) {
                clamps += 1;
            }
            effective.drift_into(&z, &mut bz);
            effective.diffusion_into(&z, &mut sz);
            for i in 0..k {
                let mut noise_term = 0.0;
                for j in 0..k {
                    noise_term += sz[i * k + j] * db[j];
                }
                z[i] += bz[i] * dt + SQRT2 * noise_term;
            }
            em_step(model, &mut x, dt, dw, &mut ws);
            if !all_finite(&x) || !all_finite(&z) {
                return Err(Error::NonFiniteState { step: n + 1, path: Some(path) });
            }
            map.apply_into(&x, &mut xi);
            let mut e2 = 0.0;
            for i in 0..k {
                e2 += (xi[i] - z[i]).powi(2);
            }
            sup2 = sup2.max(e2);
            if let Some((xt, zt)) = trace.as_mut() {
                xt.extend_from_slice(&xi);
                zt.extend_from_slice(&z);
            }
        }
        Ok(PathOut { sup2, gap_sup: 0.0, clamps, trace })
    })?;

    Ok(collect_run(outs, dt, horizon, n_paths, seed, opts.store_paths, false))
}

fn init_state(
    model: &SdeModel,
    initial_points: Option<&EquilibriumSample>,
    seed: u64,
    path: u64,
    x: &mut [f64],
) -> Result<()> {
    match initial_points {
        Some(s) => {
            let i = (path as usize) % s.len();
            x.copy_from_slice(s.point(i));
            Ok(())
        }
        None => {
            let mut rng = stream_rng(seed, StreamPurpose::InitialCondition, path);
            draw_equilibrium_point(model, &mut rng, x)
        }
    }
}

fn collect_run(
    outs: Vec<PathOut>,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    store_paths: bool,
    clocked: bool,
) -> CoupledRun {
    let mut sup_err2 = Vec::with_capacity(n_paths);
    let mut gaps = Vec::with_capacity(if clocked { n_paths } else { 0 });
    let mut clamp_events = 0u64;
    let mut paths = store_paths.then(Vec::new);
    for o in outs {
        sup_err2.push(o.sup2);
        if clocked {
            gaps.push(o.gap_sup);
        }
        clamp_events += o.clamps;
        if let (Some(ps), Some(tr)) = (paths.as_mut(), o.trace) {
            ps.push(tr);
        }
    }
    CoupledRun {
        dt,
        horizon,
        n_paths,
        seed,
        sup_err2,
        paths,
        clock_gap_sup: clocked.then_some(gaps),
        clamp_events,
    }
}

/// Random-clock (Dubins-Schwarz) coupling, k = 1 coordinate map.
///
/// A single intrinsic-time Brownian motion is realized lazily; X reads its
/// increments over `d psi = |Sigma^1|^2(X) dt` and Z over
/// `d phi = sigma^2(Z) dt`, both by left-endpoint quadrature of the clocks.
/// With constant unit coefficients the run is bit-identical to
/// [`simulate_coupled`] under the same seed policy.
pub fn simulate_coupled_random_clock(
    model: &SdeModel,
    effective: &EffectiveModel,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<CoupledRun> {
    simulate_coupled_random_clock_with(model, effective, dt, horizon, n_paths, seed, None, CoupledOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled_random_clock_with(
    model: &SdeModel,
    effective: &EffectiveModel,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    initial_points: Option<&EquilibriumSample>,
    opts: CoupledOptions,
) -> Result<CoupledRun> {
    let n_steps = steps_for(horizon, dt)?;
    if n_paths == 0 {
        return Err(Error::InvalidInput("n_paths must be >= 1".into()));
    }
    if effective.k() != 1 {
        return Err(Error::InvalidInput("random-clock coupling requires k = 1".into()));
    }
    let d = model.dim();
    let dp = model.noise_dim;
    let sqrt_dt = dt.sqrt();

    let outs: Vec<PathOut> = stats::try_par_map_indexed(n_paths, |pi| -> Result<PathOut> {
        let path = pi as u64;
        let mut x = vec![0.0; d];
        init_state(model, initial_points, seed, path, &mut x)?;
        let mut rng = stream_rng(seed, StreamPurpose::PathNoise, path);

        let mut bridge = IntrinsicBrownian::new();
        let mut psi = 0.0f64;
        let mut phi = 0.0f64;
        let mut z = x[0];
        let mut sup2 = 0.0f64;
        let mut gap_sup = 0.0f64;
        let mut clamps = 0u64;
        let mut ws = EmScratch::new(model);
        let mut sbuf = vec![0.0; d * dp];
        let mut dw = vec![0.0; dp];
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dp);
        let mut trace = opts.store_paths.then(|| {
            (vec![x[0]], vec![z])
        });

        for n in 0..n_steps {
            model.eval_sigma_into(&x, &mut sbuf);
            let row = &sbuf[..dp];
            let s1 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if s1 <= 0.0 {
                return Err(Error::DegenerateProjection);
            }
            let dpsi = s1 * s1 * dt;
            let inc_x = bridge.advance(psi, dpsi, n, &mut rng)?;
            let db = inc_x / s1;

            // Reconstruct a full d'-dimensional increment whose projection
            // along Sigma^1 is dB and whose orthogonal part is fresh.
            orthonormal_complement(row, s1, &mut basis);
            for w in dw.iter_mut() {
                *w = 0.0;
            }
            for (j, w) in dw.iter_mut().enumerate() {
                *w += basis[0][j] * db;
            }
            for q in basis.iter().skip(1) {
                let eta = draw_std_normal(&mut rng) * sqrt_dt;
                for (j, w) in dw.iter_mut().enumerate() {
                    *w += q[j] * eta;
                }
            }
            em_step(model, &mut x, dt, &dw, &mut ws);
            psi += dpsi;

            if !effective.covers(z) {
                clamps += 1;
            }
            let sz = effective.diffusion1(z);
            let dphi = sz * sz * dt;
            let inc_z = bridge.advance(phi, dphi, n, &mut rng)?;
            z += effective.drift1(z) * dt + SQRT2 * inc_z;
            phi += dphi;

            if !all_finite(&x) || !z.is_finite() {
                return Err(Error::NonFiniteState { step: n + 1, path: Some(path) });
            }
            gap_sup = gap_sup.max((psi - phi).abs());
            let e2 = (x[0] - z).powi(2);
            sup2 = sup2.max(e2);
            if let Some((xt, zt)) = trace.as_mut() {
                xt.push(x[0]);
                zt.push(z);
            }
            bridge.prune(psi.min(phi));
        }
        Ok(PathOut { sup2, gap_sup, clamps, trace })
    })?;

    Ok(collect_run(outs, dt, horizon, n_paths, seed, opts.store_paths, true))
}

/// Orthonormal basis of R^{d'} whose first vector is row/norm; the rest spans
/// the orthogonal complement (Gram-Schmidt over the canonical basis).
fn orthonormal_complement(row: &[f64], norm: f64, basis: &mut Vec<Vec<f64>>) {
    let dp = row.len();
    basis.clear();
    basis.push(row.iter().map(|v| v / norm).collect());
    for c in 0..dp {
        if basis.len() == dp {
            break;
        }
        let mut v = vec![0.0; dp];
        v[c] = 1.0;
        for q in basis.iter() {
            let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= dot * qi;
            }
        }
        let n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            for vi in v.iter_mut() {
                *vi /= n;
            }
            basis.push(v);
        }
    }
    debug_assert_eq!(basis.len(), dp);
}

/// Per-path sup-error statistics of a coupled run.
#[derive(Debug, Clone)]
pub struct PathErrorStats {
    pub per_path_sup2: Vec<f64>,
    pub mean: f64,
    /// `None` for a single path.
    pub std_error: Option<f64>,
    pub max: f64,
}

pub fn error_stats(run: &CoupledRun) -> Result<PathErrorStats> {
    if run.sup_err2.is_empty() {
        return Err(Error::InvalidInput("empty run".into()));
    }
    let (mean, std_error) = stats::mean_and_se(&run.sup_err2);
    let max = run.sup_err2.iter().cloned().fold(0.0f64, f64::max);
    Ok(PathErrorStats { per_path_sup2: run.sup_err2.clone(), mean, std_error, max })
}

/// Integrate the effective dynamics alone (k = 1) from the given initial
/// points; returns Z at the horizon for each path.
pub fn simulate_effective_only(
    effective: &EffectiveModel,
    z0: &[f64],
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let n_steps = steps_for(horizon, dt)?;
    if effective.k() != 1 {
        return Err(Error::InvalidInput("effective-only integration is k = 1".into()));
    }
    if z0.is_empty() {
        return Err(Error::InvalidInput("need at least one initial point".into()));
    }
    let sqrt_dt = dt.sqrt();
    stats::try_par_map_indexed(z0.len(), |pi| -> Result<f64> {
        let mut rng = stream_rng(seed, StreamPurpose::PathNoise, pi as u64);
        let mut z = z0[pi];
        for n in 0..n_steps {
            let db = draw_std_normal(&mut rng) * sqrt_dt;
            z += effective.drift1(z) * dt + SQRT2 * effective.diffusion1(z) * db;
            if !z.is_finite() {
                return Err(Error::NonFiniteState { step: n + 1, path: Some(pi as u64) });
            }
        }
        Ok(z)
    })
}
