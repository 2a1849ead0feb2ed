//! Brownian-path generation, Euler-Maruyama integration and equilibrium
//! sampling.
//!
//! Randomness is organized as counter-based streams: every (seed, purpose,
//! path_index) triple owns an independent ChaCha stream, so ensembles are
//! reproducible under any execution order and any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{CoarseMap, SdeModel};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_BURN_IN: usize = 1_000_000;
pub const DEFAULT_THINNING: usize = 100;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Stream purposes; kept disjoint from path indices via the high bits.
#[derive(Debug, Clone, Copy)]
pub(crate) enum StreamPurpose {
    PathNoise = 0,
    InitialCondition = 1,
    Equilibrium = 2,
}

pub(crate) fn stream_rng(seed: u64, purpose: StreamPurpose, path_index: u64) -> ChaCha12Rng {
    assert!(path_index < 1 << 48, "path index exceeds stream budget");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | path_index);
    rng
}

pub(crate) fn draw_std_normal(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gaussian increments of a d'-dimensional Brownian motion on a fixed grid.
#[derive(Debug, Clone)]
pub struct NoisePath {
    pub dt: f64,
    pub n_steps: usize,
    pub noise_dim: usize,
    /// Row-major (step, component); each entry ~ N(0, dt).
    pub increments: Vec<f64>,
    pub seed: u64,
    pub path_index: u64,
}

impl NoisePath {
    pub fn step(&self, n: usize) -> &[f64] {
        &self.increments[n * self.noise_dim..(n + 1) * self.noise_dim]
    }
}

/// Generate the increments for path `path_index` of the ensemble `seed`.
/// Deterministic in (seed, path_index); distinct indices give independent
/// streams.
pub fn brownian(
    seed: u64,
    path_index: u64,
    n_steps: usize,
    noise_dim: usize,
    dt: f64,
) -> Result<NoisePath> {
    if n_steps < 1 {
        return Err(Error::InvalidInput("n_steps must be >= 1".into()));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if noise_dim == 0 {
        return Err(Error::InvalidInput("noise dimension must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, StreamPurpose::PathNoise, path_index);
    let sqrt_dt = dt.sqrt();
    let mut increments = Vec::with_capacity(n_steps * noise_dim);
    for _ in 0..n_steps * noise_dim {
        let g: f64 = draw_std_normal(&mut rng);
        increments.push(g * sqrt_dt);
    }
    Ok(NoisePath { dt, n_steps, noise_dim, increments, seed, path_index })
}

/// Scratch buffers reused across Euler-Maruyama steps.
pub(crate) struct EmScratch {
    pub drift: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl EmScratch {
    pub fn new(model: &SdeModel) -> Self {
        Self { drift: vec![0.0; model.dim()], sigma: vec![0.0; model.dim() * model.noise_dim] }
    }
}

/// One explicit Euler-Maruyama step in place:
/// `x += F(x) dt + sqrt(2) Sigma(x) dW`.
pub(crate) fn em_step(model: &SdeModel, x: &mut [f64], dt: f64, dw: &[f64], ws: &mut EmScratch) {
    let d = model.dim();
    let dp = model.noise_dim;
    model.eval_drift_into(x, &mut ws.drift);
    model.eval_sigma_into(x, &mut ws.sigma);
    for i in 0..d {
        let mut noise = 0.0;
        for j in 0..dp {
            noise += ws.sigma[i * dp + j] * dw[j];
        }
        x[i] += ws.drift[i] * dt + SQRT2 * noise;
    }
}

pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Euler-Maruyama trajectory of the full dynamics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub dim: usize,
    /// Row-major (n_steps + 1) x d, unwrapped coordinates.
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }
}

/// Integrate `dX = F(X) dt + sqrt(2) Sigma(X) dW` along a noise path.
/// Torus coordinates stay unwrapped; fields see wrapped values internally.
pub fn euler_maruyama(model: &SdeModel, x0: &[f64], noise: &NoisePath) -> Result<Trajectory> {
    let d = model.dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch(format!("x0 has dim {}, model {d}", x0.len())));
    }
    if noise.noise_dim != model.noise_dim {
        return Err(Error::DimensionMismatch(format!(
            "noise dim {} vs model noise dim {}",
            noise.noise_dim, model.noise_dim
        )));
    }
    let mut states = Vec::with_capacity((noise.n_steps + 1) * d);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut ws = EmScratch::new(model);
    for n in 0..noise.n_steps {
        em_step(model, &mut x, noise.dt, noise.step(n), &mut ws);
        if !all_finite(&x) {
            return Err(Error::NonFiniteState { step: n + 1, path: Some(noise.path_index) });
        }
        states.extend_from_slice(&x);
    }
    Ok(Trajectory { dt: noise.dt, dim: d, states })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleMethod {
    ExactGaussian,
    UniformTorus,
    Mcmc { burn_in: usize, thinning: usize },
}

/// Points distributed according to the invariant measure mu.
#[derive(Debug, Clone)]
pub struct EquilibriumSample {
    pub dim: usize,
    /// Row-major n x d.
    pub points: Vec<f64>,
    pub method: SampleMethod,
}

impl EquilibriumSample {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }
}

/// Draw one equilibrium point from an exact sampler, if the model has one.
pub(crate) fn draw_equilibrium_point(
    model: &SdeModel,
    rng: &mut ChaCha12Rng,
    out: &mut [f64],
) -> Result<()> {
    if let Some(g) = &model.gaussian_mu {
        let d = model.dim();
        let mut z = vec![0.0; d];
        for zi in z.iter_mut() {
            *zi = draw_std_normal(rng);
        }
        g.transform(&z, out);
        return Ok(());
    }
    if model.domain.is_torus() && model.potential.is_zero() {
        for o in out.iter_mut() {
            *o = rng.random::<f64>() * model.domain.period;
        }
        return Ok(());
    }
    Err(Error::InvalidInput(format!(
        "model '{}' has no exact equilibrium sampler; draw an MCMC sample first",
        model.name
    )))
}

/// Sample n points from mu: exactly for Gaussian and uniform-torus models,
/// otherwise by a thinned Euler-Maruyama chain with the default burn-in of
/// 1e6 steps and thinning 100.
pub fn sample_equilibrium(model: &SdeModel, n: usize, seed: u64) -> Result<EquilibriumSample> {
    sample_equilibrium_mcmc(model, n, seed, DEFAULT_BURN_IN, DEFAULT_THINNING, DEFAULT_DT)
}

/// Same as [`sample_equilibrium`] with explicit MCMC controls (used by tests
/// that cannot afford the default burn-in).
pub fn sample_equilibrium_mcmc(
    model: &SdeModel,
    n: usize,
    seed: u64,
    burn_in: usize,
    thinning: usize,
    dt: f64,
) -> Result<EquilibriumSample> {
    if n < 1 {
        return Err(Error::InvalidInput("sample size must be >= 1".into()));
    }
    let d = model.dim();
    let mut rng = stream_rng(seed, StreamPurpose::Equilibrium, 0);
    let mut points = vec![0.0; n * d];

    if model.gaussian_mu.is_some() {
        for i in 0..n {
            let (a, b) = (i * d, (i + 1) * d);
            draw_equilibrium_point(model, &mut rng, &mut points[a..b])?;
        }
        return Ok(EquilibriumSample { dim: d, points, method: SampleMethod::ExactGaussian });
    }
    if model.domain.is_torus() && model.potential.is_zero() {
        for i in 0..n {
            let (a, b) = (i * d, (i + 1) * d);
            draw_equilibrium_point(model, &mut rng, &mut points[a..b])?;
        }
        return Ok(EquilibriumSample { dim: d, points, method: SampleMethod::UniformTorus });
    }

    // MCMC: one long chain, keep every thinning-th state after burn-in.
    let mut x = vec![0.0; d];
    let mut ws = EmScratch::new(model);
    let mut dw = vec![0.0; model.noise_dim];
    let sqrt_dt = dt.sqrt();
    let mut step = |x: &mut Vec<f64>, rng: &mut ChaCha12Rng, idx: usize| -> Result<()> {
        for w in dw.iter_mut() {
            *w = draw_std_normal(rng) * sqrt_dt;
        }
        em_step(model, x, dt, &dw, &mut ws);
        if !all_finite(x) {
            return Err(Error::NonFiniteState { step: idx, path: None });
        }
        Ok(())
    };
    for i in 0..burn_in {
        step(&mut x, &mut rng, i)?;
    }
    for i in 0..n {
        for j in 0..thinning {
            step(&mut x, &mut rng, burn_in + i * thinning + j)?;
        }
        points[i * d..(i + 1) * d].copy_from_slice(&x);
    }
    Ok(EquilibriumSample { dim: d, points, method: SampleMethod::Mcmc { burn_in, thinning } })
}

/// Sample the pushforward xi_# mu for a k = 1 map: exact for Gaussian models
/// (linear image of a Gaussian) and for the uniform torus.
pub fn sample_xi_mu(model: &SdeModel, map: &CoarseMap, n: usize, seed: u64) -> Result<Vec<f64>> {
    if map.k() != 1 {
        return Err(Error::InvalidInput("xi_# mu sampler is k = 1 only".into()));
    }
    let mut rng = stream_rng(seed, StreamPurpose::Equilibrium, 1);
    if let Some(g) = &model.gaussian_mu {
        let t = map.t_matrix();
        let mean = (t * &g.mean)[0];
        let var = (t * &g.cov * t.transpose())[(0, 0)];
        let sd = var.sqrt();
        return Ok((0..n).map(|_| mean + sd * draw_std_normal(&mut rng)).collect());
    }
    if model.domain.is_torus() && model.potential.is_zero() && map.is_first_coordinate() {
        let p = model.domain.period;
        return Ok((0..n).map(|_| rng.random::<f64>() * p).collect());
    }
    Err(Error::InvalidInput(format!("no exact xi_# mu sampler for model '{}'", model.name)))
}
