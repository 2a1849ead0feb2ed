//! Effective coefficients b and sigma by conditional expectation under mu:
//!
//! ```text
//! b(z)       = E_mu[ F^1(X)      | X^1 = z ]
//! sigma^2(z) = E_mu[ |Sigma^1|^2 | X^1 = z ]
//! ```
//!
//! estimated by binning equilibrium samples on the coarse variable, or taken
//! from a model's closed forms.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::ScalarFn;
use crate::models::{CoarseMap, SdeModel};
use crate::sampling::EquilibriumSample;

/// Bins with fewer samples than this are marked invalid.
pub const MIN_BIN_COUNT: usize = 50;

/// Uniform binning of the coarse variable.
#[derive(Debug, Clone, Copy)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Bins {
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || n == 0 {
            return Err(Error::InvalidInput(format!("bad bin spec [{lo}, {hi}] x {n}")));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    fn index(&self, z: f64) -> Option<usize> {
        if z < self.lo || z >= self.hi {
            return None;
        }
        let i = ((z - self.lo) / self.width()) as usize;
        Some(i.min(self.n - 1))
    }
}

/// Per-bin conditional means of the projected coefficients.
#[derive(Debug, Clone)]
pub struct ConditionalProfile {
    /// Bin centers, sorted.
    pub centers: Vec<f64>,
    /// Per-bin mean of F^1.
    pub drift_mean: Vec<f64>,
    /// Per-bin mean of (F^1)^2 (for in-bin standard deviations).
    pub drift_sq_mean: Vec<f64>,
    /// Per-bin mean of |Sigma^1|^2.
    pub diffusion2_mean: Vec<f64>,
    pub counts: Vec<usize>,
    pub min_count: usize,
}

impl ConditionalProfile {
    pub fn n_bins(&self) -> usize {
        self.centers.len()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.counts[i] >= self.min_count
    }

    pub fn valid_bins(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_bins()).filter(|&i| self.is_valid(i))
    }

    /// In-bin standard deviation of F^1.
    pub fn drift_std(&self, i: usize) -> f64 {
        (self.drift_sq_mean[i] - self.drift_mean[i].powi(2)).max(0.0).sqrt()
    }
}

#[derive(Clone, Default)]
struct BinAcc {
    count: usize,
    drift: f64,
    drift_sq: f64,
    diff2: f64,
}

/// Binned conditional-mean estimator (k = 1).
///
/// Requires at least 10 samples per bin on average; bins with fewer than
/// [`MIN_BIN_COUNT`] hits are flagged invalid rather than extrapolated.
pub fn estimate_conditional(
    sample: &EquilibriumSample,
    model: &SdeModel,
    map: &CoarseMap,
    bins: &Bins,
) -> Result<ConditionalProfile> {
    if map.k() != 1 {
        return Err(Error::InvalidInput("binned estimator requires k = 1".into()));
    }
    if bins.n == 0 {
        return Err(Error::InvalidInput("empty z grid".into()));
    }
    let n = sample.len();
    if n < 10 * bins.n {
        return Err(Error::InvalidInput(format!(
            "sample size {n} < 10 x {} bins",
            bins.n
        )));
    }

    // Parallel reduction over fixed chunks; per-bin partial sums combine
    // associatively and the chunk order is fixed, so results do not depend
    // on the thread count.
    let chunk = 1 << 14;
    let n_chunks = n.div_ceil(chunk);
    let partials: Vec<Vec<BinAcc>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let mut acc = vec![BinAcc::default(); bins.n];
            let mut fbuf = vec![0.0; model.dim()];
            for i in ci * chunk..((ci + 1) * chunk).min(n) {
                let x = sample.point(i);
                let z = map.apply1(x);
                let Some(b) = bins.index(z) else { continue };
                model.eval_drift_into(x, &mut fbuf);
                let f1 = fbuf[0];
                let s1 = model.eval_sigma_row1_norm(x);
                let a = &mut acc[b];
                a.count += 1;
                a.drift += f1;
                a.drift_sq += f1 * f1;
                a.diff2 += s1 * s1;
            }
            acc
        })
        .collect();

    let mut total = vec![BinAcc::default(); bins.n];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.count += p.count;
            t.drift += p.drift;
            t.drift_sq += p.drift_sq;
            t.diff2 += p.diff2;
        }
    }

    let mut profile = ConditionalProfile {
        centers: (0..bins.n).map(|i| bins.center(i)).collect(),
        drift_mean: vec![0.0; bins.n],
        drift_sq_mean: vec![0.0; bins.n],
        diffusion2_mean: vec![0.0; bins.n],
        counts: vec![0; bins.n],
        min_count: MIN_BIN_COUNT,
    };
    for (i, t) in total.iter().enumerate() {
        profile.counts[i] = t.count;
        if t.count > 0 {
            profile.drift_mean[i] = t.drift / t.count as f64;
            profile.drift_sq_mean[i] = t.drift_sq / t.count as f64;
            profile.diffusion2_mean[i] = t.diff2 / t.count as f64;
        }
    }
    if profile.valid_bins().next().is_none() {
        return Err(Error::AllBinsInvalid(MIN_BIN_COUNT));
    }
    Ok(profile)
}

/// Piecewise-linear interpolant with constant extrapolation outside the
/// sampled range.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidInput("interpolant needs >= 2 matched nodes".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("interpolant nodes must be strictly increasing".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn eval(&self, z: f64) -> f64 {
        let n = self.xs.len();
        if z <= self.xs[0] {
            return self.ys[0];
        }
        if z >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let j = self.xs.partition_point(|&x| x <= z) - 1;
        let t = (z - self.xs[j]) / (self.xs[j + 1] - self.xs[j]);
        self.ys[j] + t * (self.ys[j + 1] - self.ys[j])
    }

    pub fn max_abs_slope(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.ys.windows(2))
            .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone)]
pub enum Provenance {
    Analytic,
    Estimated(ConditionalProfile),
}

impl std::fmt::Debug for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Analytic => write!(f, "analytic"),
            Provenance::Estimated(p) => write!(f, "estimated({} bins)", p.n_bins()),
        }
    }
}

/// Effective coefficients: scalar closures for k = 1, vector/matrix closures
/// for affine maps with k > 1 (analytic only).
#[derive(Clone)]
pub enum EffectiveCoeffs {
    Scalar {
        drift: ScalarFn,
        diffusion: ScalarFn,
        /// Sampled range; queries outside are clamped.
        range: Option<(f64, f64)>,
    },
    Vector {
        k: usize,
        drift: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
        /// k x k row-major diffusion matrix.
        diffusion: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    },
}

/// Closed Markovian surrogate `dZ = b(Z) dt + sqrt(2) sigma(Z) dB`.
#[derive(Clone)]
pub struct EffectiveModel {
    pub coeffs: EffectiveCoeffs,
    pub lip_drift: f64,
    pub lip_diffusion: f64,
    pub provenance: Provenance,
}

impl EffectiveModel {
    pub fn k(&self) -> usize {
        match &self.coeffs {
            EffectiveCoeffs::Scalar { .. } => 1,
            EffectiveCoeffs::Vector { k, .. } => *k,
        }
    }

    /// b(z) for k = 1 (clamped to the sampled range when estimated).
    pub fn drift1(&self, z: f64) -> f64 {
        match &self.coeffs {
            EffectiveCoeffs::Scalar { drift, .. } => drift(&[z]),
            EffectiveCoeffs::Vector { .. } => panic!("drift1 on k > 1 effective model"),
        }
    }

    /// sigma(z) for k = 1.
    pub fn diffusion1(&self, z: f64) -> f64 {
        match &self.coeffs {
            EffectiveCoeffs::Scalar { diffusion, .. } => diffusion(&[z]),
            EffectiveCoeffs::Vector { .. } => panic!("diffusion1 on k > 1 effective model"),
        }
    }

    pub fn drift_into(&self, z: &[f64], out: &mut [f64]) {
        match &self.coeffs {
            EffectiveCoeffs::Scalar { drift, .. } => out[0] = drift(z),
            EffectiveCoeffs::Vector { drift, .. } => drift(z, out),
        }
    }

    /// sigma(z) as a k x k row-major matrix.
    pub fn diffusion_into(&self, z: &[f64], out: &mut [f64]) {
        match &self.coeffs {
            EffectiveCoeffs::Scalar { diffusion, .. } => out[0] = diffusion(z),
            EffectiveCoeffs::Vector { diffusion, .. } => diffusion(z, out),
        }
    }

    /// Whether z lies inside the estimated range (always true for analytic).
    pub fn covers(&self, z: f64) -> bool {
        match &self.coeffs {
            EffectiveCoeffs::Scalar { range: Some((lo, hi)), .. } => z >= *lo && z <= *hi,
            _ => true,
        }
    }

    pub fn analytic_scalar<B, S>(b: B, sigma: S, lip_drift: f64, lip_diffusion: f64) -> Self
    where
        B: Fn(f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        EffectiveModel {
            coeffs: EffectiveCoeffs::Scalar {
                drift: Arc::new(move |z: &[f64]| b(z[0])),
                diffusion: Arc::new(move |z: &[f64]| sigma(z[0])),
                range: None,
            },
            lip_drift,
            lip_diffusion,
            provenance: Provenance::Analytic,
        }
    }
}

/// Interpolate a profile into an effective model. Drift and diffusion are
/// piecewise linear through the valid bin centers with constant extrapolation;
/// the Lipschitz data are the maximal interpolant slopes (estimates, used
/// only inside bound formulas).
pub fn effective_from_profile(profile: &ConditionalProfile) -> Result<EffectiveModel> {
    let valid: Vec<usize> = profile.valid_bins().collect();
    if valid.len() < 2 {
        return Err(Error::TooFewValidBins(valid.len()));
    }
    let xs: Vec<f64> = valid.iter().map(|&i| profile.centers[i]).collect();
    let b_ys: Vec<f64> = valid.iter().map(|&i| profile.drift_mean[i]).collect();
    let s_ys: Vec<f64> =
        valid.iter().map(|&i| profile.diffusion2_mean[i].max(0.0).sqrt()).collect();
    let b_interp = PiecewiseLinear::new(xs.clone(), b_ys)?;
    let s_interp = PiecewiseLinear::new(xs.clone(), s_ys)?;
    let lip_drift = b_interp.max_abs_slope();
    let lip_diffusion = s_interp.max_abs_slope();
    let range = (xs[0], xs[xs.len() - 1]);
    let b = Arc::new(move |z: &[f64]| b_interp.eval(z[0]));
    let s = Arc::new(move |z: &[f64]| s_interp.eval(z[0]));
    Ok(EffectiveModel {
        coeffs: EffectiveCoeffs::Scalar { drift: b, diffusion: s, range: Some(range) },
        lip_drift,
        lip_diffusion,
        provenance: Provenance::Estimated(profile.clone()),
    })
}

/// Wrap the model's closed-form coefficients.
pub fn analytic_effective(model: &SdeModel) -> Result<EffectiveModel> {
    let forms = model.analytic_effective.as_ref().ok_or(Error::MissingClosedForm)?;
    let b = forms.drift.clone();
    let s = forms.diffusion.clone();
    Ok(EffectiveModel {
        coeffs: EffectiveCoeffs::Scalar {
            drift: Arc::new(move |z: &[f64]| b(z[0])),
            diffusion: Arc::new(move |z: &[f64]| s(z[0])),
            range: None,
        },
        lip_drift: forms.lip_drift,
        lip_diffusion: forms.lip_diffusion,
        provenance: Provenance::Analytic,
    })
}
