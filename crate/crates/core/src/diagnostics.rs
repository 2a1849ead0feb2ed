//! Constants entering the pathwise error bounds and the explicit bound
//! formulas themselves: the level-set Poincare constant alpha_PI, the
//! coupling constants kappa^2 and lambda^2, the L^2(mu) coefficient gaps,
//! and the weighted Poisson solve on level sets.
//!
//! Grid-based quantities are restricted to one-dimensional level sets
//! (d - k = 1 with the coordinate map); the Monte Carlo quantities work for
//! any affine map.

use nalgebra::DMatrix;

use crate::effective::EffectiveModel;
use crate::error::{Error, Result};
use crate::models::{geometry_at, CoarseMap, SdeModel};
use crate::sampling::EquilibriumSample;
use crate::stats;

/// Weighted 1-D level-set grid: nodes y_i on [-R, R], normalized conditional
/// weights and the scalar B(z, y_i) metric.
#[derive(Debug, Clone)]
pub struct LevelSetGrid {
    pub z: f64,
    pub y: Vec<f64>,
    /// Conditional density values, trapezoid-normalized so that the trapezoid
    /// sum equals 1 (the plain sum times dy agrees up to the half-weight of
    /// the two boundary nodes).
    pub weights: Vec<f64>,
    pub b_vals: Vec<f64>,
    pub dy: f64,
    /// Crude upper estimate of the conditional mass outside [-R, R].
    pub tail_mass: f64,
}

impl LevelSetGrid {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Build directly from weights (for synthetic cases such as the uniform
    /// density on an interval). Weights are renormalized.
    pub fn from_weights(z: f64, y: Vec<f64>, mut weights: Vec<f64>, b_vals: Vec<f64>) -> Result<Self> {
        if y.len() < 8 || y.len() != weights.len() || y.len() != b_vals.len() {
            return Err(Error::InvalidInput("grid needs >= 8 matched nodes".into()));
        }
        let dy = y[1] - y[0];
        let total = trapezoid(&weights, dy);
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::WeightsNotNormalizable(format!("trapezoid mass {total}")));
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        Ok(Self { z, y, weights, b_vals, dy, tail_mass: 0.0 })
    }

    /// Weighted mean of nodal values (trapezoid rule).
    pub fn weighted_mean(&self, f: &[f64]) -> f64 {
        let prod: Vec<f64> = self.weights.iter().zip(f).map(|(w, v)| w * v).collect();
        trapezoid(&prod, self.dy)
    }

    /// L^2(mu-bar_z) norm squared of nodal values.
    pub fn norm2(&self, f: &[f64]) -> f64 {
        let prod: Vec<f64> = self.weights.iter().zip(f).map(|(w, v)| w * v * v).collect();
        trapezoid(&prod, self.dy)
    }

    /// B-weighted Dirichlet energy of nodal values,
    /// `int B |u'|^2 d mu-bar approx sum_e B_e w_e (du/dy)^2 dy`.
    pub fn dirichlet_energy(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for e in 0..self.n() - 1 {
            let be = 0.5 * (self.b_vals[e] + self.b_vals[e + 1]);
            let we = 0.5 * (self.weights[e] + self.weights[e + 1]);
            let du = (u[e + 1] - u[e]) / self.dy;
            acc += be * we * du * du * self.dy;
        }
        acc
    }
}

fn trapezoid(f: &[f64], dy: f64) -> f64 {
    let n = f.len();
    let inner: f64 = f[1..n - 1].iter().sum();
    (inner + 0.5 * (f[0] + f[n - 1])) * dy
}

/// Conditional weights proportional to exp(-V(z, y)) on a uniform y-grid,
/// with B from the level-set geometry. Requires d = 2 and the coordinate map
/// (one-dimensional level sets).
pub fn level_set_grid(
    model: &SdeModel,
    map: &CoarseMap,
    z: f64,
    r: f64,
    n_nodes: usize,
) -> Result<LevelSetGrid> {
    if model.dim() != map.k() + 1 {
        return Err(Error::InvalidInput(format!(
            "level-set grid needs d - k = 1, got d = {}, k = {}",
            model.dim(),
            map.k()
        )));
    }
    if !map.is_first_coordinate() {
        return Err(Error::InvalidInput("level-set grid supports the coordinate map only".into()));
    }
    if n_nodes < 8 {
        return Err(Error::InvalidInput(format!("grid too coarse: {n_nodes} nodes")));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("truncation radius must be positive, got {r}")));
    }
    let dy = 2.0 * r / (n_nodes - 1) as f64;
    let mut y = Vec::with_capacity(n_nodes);
    let mut v = Vec::with_capacity(n_nodes);
    let mut b_vals = Vec::with_capacity(n_nodes);
    let mut vmin = f64::INFINITY;
    for i in 0..n_nodes {
        let yi = -r + i as f64 * dy;
        let point = [z, yi];
        let vi = model.eval_potential(&point);
        if !vi.is_finite() {
            return Err(Error::WeightsNotNormalizable(format!("V not finite at y = {yi}")));
        }
        let g = geometry_at(model, &point)?;
        let b = g.b[(0, 0)];
        if !(b > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("B = {b} at y = {yi}")));
        }
        y.push(yi);
        v.push(vi);
        b_vals.push(b);
        vmin = vmin.min(vi);
    }
    let mut weights: Vec<f64> = v.iter().map(|&vi| (-(vi - vmin)).exp()).collect();
    let total = trapezoid(&weights, dy);
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::WeightsNotNormalizable(format!("trapezoid mass {total}")));
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    // Tail estimate from the boundary density values: if the density kept its
    // boundary value over one more unit of y it would contribute this much.
    let tail_mass = weights[0] + weights[n_nodes - 1];
    Ok(LevelSetGrid { z, y, weights, b_vals, dy, tail_mass })
}

/// Stiffness (graph-Laplacian) and mass arrays of the weighted form
/// `int B u' v' d mu-bar = lambda int u v d mu-bar` with zero-flux boundaries.
fn assemble(grid: &LevelSetGrid) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = grid.n();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for e in 0..n - 1 {
        let be = 0.5 * (grid.b_vals[e] + grid.b_vals[e + 1]);
        let we = 0.5 * (grid.weights[e] + grid.weights[e + 1]);
        let c = be * we / grid.dy;
        diag[e] += c;
        diag[e + 1] += c;
        off[e] = -c;
    }
    let mass: Vec<f64> = grid.weights.iter().map(|w| w * grid.dy).collect();
    (diag, off, mass)
}

/// Number of eigenvalues of the pencil (K, M) strictly below `lambda`, by the
/// Sturm sequence of the shifted tridiagonal factorization.
fn sturm_count(diag: &[f64], off: &[f64], mass: &[f64], lambda: f64) -> usize {
    let n = diag.len();
    let mut count = 0;
    let mut d_prev = 1.0f64;
    let mut d;
    for i in 0..n {
        let shifted = diag[i] - lambda * mass[i];
        d = if i == 0 { shifted } else { shifted - off[i - 1] * off[i - 1] / d_prev };
        if d == 0.0 {
            d = 1e-300;
        }
        if d < 0.0 {
            count += 1;
        }
        d_prev = d;
    }
    count
}

/// Smallest nonzero generalized eigenvalue of the zero-flux level-set form:
/// the Poincare constant of the discretized conditional measure.
pub fn poincare_of_grid(grid: &LevelSetGrid) -> Result<f64> {
    let (diag, off, mass) = assemble(grid);
    let n = diag.len();
    // Upper bound from the generalized Gershgorin discs.
    let mut hi = 0.0f64;
    for i in 0..n {
        let mut radius = diag[i].abs();
        if i > 0 {
            radius += off[i - 1].abs();
        }
        if i + 1 < n {
            radius += off[i].abs();
        }
        hi = hi.max(radius / mass[i]);
    }
    if !hi.is_finite() || hi <= 0.0 {
        return Err(Error::EigenSolve(format!("bad spectral bound {hi}")));
    }
    let mut lo = 0.0f64;
    // The kernel (constants) contributes one eigenvalue at zero up to
    // round-off; the target is the second eigenvalue of the pencil.
    let target = 2;
    if sturm_count(&diag, &off, &mass, hi * (1.0 + 1e-9)) < target {
        return Err(Error::EigenSolve("fewer than two eigenvalues found".into()));
    }
    let mut hi = hi * (1.0 + 1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sturm_count(&diag, &off, &mass, mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Poincare estimate over a list of level sets.
#[derive(Debug, Clone)]
pub struct PoincareResult {
    /// min over the z list.
    pub alpha_pi: f64,
    pub per_z: Vec<(f64, f64)>,
    /// Relative change of the minimum when R grows by 25%.
    pub r_sensitivity: f64,
    /// True when the truncation is wide enough (sensitivity <= 1%).
    pub r_converged: bool,
}

/// alpha_PI = min over z of the smallest nonzero eigenvalue of
/// `int B h' g' d mu-bar_z = lambda int h g d mu-bar_z` with zero-flux
/// boundaries; sampled on `z_list`, truncated at [-R, R] with an
/// R-sensitivity diagnostic.
pub fn poincare_constant(
    model: &SdeModel,
    map: &CoarseMap,
    z_list: &[f64],
    r: f64,
    n_nodes: usize,
) -> Result<PoincareResult> {
    if z_list.is_empty() {
        return Err(Error::InvalidInput("empty z list".into()));
    }
    let solve_at = |radius: f64| -> Result<Vec<(f64, f64)>> {
        stats::try_par_map_indexed(z_list.len(), |i| {
            let z = z_list[i];
            let grid = level_set_grid(model, map, z, radius, n_nodes)?;
            Ok((z, poincare_of_grid(&grid)?))
        })
    };
    let per_z = solve_at(r)?;
    let alpha_pi = per_z.iter().map(|&(_, a)| a).fold(f64::INFINITY, f64::min);
    let wide = solve_at(1.25 * r)?;
    let alpha_wide = wide.iter().map(|&(_, a)| a).fold(f64::INFINITY, f64::min);
    let r_sensitivity = (alpha_pi - alpha_wide).abs() / alpha_wide.abs().max(1e-300);
    Ok(PoincareResult { alpha_pi, per_z, r_sensitivity, r_converged: r_sensitivity <= 0.01 })
}

/// Solution of the weighted level-set Poisson problem together with the two
/// sides of the a-posteriori gradient bound.
#[derive(Debug, Clone)]
pub struct LevelSetPoisson {
    pub u: Vec<f64>,
    /// `int B |u'|^2 d mu-bar_z` (left side of the gradient bound).
    pub grad_energy_b: f64,
    /// `int f^2 d mu-bar_z`; the bound's right side is this over alpha_PI.
    pub f_norm2: f64,
}

/// Solve `int B u' v' d mu-bar_z = int f v d mu-bar_z` for all mean-zero v,
/// with zero-flux boundaries and the gauge `int u d mu-bar_z = 0`.
///
/// `f` must be mean-zero under the grid weights; a weighted mean below 1e-8
/// is projected out, anything larger is rejected.
pub fn solve_level_set_poisson(grid: &LevelSetGrid, f_vals: &[f64]) -> Result<LevelSetPoisson> {
    let n = grid.n();
    if f_vals.len() != n {
        return Err(Error::DimensionMismatch(format!("f has {} values, grid {n}", f_vals.len())));
    }
    let fmean = grid.weighted_mean(f_vals);
    if fmean.abs() >= 1e-8 {
        return Err(Error::NotMeanZero { mean: fmean });
    }
    let f: Vec<f64> = f_vals.iter().map(|v| v - fmean).collect();

    let (diag, off, mass) = assemble(grid);
    // Project the discrete rhs onto the column-sum-zero compatibility class
    // (the continuous projection above leaves O(dy^2) quadrature residue).
    let mut rhs: Vec<f64> = (0..n).map(|i| mass[i] * f[i]).collect();
    let total_mass: f64 = mass.iter().sum();
    let excess: f64 = rhs.iter().sum::<f64>() / total_mass;
    for (r, m) in rhs.iter_mut().zip(&mass) {
        *r -= excess * m;
    }

    // K is a weighted graph Laplacian: singular along constants only. Fix the
    // gauge u[n-1] = 0 and solve the leading (n-1) x (n-1) system by the
    // Thomas algorithm; the dropped equation is implied by the zero column
    // sums of K and the zero sum of rhs.
    let m = n - 1;
    let mut c_prime = vec![0.0; m];
    let mut d_prime = vec![0.0; m];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::SingularSystem);
    }
    c_prime[0] = off[0] / denom;
    d_prime[0] = rhs[0] / denom;
    for i in 1..m {
        denom = diag[i] - off[i - 1] * c_prime[i - 1];
        if denom == 0.0 {
            return Err(Error::SingularSystem);
        }
        if i < m - 1 {
            c_prime[i] = off[i] / denom;
        }
        d_prime[i] = (rhs[i] - off[i - 1] * d_prime[i - 1]) / denom;
    }
    let mut u = vec![0.0; n];
    u[m - 1] = d_prime[m - 1];
    for i in (0..m - 1).rev() {
        u[i] = d_prime[i] - c_prime[i] * u[i + 1];
    }
    // Enforce the mean-zero gauge.
    let umean = grid.weighted_mean(&u);
    for ui in u.iter_mut() {
        *ui -= umean;
    }
    let grad_energy_b = grid.dirichlet_energy(&u);
    let f_norm2 = grid.norm2(&f);
    Ok(LevelSetPoisson { u, grad_energy_b, f_norm2 })
}

/// Monte Carlo estimates of the coupling constants.
#[derive(Debug, Clone)]
pub struct KappaLambda {
    pub kappa2: f64,
    pub kappa2_se: f64,
    pub lambda2: f64,
    pub lambda2_se: f64,
}

/// kappa^2 = E_mu |grad-hat F^1|_B^2 and lambda^2 = E_mu |grad-hat |Sigma^1||_B^2
/// over an equilibrium sample (coordinate map), with standard errors.
/// Gradients are analytic where the model declares them, else central
/// differences.
pub fn estimate_kappa_lambda(
    model: &SdeModel,
    map: &CoarseMap,
    sample: &EquilibriumSample,
) -> Result<KappaLambda> {
    if !map.is_first_coordinate() {
        return estimate_kappa_lambda_affine(model, map, sample);
    }
    let d = model.dim();
    let n = sample.len();
    let chunk = 1 << 13;
    let n_chunks = n.div_ceil(chunk);
    let partial: Vec<Result<(Vec<f64>, Vec<f64>)>> =
        stats::par_map_indexed(n_chunks, |ci| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut jac = vec![0.0; d * d];
            let mut grad = vec![0.0; d];
            let mut kv = Vec::new();
            let mut lv = Vec::new();
            for i in ci * chunk..((ci + 1) * chunk).min(n) {
                let x = sample.point(i);
                let geo = geometry_at(model, x)?;
                model.drift_jacobian_into(x, &mut jac);
                // grad-hat F^1: the last d-1 entries of row 1 of the Jacobian.
                let gf = &jac[1..d];
                let mut k = 0.0;
                for a in 0..d - 1 {
                    for b in 0..d - 1 {
                        k += gf[a] * geo.b[(a, b)] * gf[b];
                    }
                }
                model.sigma_row1_norm_gradient_into(x, &mut grad);
                let gs = &grad[1..d];
                let mut l = 0.0;
                for a in 0..d - 1 {
                    for b in 0..d - 1 {
                        l += gs[a] * geo.b[(a, b)] * gs[b];
                    }
                }
                if !k.is_finite() || !l.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite gradient at sample {i}")));
                }
                kv.push(k);
                lv.push(l);
            }
            Ok((kv, lv))
        });
    let mut kvals = Vec::with_capacity(n);
    let mut lvals = Vec::with_capacity(n);
    for p in partial {
        let (kv, lv) = p?;
        kvals.extend(kv);
        lvals.extend(lv);
    }
    let (kappa2, kse) = stats::mean_and_se(&kvals);
    let (lambda2, lse) = stats::mean_and_se(&lvals);
    Ok(KappaLambda {
        kappa2,
        kappa2_se: kse.unwrap_or(0.0),
        lambda2,
        lambda2_se: lse.unwrap_or(0.0),
    })
}

/// Affine-map version: kappa^2 = sum_i E[(A Pi grad (TF)_i) . (Pi grad (TF)_i)]
/// and lambda^2 = sum_ij E[(A Pi grad Sigma-hat_ij) . (Pi grad Sigma-hat_ij)],
/// with `Pi = Id - sum_ij (Sigma-hat^-2)_ij grad xi_i (x) (A grad xi_j)`.
/// Gradients of Sigma-hat are taken by central differences.
fn estimate_kappa_lambda_affine(
    model: &SdeModel,
    map: &CoarseMap,
    sample: &EquilibriumSample,
) -> Result<KappaLambda> {
    let d = model.dim();
    let dp = model.noise_dim;
    let k = map.k();
    let t = map.t_matrix().clone();
    let n = sample.len();

    let sigma_hat = |x: &[f64]| -> Result<DMatrix<f64>> {
        let mut sbuf = vec![0.0; d * dp];
        model.eval_sigma_into(x, &mut sbuf);
        let sigma = DMatrix::from_row_slice(d, dp, &sbuf);
        let ts = &t * sigma;
        crate::coupled::spd_sqrt(&(&ts * ts.transpose()))
    };

    let vals: Vec<Result<(f64, f64)>> = stats::par_map_indexed(n, |i| -> Result<(f64, f64)> {
        let x = sample.point(i);
        let mut sbuf = vec![0.0; d * dp];
        let mut abuf = vec![0.0; d * d];
        model.eval_diffusion_into(x, &mut sbuf, &mut abuf);
        let a = DMatrix::from_row_slice(d, d, &abuf);
        let hat2 = &t * &a * t.transpose();
        let hat2_inv = hat2
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::EigenSolve("singular Sigma_hat^2".into()))?;
        let mut pi = DMatrix::identity(d, d);
        for i1 in 0..k {
            for j1 in 0..k {
                let gi = t.row(i1).transpose();
                let agj = &a * t.row(j1).transpose();
                pi -= hat2_inv[(i1, j1)] * gi * agj.transpose();
            }
        }
        // grad (T F)_i rows: T times the drift Jacobian.
        let mut jac = vec![0.0; d * d];
        model.drift_jacobian_into(x, &mut jac);
        let jf = DMatrix::from_row_slice(d, d, &jac);
        let tjf = &t * jf;
        let mut kappa = 0.0;
        for i1 in 0..k {
            let g = tjf.row(i1).transpose();
            let pg = &pi * g;
            kappa += (&a * &pg).dot(&pg);
        }
        // grad Sigma-hat_ij by central differences of the matrix square root.
        let h = crate::fields::fd_step(x);
        let mut lambda = 0.0;
        let mut grads = vec![DMatrix::zeros(k, k); d];
        let mut xp = x.to_vec();
        for c in 0..d {
            let xc = x[c];
            xp[c] = xc + h;
            let hp = sigma_hat(&xp)?;
            xp[c] = xc - h;
            let hm = sigma_hat(&xp)?;
            xp[c] = xc;
            grads[c] = (hp - hm) / (2.0 * h);
        }
        for i1 in 0..k {
            for j1 in 0..k {
                let g = nalgebra::DVector::from_fn(d, |c, _| grads[c][(i1, j1)]);
                let pg = &pi * g;
                lambda += (&a * &pg).dot(&pg);
            }
        }
        Ok((kappa, lambda))
    });
    let mut kv = Vec::with_capacity(n);
    let mut lv = Vec::with_capacity(n);
    for v in vals {
        let (a, b) = v?;
        kv.push(a);
        lv.push(b);
    }
    let (kappa2, kse) = stats::mean_and_se(&kv);
    let (lambda2, lse) = stats::mean_and_se(&lv);
    Ok(KappaLambda {
        kappa2,
        kappa2_se: kse.unwrap_or(0.0),
        lambda2,
        lambda2_se: lse.unwrap_or(0.0),
    })
}

/// Monte Carlo L^2(mu) gaps between projected and effective coefficients.
#[derive(Debug, Clone)]
pub struct CoefficientGap {
    /// E_mu (F^1 - b(xi))^2 and its standard error.
    pub gap_drift: f64,
    pub gap_drift_se: f64,
    /// E_mu (|Sigma^1| - sigma(xi))^2 and its standard error.
    pub gap_diff: f64,
    pub gap_diff_se: f64,
    /// Queries outside the effective model's sampled range (clamped).
    pub clamped: u64,
}

pub fn coefficient_gap(
    model: &SdeModel,
    effective: &EffectiveModel,
    sample: &EquilibriumSample,
) -> Result<CoefficientGap> {
    if effective.k() != 1 {
        return Err(Error::InvalidInput("coefficient gap is k = 1 only".into()));
    }
    let d = model.dim();
    let n = sample.len();
    let vals: Vec<(f64, f64, u64)> = stats::par_map_indexed(n, |i| {
        let x = sample.point(i);
        let z = x[0];
        let mut fbuf = vec![0.0; d];
        model.eval_drift_into(x, &mut fbuf);
        let clamped = u64::from(!effective.covers(z));
        let fd = (fbuf[0] - effective.drift1(z)).powi(2);
        let s1 = model.eval_sigma_row1_norm(x);
        let gd = (s1 - effective.diffusion1(z)).powi(2);
        (fd, gd, clamped)
    });
    let drift: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let diff: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let clamped: u64 = vals.iter().map(|v| v.2).sum();
    let (gap_drift, dse) = stats::mean_and_se(&drift);
    let (gap_diff, gse) = stats::mean_and_se(&diff);
    Ok(CoefficientGap {
        gap_drift,
        gap_drift_se: dse.unwrap_or(0.0),
        gap_diff,
        gap_diff_se: gse.unwrap_or(0.0),
        clamped,
    })
}

/// Coefficient structure of the model, selecting the applicable row of the
/// bound table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientClass {
    /// F = -grad V, Sigma = Id.
    GradientIdentity,
    /// general F, Sigma = Id.
    NonGradientIdentity,
    /// general F, |Sigma^1| a function of x^1 only (lambda = 0).
    SlowDiffusion,
    /// general F and Sigma.
    General,
}

impl CoefficientClass {
    pub fn label(&self) -> &'static str {
        match self {
            CoefficientClass::GradientIdentity => "gradient drift, identity diffusion",
            CoefficientClass::NonGradientIdentity => "general drift, identity diffusion",
            CoefficientClass::SlowDiffusion => "general drift, slow-variable diffusion",
            CoefficientClass::General => "general drift and diffusion",
        }
    }
}

pub fn classify_model(model: &SdeModel, lambda2: f64) -> CoefficientClass {
    if model.identity_sigma {
        if model.zero_circulation {
            CoefficientClass::GradientIdentity
        } else {
            CoefficientClass::NonGradientIdentity
        }
    } else if model.sigma1_slow_only == Some(true) || lambda2 == 0.0 {
        CoefficientClass::SlowDiffusion
    } else {
        CoefficientClass::General
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    pub kappa2: f64,
    pub lambda2: f64,
    pub alpha_pi: f64,
    pub lip_drift: f64,
    pub lip_diffusion: f64,
    pub horizon: f64,
    pub class: CoefficientClass,
}

/// The four explicit bound values on `E sup_{t<=T} |xi(X)-Z|^2`.
#[derive(Debug, Clone, Copy)]
pub struct BoundTable {
    /// weak-A: (e^{(2 L_b + 1) T} - 1) / (2 L_b + 1) * kappa^2 / alpha_PI.
    pub weak_a: f64,
    /// strong-A: 27 T e^{L_b^2 T^2} kappa^2 / alpha_PI^2.
    pub strong_a: f64,
    /// weak-C: e^{CT} (4 T^2 kappa^2 / alpha_PI + 64 T lambda^2 / alpha_PI).
    pub weak_c: f64,
    /// strong-C: e^{CT} (54 T kappa^2 / alpha_PI^2 + 64 T lambda^2 / alpha_PI),
    /// C = max(4 L_b, 32 L_sigma^2).
    pub strong_c: f64,
    pub class: CoefficientClass,
}

impl BoundTable {
    /// The weak bound that applies to the model's class: weak-A for identity
    /// diffusion, weak-C otherwise.
    pub fn applicable_weak(&self) -> f64 {
        match self.class {
            CoefficientClass::GradientIdentity | CoefficientClass::NonGradientIdentity => self.weak_a,
            _ => self.weak_c,
        }
    }

    pub fn applicable_strong(&self) -> f64 {
        match self.class {
            CoefficientClass::GradientIdentity | CoefficientClass::NonGradientIdentity => self.strong_a,
            _ => self.strong_c,
        }
    }
}

/// Evaluate all four explicit bound formulas; the class only selects which
/// row of the table is considered applicable, all four values are always
/// reported.
pub fn evaluate_bounds(inputs: &BoundInputs) -> BoundTable {
    let BoundInputs { kappa2, lambda2, alpha_pi, lip_drift, lip_diffusion, horizon: t, class } =
        *inputs;
    assert!(alpha_pi > 0.0, "alpha_PI must be positive");
    let c1 = 2.0 * lip_drift + 1.0;
    // (e^{c t} - 1)/c, continuous at c = 0.
    let expm1_over = |c: f64, t: f64| if c.abs() < 1e-12 { t } else { ((c * t).exp() - 1.0) / c };
    let weak_a = expm1_over(c1, t) * kappa2 / alpha_pi;
    let strong_a = 27.0 * t * (lip_drift * lip_drift * t * t).exp() * kappa2 / (alpha_pi * alpha_pi);
    let c = (4.0 * lip_drift).max(32.0 * lip_diffusion * lip_diffusion);
    let ect = (c * t).exp();
    let weak_c = ect * (4.0 * t * t * kappa2 / alpha_pi + 64.0 * t * lambda2 / alpha_pi);
    let strong_c =
        ect * (54.0 * t * kappa2 / (alpha_pi * alpha_pi) + 64.0 * t * lambda2 / alpha_pi);
    BoundTable { weak_a, strong_a, weak_c, strong_c, class }
}

/// Everything a bound check needs, in one table.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub kappa2: f64,
    pub kappa2_se: f64,
    pub lambda2: f64,
    pub lambda2_se: f64,
    pub alpha_pi: f64,
    pub gap_drift: f64,
    pub gap_drift_se: f64,
    pub gap_diff: f64,
    pub gap_diff_se: f64,
    pub bounds: BoundTable,
}

impl DiagnosticsReport {
    /// (name, value, standard error) rows for CSV serialization.
    pub fn rows(&self) -> Vec<(&'static str, f64, Option<f64>)> {
        vec![
            ("kappa2", self.kappa2, Some(self.kappa2_se)),
            ("lambda2", self.lambda2, Some(self.lambda2_se)),
            ("alpha_pi", self.alpha_pi, None),
            ("gap_drift", self.gap_drift, Some(self.gap_drift_se)),
            ("gap_diff", self.gap_diff, Some(self.gap_diff_se)),
            ("bound_weak_A", self.bounds.weak_a, None),
            ("bound_strong_A", self.bounds.strong_a, None),
            ("bound_weak_C", self.bounds.weak_c, None),
            ("bound_strong_C", self.bounds.strong_c, None),
        ]
    }
}

impl std::fmt::Display for DiagnosticsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<16} {:>14} {:>12}", "metric", "value", "std error")?;
        for (name, value, se) in self.rows() {
            match se {
                Some(se) => writeln!(f, "{name:<16} {value:>14.6e} {se:>12.3e}")?,
                None => writeln!(f, "{name:<16} {value:>14.6e} {:>12}", "-")?,
            }
        }
        writeln!(f, "applicable row: {}", self.bounds.class.label())
    }
}

/// Assemble the full report for a model with a known effective surrogate.
#[allow(clippy::too_many_arguments)]
pub fn full_report(
    model: &SdeModel,
    map: &CoarseMap,
    effective: &EffectiveModel,
    sample: &EquilibriumSample,
    z_list: &[f64],
    r: f64,
    n_nodes: usize,
    horizon: f64,
) -> Result<DiagnosticsReport> {
    let kl = estimate_kappa_lambda(model, map, sample)?;
    let pc = poincare_constant(model, map, z_list, r, n_nodes)?;
    let gaps = coefficient_gap(model, effective, sample)?;
    let class = classify_model(model, kl.lambda2);
    let bounds = evaluate_bounds(&BoundInputs {
        kappa2: kl.kappa2,
        lambda2: kl.lambda2,
        alpha_pi: pc.alpha_pi,
        lip_drift: effective.lip_drift,
        lip_diffusion: effective.lip_diffusion,
        horizon,
        class,
    });
    Ok(DiagnosticsReport {
        kappa2: kl.kappa2,
        kappa2_se: kl.kappa2_se,
        lambda2: kl.lambda2,
        lambda2_se: kl.lambda2_se,
        alpha_pi: pc.alpha_pi,
        gap_drift: gaps.gap_drift,
        gap_drift_se: gaps.gap_drift_se,
        gap_diff: gaps.gap_diff,
        gap_diff_se: gaps.gap_diff_se,
        bounds,
    })
}
