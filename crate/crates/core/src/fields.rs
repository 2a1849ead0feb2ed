//! Scalar, vector and matrix fields on R^d.
//!
//! Fields are immutable closures, safe to share across threads. Derivatives
//! are analytic when supplied and central finite differences otherwise, with
//! step `h = 1e-5 * (1 + |x|)`.

use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type Scalar1Fn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Base step for central finite differences, scaled by `1 + |x|`.
pub const FD_BASE: f64 = 1e-5;

pub(crate) fn fd_step(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    FD_BASE * (1.0 + norm)
}

/// Real-valued field with an optional analytic gradient.
#[derive(Clone)]
pub struct ScalarField {
    eval: ScalarFn,
    gradient: Option<VectorFn>,
    is_zero: bool,
}

impl ScalarField {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { eval: Arc::new(f), gradient: None, is_zero: false }
    }

    pub fn with_gradient<F, G>(f: F, grad: G) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { eval: Arc::new(f), gradient: Some(Arc::new(grad)), is_zero: false }
    }

    /// The identically-zero field (zero analytic gradient).
    pub fn zero() -> Self {
        Self {
            eval: Arc::new(|_| 0.0),
            gradient: Some(Arc::new(|_, out: &mut [f64]| out.fill(0.0))),
            is_zero: true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.is_zero
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), x.len());
        if let Some(g) = &self.gradient {
            g(x, out);
            return;
        }
        let h = fd_step(x);
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let xi = x[i];
            xp[i] = xi + h;
            let fp = (self.eval)(&xp);
            xp[i] = xi - h;
            let fm = (self.eval)(&xp);
            xp[i] = xi;
            out[i] = (fp - fm) / (2.0 * h);
        }
    }
}

/// R^d -> R^m field with an optional analytic Jacobian (row-major m x d).
#[derive(Clone)]
pub struct VectorField {
    dim_out: usize,
    eval: VectorFn,
    jacobian: Option<VectorFn>,
}

impl VectorField {
    pub fn new<F>(dim_out: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { dim_out, eval: Arc::new(f), jacobian: None }
    }

    pub fn with_jacobian<F, J>(dim_out: usize, f: F, jac: J) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        J: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { dim_out, eval: Arc::new(f), jacobian: Some(Arc::new(jac)) }
    }

    pub fn zero(dim_out: usize) -> Self {
        Self {
            dim_out,
            eval: Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
            jacobian: Some(Arc::new(|_, out: &mut [f64]| out.fill(0.0))),
        }
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn value_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim_out);
        (self.eval)(x, out);
    }

    /// Jacobian J[i][j] = d f_i / d x_j, row-major into `out`.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        debug_assert_eq!(out.len(), self.dim_out * d);
        if let Some(j) = &self.jacobian {
            j(x, out);
            return;
        }
        let h = fd_step(x);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; self.dim_out];
        let mut fm = vec![0.0; self.dim_out];
        for col in 0..d {
            let xi = x[col];
            xp[col] = xi + h;
            (self.eval)(&xp, &mut fp);
            xp[col] = xi - h;
            (self.eval)(&xp, &mut fm);
            xp[col] = xi;
            for row in 0..self.dim_out {
                out[row * d + col] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
    }
}

/// R^d -> R^{rows x cols} field (row-major) with an optional analytic
/// row-divergence `(div M)_i = sum_j d_j M_ij`.
#[derive(Clone)]
pub struct MatrixField {
    rows: usize,
    cols: usize,
    eval: VectorFn,
    divergence: Option<VectorFn>,
}

impl MatrixField {
    pub fn new<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { rows, cols, eval: Arc::new(f), divergence: None }
    }

    pub fn with_divergence<F, G>(rows: usize, cols: usize, f: F, div: G) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self { rows, cols, eval: Arc::new(f), divergence: Some(Arc::new(div)) }
    }

    /// Constant identity matrix (zero divergence).
    pub fn identity(d: usize) -> Self {
        Self::with_divergence(
            d,
            d,
            move |_, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = 1.0;
                }
            },
            |_, out: &mut [f64]| out.fill(0.0),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn value_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows * self.cols);
        (self.eval)(x, out);
    }

    /// Row divergence w.r.t. the first `rows` coordinates of x; requires a
    /// square field (rows == d) when falling back to finite differences.
    pub fn divergence_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows);
        if let Some(dv) = &self.divergence {
            dv(x, out);
            return;
        }
        let d = x.len();
        debug_assert_eq!(self.cols, d, "finite-difference divergence needs M: R^d -> R^{{m x d}}");
        let h = fd_step(x);
        let mut xp = x.to_vec();
        let mut mp = vec![0.0; self.rows * self.cols];
        let mut mm = vec![0.0; self.rows * self.cols];
        out.fill(0.0);
        for j in 0..d {
            let xj = x[j];
            xp[j] = xj + h;
            (self.eval)(&xp, &mut mp);
            xp[j] = xj - h;
            (self.eval)(&xp, &mut mm);
            xp[j] = xj;
            for (i, o) in out.iter_mut().enumerate() {
                *o += (mp[i * d + j] - mm[i * d + j]) / (2.0 * h);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fd_gradient_matches_analytic() {
        let f = ScalarField::new(|x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1]);
        let g = ScalarField::with_gradient(
            |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1],
            |x: &[f64], out: &mut [f64]| {
                out[0] = 2.0 * x[0] + 3.0 * x[1];
                out[1] = 3.0 * x[0];
            },
        );
        let x = [0.7, -1.3];
        let mut gf = [0.0; 2];
        let mut ga = [0.0; 2];
        f.gradient_into(&x, &mut gf);
        g.gradient_into(&x, &mut ga);
        assert_relative_eq!(gf[0], ga[0], epsilon = 1e-8);
        assert_relative_eq!(gf[1], ga[1], epsilon = 1e-8);
    }

    #[test]
    fn fd_divergence_of_linear_matrix_field() {
        // M = [[x1, x2], [x1*x2, 0]]: div row 0 = 1 + 1, div row 1 = x2.
        let m = MatrixField::new(2, 2, |x: &[f64], out: &mut [f64]| {
            out[0] = x[0];
            out[1] = x[1];
            out[2] = x[0] * x[1];
            out[3] = 0.0;
        });
        let x = [0.4, -0.9];
        let mut dv = [0.0; 2];
        m.divergence_into(&x, &mut dv);
        assert_relative_eq!(dv[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(dv[1], x[1], epsilon = 1e-8);
    }
}
