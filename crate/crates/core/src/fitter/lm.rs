//! Bounded Levenberg–Marquardt on a residual vector.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative SSR decrease below which an accepted step ends the fit.
    pub ftol: f64,
    /// Relative step norm below which an accepted step ends the fit.
    pub xtol: f64,
    /// Relative central-difference step of the Jacobian.
    pub rel_step: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-10,
            xtol: 1e-12,
            rel_step: 1e-6,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ssr: f64,
    /// (JᵀJ)⁻¹ at the optimum, not yet scaled by the reduced χ².
    pub inverse_normal: DMatrix<f64>,
    pub n_iter: usize,
    pub converged: bool,
}

fn ssr_of(r: &[f64]) -> f64 {
    let s: f64 = r.iter().map(|v| v * v).sum();
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], lo: &[f64], hi: &[f64], scale: &[f64], rel: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = rel * x[j].abs().max(scale[j]);
        let (up, down) = (x[j] + h <= hi[j], x[j] - h >= lo[j]);
        let column: Vec<f64> = match (up, down) {
            (true, true) => {
                probe[j] = x[j] + h;
                let a = f(&probe);
                probe[j] = x[j] - h;
                let b = f(&probe);
                a.iter().zip(&b).map(|(a, b)| (a - b) / (2.0 * h)).collect()
            }
            (true, false) => {
                probe[j] = x[j] + h;
                f(&probe).iter().zip(r0).map(|(a, b)| (a - b) / h).collect()
            }
            (false, true) => {
                probe[j] = x[j] - h;
                r0.iter().zip(&f(&probe)).map(|(a, b)| (a - b) / h).collect()
            }
            (false, false) => {
                return Err(Error::Degenerate(format!(
                    "bounds of parameter {j} are narrower than the difference step"
                )))
            }
        };
        probe[j] = x[j];
        if column.len() != m || column.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonConvergence(format!(
                "non-finite model derivative for parameter {j}"
            )));
        }
        jac.set_column(j, &DVector::from_vec(column));
    }
    Ok(jac)
}

/// Inverse of a symmetric positive matrix after unit-diagonal scaling;
/// errors when the scaled matrix is numerically singular.
fn scaled_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a[(i, i)].sqrt()).collect();
    if let Some(j) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate(format!("parameter {j} does not affect the model")));
    }
    let s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]));
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 1e-13 * max) {
        return Err(Error::Degenerate(format!(
            "normal equations are singular (scaled condition number {:.3e})",
            max / min.max(0.0)
        )));
    }
    let inv = eig
        .eigenvectors
        .clone()
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v))
        * eig.eigenvectors.transpose();
    Ok(DMatrix::from_fn(n, n, |i, j| inv[(i, j)] / (d[i] * d[j])))
}

/// Minimizes Σ r(x)² over the box [lo, hi].
///
/// Running out of iterations is not an error: the outcome carries
/// `converged = false`.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &LmOptions) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    if lo.len() != n || hi.len() != n {
        return Err(Error::Invalid("bounds must match the parameter count".into()));
    }
    for j in 0..n {
        if !(lo[j] < hi[j]) || !(x0[j] >= lo[j] && x0[j] <= hi[j]) {
            return Err(Error::Invalid(format!(
                "parameter {j}: need lo < hi and lo <= initial <= hi"
            )));
        }
    }
    let scale: Vec<f64> = x0
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&x, (&l, &h))| {
            if x != 0.0 {
                x.abs()
            } else if (h - l).is_finite() {
                1e-3 * (h - l)
            } else {
                1.0
            }
        })
        .collect();
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let mut ssr = ssr_of(&r);
    if !ssr.is_finite() {
        return Err(Error::NonConvergence("model is not finite at the initial point".into()));
    }
    if r.len() < n {
        return Err(Error::Invalid(format!(
            "{} residuals cannot determine {n} parameters",
            r.len()
        )));
    }
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut n_iter = 0;
    let mut jac = jacobian(&f, &x, &r, lo, hi, &scale, opts.rel_step)?;
    scaled_inverse(&(jac.transpose() * &jac))?;

    while n_iter < opts.max_iter && !converged {
        n_iter += 1;
        if ssr == 0.0 {
            converged = true;
            break;
        }
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        // Damping acts on column-normalized variables so parameters of very
        // different magnitude are treated alike.
        let c: Vec<f64> = (0..n)
            .map(|i| if a[(i, i)] > 0.0 { a[(i, i)].sqrt() } else { 1.0 })
            .collect();
        let a_s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (c[i] * c[j]));
        let g_s = DVector::from_fn(n, |i, _| g[i] / c[i]);
        let mut accepted = false;
        while !accepted {
            let mut damped = a_s.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * a_s[(i, i)].max(1e-30);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&g_s)).component_div(&DVector::from_column_slice(&c)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        converged = true;
                        break;
                    }
                    continue;
                }
            };
            let trial: Vec<f64> = (0..n).map(|j| (x[j] + step[j]).clamp(lo[j], hi[j])).collect();
            let small_step = (0..n).all(|j| (trial[j] - x[j]).abs() <= opts.xtol * (x[j].abs() + opts.xtol * scale[j]));
            if small_step {
                converged = true;
                break;
            }
            let r_trial = f(&trial);
            let ssr_trial = ssr_of(&r_trial);
            if ssr_trial < ssr {
                let drop = ssr - ssr_trial;
                x = trial;
                r = r_trial;
                ssr = ssr_trial;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if drop <= opts.ftol * ssr.max(f64::MIN_POSITIVE) {
                    converged = true;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    // No descent direction left at working precision.
                    converged = true;
                    break;
                }
            }
        }
        if accepted {
            jac = jacobian(&f, &x, &r, lo, hi, &scale, opts.rel_step)?;
        }
    }
    let inverse_normal = scaled_inverse(&(jac.transpose() * &jac))?;
    Ok(LmOutcome {
        params: x,
        residuals: r,
        ssr,
        inverse_normal,
        n_iter,
        converged,
    })
}
