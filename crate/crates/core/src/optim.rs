//! Quasi-Newton minimization with finite-difference derivatives.
//!
//! The objective may return `+inf` to mark points outside its domain; the line
//! search treats those as failed trial steps and backs off.

use nalgebra::{DMatrix, DVector};

/// Relative step for the central-difference gradient.
pub const GRADIENT_STEP: f64 = 1e-6;
/// Relative step for the finite-difference Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the largest gradient component is at most this.
    pub grad_tol: f64,
    /// Longest step (Euclidean) tried by the line search.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 500, grad_tol: 1e-6, max_step: 5.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn step_size(x: f64, rel: f64) -> f64 {
    rel * (1.0 + x.abs())
}

/// Central-difference gradient with per-coordinate step `rel (1 + |x_i|)`.
pub fn numerical_gradient<F>(f: &F, x: &[f64], rel: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step_size(x[i], rel);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Fourth-order central-difference gradient with step `HESSIAN_STEP (1 + |x_i|)`.
///
/// Much less sensitive to rounding in `f` than [`numerical_gradient`] at the
/// default step, so it is used to judge stationarity.
pub fn precise_gradient<F>(f: &F, x: &[f64]) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = step_size(x[i], HESSIAN_STEP);
            let mut at = |d: f64| {
                probe[i] = x[i] + d;
                let v = f(&probe);
                probe[i] = x[i];
                v
            };
            let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
        })
        .collect()
}

/// Finite-difference Hessian from function values.
pub fn numerical_hessian<F>(f: &F, x: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|&v| step_size(v, HESSIAN_STEP)).collect();
    let f0 = f(x);
    let mut probe = x.to_vec();
    let eval = |probe: &mut Vec<f64>, moves: &[(usize, f64)]| {
        for &(i, d) in moves {
            probe[i] += d;
        }
        let v = f(probe);
        for &(i, d) in moves {
            probe[i] -= d;
        }
        v
    };
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        let up = eval(&mut probe, &[(i, h[i])]);
        let down = eval(&mut probe, &[(i, -h[i])]);
        hess[(i, i)] = (up - 2.0 * f0 + down) / (h[i] * h[i]);
        for j in 0..i {
            let pp = eval(&mut probe, &[(i, h[i]), (j, h[j])]);
            let pm = eval(&mut probe, &[(i, h[i]), (j, -h[j])]);
            let mp = eval(&mut probe, &[(i, -h[i]), (j, h[j])]);
            let mm = eval(&mut probe, &[(i, -h[i]), (j, -h[j])]);
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS on the inverse Hessian with a backtracking Armijo line search.
pub fn bfgs<F>(f: &F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let n = x0.len();
    let gradient = |x: &DVector<f64>| DVector::from_vec(numerical_gradient(f, x.as_slice(), GRADIENT_STEP));
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    if !fx.is_finite() {
        return Minimum { x: x0.to_vec(), value: fx, grad_norm: f64::INFINITY, iterations: 0, converged: false };
    }
    let mut g = gradient(&x);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut stalled = 0;

    while iterations < opts.max_iter {
        if max_abs(&g) <= opts.grad_tol {
            break;
        }
        iterations += 1;
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let norm = dir.norm();
        let mut alpha = if norm > opts.max_step { opts.max_step / norm } else { 1.0 };

        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + alpha * &dir;
            let ft = f(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if fresh {
                break;
            }
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };

        let g_new = gradient(&x_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                // Scale the initial inverse Hessian to the observed curvature.
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= rho * (&hy * s.transpose() + &s * hy.transpose());
            h_inv += (rho * rho * yhy + rho) * (&s * s.transpose());
            fresh = false;
        }
        let improvement = fx - f_new;
        x = x_new;
        g = g_new;
        fx = f_new;
        if improvement <= 1e-14 * (1.0 + fx.abs()) {
            stalled += 1;
            if stalled >= 10 {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    let (x, fx, grad_norm) = polish(f, x, fx, opts.grad_tol);
    Minimum { x: x.iter().copied().collect(), value: fx, grad_norm, iterations, converged: grad_norm <= opts.grad_tol }
}

/// Newton steps on the finite-difference Hessian, judged by the precise
/// gradient. A step is kept only if it does not raise `f` and shrinks the
/// gradient.
fn polish<F>(f: &F, mut x: DVector<f64>, mut fx: f64, tol: f64) -> (DVector<f64>, f64, f64)
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let precise = |x: &DVector<f64>| DVector::from_vec(precise_gradient(f, x.as_slice()));
    let mut g = precise(&x);
    for _ in 0..5 {
        if max_abs(&g) <= tol || !g.iter().all(|v| v.is_finite()) {
            break;
        }
        let hess = numerical_hessian(f, x.as_slice());
        let Some(chol) = ((&hess + hess.transpose()) * 0.5).cholesky() else {
            break;
        };
        let trial = &x - chol.solve(&g);
        let ft = f(trial.as_slice());
        if !(ft <= fx + 1e-12 * (1.0 + fx.abs())) {
            break;
        }
        let gt = precise(&trial);
        if max_abs(&gt) >= max_abs(&g) {
            break;
        }
        x = trial;
        fx = ft.min(fx);
        g = gt;
    }
    let norm = max_abs(&g);
    (x, fx, norm)
}
