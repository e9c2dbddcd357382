//! Quasi-Newton minimization with finite-difference gradients.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop when the max-norm of the gradient falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective change stays below this for two
    /// consecutive iterations.
    pub rel_tol: f64,
    /// Largest max-norm step per iteration.
    pub max_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 2000,
            grad_tol: 1e-5,
            rel_tol: 1e-9,
            max_step: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_max: f64,
    pub evaluations: usize,
}

/// Central-difference step for coordinate value `x`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    6e-6 * x.abs().max(1.0)
}

/// Central-difference gradient. Non-finite side values fall back to a
/// one-sided difference; returns false when no finite difference exists.
pub fn central_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], fx: f64, g: &mut [f64]) -> bool {
    let mut xp = x.to_vec();
    let mut ok = true;
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => {
                ok = false;
                0.0
            }
        };
    }
    ok
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS with an Armijo backtracking line search. `f` may return a
/// non-finite value to signal an infeasible point; the line search backs off
/// from those.
pub fn minimize(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    evals += 1;
    if n == 0 || !fx.is_finite() {
        return OptimResult {
            x,
            f: fx,
            iterations: 0,
            converged: n == 0 && fx.is_finite(),
            grad_max: 0.0,
            evaluations: evals,
        };
    }
    let mut g = vec![0.0; n];
    central_gradient(&f, &x, fx, &mut g);
    evals += 2 * n;
    let mut h_inv = DMatrix::<f64>::identity(n, n) / max_abs(&g).max(1.0);
    let mut small_changes = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if max_abs(&g) < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut p = -(&h_inv * &gv);
        let mut slope = p.dot(&gv);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            h_inv = DMatrix::identity(n, n) / max_abs(&g).max(1.0);
            p = -(&h_inv * &gv);
            slope = p.dot(&gv);
        }
        let pmax = p.amax();
        if pmax > opts.max_step {
            p *= opts.max_step / pmax;
            slope *= opts.max_step / pmax;
        }

        let mut alpha = 1.0;
        let mut x_new = x.clone();
        let mut f_new = f64::INFINITY;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * p[i];
            }
            f_new = f(&x_new);
            evals += 1;
            if f_new.is_finite() && f_new <= fx + 1e-4 * alpha * slope {
                accepted = true;
                break;
            }
            alpha *= if f_new.is_finite() { 0.5 } else { 0.1 };
        }
        if !accepted {
            if h_inv != DMatrix::identity(n, n) / max_abs(&g).max(1.0) {
                h_inv = DMatrix::identity(n, n) / max_abs(&g).max(1.0);
                continue;
            }
            break;
        }

        let mut g_new = vec![0.0; n];
        central_gradient(&f, &x_new, f_new, &mut g_new);
        evals += 2 * n;

        let s = DVector::from_iterator(n, (0..n).map(|i| x_new[i] - x[i]));
        let y = DVector::from_iterator(n, (0..n).map(|i| g_new[i] - g[i]));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if iterations == 1 {
                h_inv = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            h_inv -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }

        let rel = (fx - f_new).abs() / fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel < opts.rel_tol {
            small_changes += 1;
            if small_changes >= 2 {
                converged = true;
                break;
            }
        } else {
            small_changes = 0;
        }
    }
    let grad_max = max_abs(&g);
    OptimResult {
        x,
        f: fx,
        iterations,
        converged: converged || grad_max < opts.grad_tol,
        grad_max,
        evaluations: evals,
    }
}

/// Central-difference Hessian with per-coordinate step
/// `1e-4 * max(1, |x_i|)`.
pub fn numerical_hessian(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> Option<DMatrix<f64>> {
    let n = x.len();
    let f0 = f(x);
    if !f0.is_finite() {
        return None;
    }
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let eval = |xp: &mut Vec<f64>, di: (usize, f64), dj: Option<(usize, f64)>| {
        xp[di.0] += di.1;
        if let Some((j, d)) = dj {
            xp[j] += d;
        }
        let v = f(xp);
        xp[di.0] = x[di.0];
        if let Some((j, _)) = dj {
            xp[j] = x[j];
        }
        v
    };
    for i in 0..n {
        let fp = eval(&mut xp, (i, h[i]), None);
        let fm = eval(&mut xp, (i, -h[i]), None);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = eval(&mut xp, (i, h[i]), Some((j, h[j])));
            let fpm = eval(&mut xp, (i, h[i]), Some((j, -h[j])));
            let fmp = eval(&mut xp, (i, -h[i]), Some((j, h[j])));
            let fmm = eval(&mut xp, (i, -h[i]), Some((j, -h[j])));
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess.iter().all(|v| v.is_finite()).then_some(hess)
}
