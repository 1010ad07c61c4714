//! Restarted GMRES over matrix-free operators.
//!
//! Modified Gram-Schmidt with one reorthogonalization pass when loss of
//! orthogonality is detected; a right-preconditioning hook is present but
//! identity by default. Non-convergence is a result, not an error.

use nalgebra::DVector;
use std::time::Instant;

/// A square linear operator applied matrix-free.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
}

/// Dense matrix as a linear operator (tests, dense baselines).
impl LinearOperator for nalgebra::DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        (self * v).as_slice().to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct GmresOptions {
    /// Relative residual target.
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            restart: 50,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationStats {
    pub iterations: usize,
    /// True relative residual ||b - A x|| / ||b||, recomputed at exit.
    pub final_residual: f64,
    pub per_iteration_seconds: Vec<f64>,
    pub converged: bool,
}

/// Unpreconditioned restarted GMRES.
pub fn gmres(
    op: &dyn LinearOperator,
    b: &[f64],
    opts: &GmresOptions,
    x0: Option<&[f64]>,
) -> (Vec<f64>, IterationStats) {
    gmres_right_preconditioned(op, None, b, opts, x0)
}

/// Restarted GMRES on A M^-1 u = b with x = M^-1 u.
///
/// `precond` applies M^-1; `None` means identity.
pub fn gmres_right_preconditioned(
    op: &dyn LinearOperator,
    precond: Option<&dyn LinearOperator>,
    b: &[f64],
    opts: &GmresOptions,
    x0: Option<&[f64]>,
) -> (Vec<f64>, IterationStats) {
    let n = op.dim();
    assert_eq!(b.len(), n, "rhs length must match operator dimension");
    let apply_m = |v: &DVector<f64>| -> DVector<f64> {
        match precond {
            Some(m) => DVector::from_vec(m.apply(v.as_slice())),
            None => v.clone(),
        }
    };
    let apply_a = |v: &DVector<f64>| -> DVector<f64> { DVector::from_vec(op.apply(v.as_slice())) };

    let b_vec = DVector::from_column_slice(b);
    let b_norm = b_vec.norm();
    let mut x = match x0 {
        Some(x0) => {
            assert_eq!(x0.len(), n);
            DVector::from_column_slice(x0)
        }
        None => DVector::zeros(n),
    };

    // Zero right-hand side: the solution is zero (or x0 if it already
    // solves the system); report convergence without iterating.
    if b_norm == 0.0 {
        let x = DVector::zeros(n);
        return (
            x.as_slice().to_vec(),
            IterationStats {
                iterations: 0,
                final_residual: 0.0,
                per_iteration_seconds: Vec::new(),
                converged: true,
            },
        );
    }

    let mut per_iter = Vec::new();
    let mut total_iters = 0usize;
    let mut converged = false;

    'outer: while total_iters < opts.max_iter {
        let r = &b_vec - apply_a(&x);
        let beta = r.norm();
        if beta / b_norm <= opts.tol {
            converged = true;
            break;
        }

        let m = opts.restart.max(1);
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m + 1);
        basis.push(&r / beta);
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;

        let mut k_done = 0usize;
        for k in 0..m {
            if total_iters >= opts.max_iter {
                break;
            }
            let tick = Instant::now();
            total_iters += 1;

            let mut w = apply_a(&apply_m(&basis[k]));
            let w_norm_before = w.norm();
            // Modified Gram-Schmidt.
            for (j, vj) in basis.iter().enumerate().take(k + 1) {
                let hjk = w.dot(vj);
                h[j][k] = hjk;
                w.axpy(-hjk, vj, 1.0);
            }
            // One reorthogonalization pass if cancellation was severe.
            if w.norm() < 1e-8 * w_norm_before {
                for (j, vj) in basis.iter().enumerate().take(k + 1) {
                    let corr = w.dot(vj);
                    h[j][k] += corr;
                    w.axpy(-corr, vj, 1.0);
                }
            }
            let hk1 = w.norm();
            h[k + 1][k] = hk1;

            // Apply stored Givens rotations to the new column.
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let (c, s) = givens(h[k][k], h[k + 1][k]);
            cs[k] = c;
            sn[k] = s;
            h[k][k] = c * h[k][k] + s * h[k + 1][k];
            h[k + 1][k] = 0.0;
            let t = c * g[k] + s * g[k + 1];
            g[k + 1] = -s * g[k] + c * g[k + 1];
            g[k] = t;

            k_done = k + 1;
            per_iter.push(tick.elapsed().as_secs_f64());

            let implied = g[k_done].abs() / b_norm;
            if hk1 == 0.0 {
                // Happy breakdown: the Krylov space is invariant. Solve and
                // either accept convergence or restart from the new iterate.
                update_solution(&mut x, &h, &g, &basis, k_done, &apply_m);
                if implied <= opts.tol {
                    converged = true;
                    break 'outer;
                }
                continue 'outer;
            }
            basis.push(&w / hk1);

            if implied <= opts.tol {
                update_solution(&mut x, &h, &g, &basis, k_done, &apply_m);
                converged = true;
                break 'outer;
            }
        }
        if k_done > 0 && !converged {
            update_solution(&mut x, &h, &g, &basis, k_done, &apply_m);
        }
    }

    let final_residual = (&b_vec - apply_a(&x)).norm() / b_norm;
    if final_residual <= opts.tol {
        converged = true;
    }
    (
        x.as_slice().to_vec(),
        IterationStats {
            iterations: total_iters,
            final_residual,
            per_iteration_seconds: per_iter,
            converged,
        },
    )
}

fn update_solution(
    x: &mut DVector<f64>,
    h: &[Vec<f64>],
    g: &[f64],
    basis: &[DVector<f64>],
    k: usize,
    apply_m: &dyn Fn(&DVector<f64>) -> DVector<f64>,
) {
    // Back-substitute the k x k triangular system.
    let mut y = vec![0.0f64; k];
    for i in (0..k).rev() {
        let mut sum = g[i];
        for (j, yj) in y.iter().enumerate().take(k).skip(i + 1) {
            sum -= h[i][j] * yj;
        }
        y[i] = sum / h[i][i];
    }
    let mut update = DVector::zeros(x.len());
    for (j, yj) in y.iter().enumerate() {
        update.axpy(*yj, &basis[j], 1.0);
    }
    *x += apply_m(&update);
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else if a.abs() > b.abs() {
        let t = b / a;
        let c = 1.0 / (1.0 + t * t).sqrt() * a.signum();
        (c, c * t)
    } else {
        let t = a / b;
        let s = 1.0 / (1.0 + t * t).sqrt() * b.signum();
        (s * t, s)
    }
}
