//! Independent reference computations for the integration tests. Nothing in
//! here calls into the closed forms or solvers it is used to check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// `‖T X − Z‖² + λ (‖T‖² − log|det T|)`, with the determinant taken directly.
pub fn tl_objective_ref(t: &DMatrix<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> f64 {
    let det = t.determinant().abs();
    if det == 0.0 {
        return f64::INFINITY;
    }
    (t * x - z).norm_squared() + lambda * (t.norm_squared() - det.ln())
}

/// `2 (T X − Z) Xᵀ + 2λ T − λ T⁻ᵀ`.
pub fn tl_gradient_ref(t: &DMatrix<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let inv_t = t.clone().try_inverse().expect("nonsingular").transpose();
    (t * x - z) * x.transpose() * 2.0 + t * (2.0 * lambda) - inv_t * lambda
}

/// Gradient descent with Armijo backtracking from `T = I`.
pub fn gradient_descent_transform(
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    lambda: f64,
    steps: usize,
) -> DMatrix<f64> {
    let k = x.nrows();
    let mut t = DMatrix::identity(k, k);
    let mut f = tl_objective_ref(&t, x, z, lambda);
    let mut step = 1.0;
    for _ in 0..steps {
        let g = tl_gradient_ref(&t, x, z, lambda);
        let gg = g.norm_squared();
        if gg < 1e-30 {
            break;
        }
        step *= 2.0;
        loop {
            let cand = &t - &g * step;
            let fc = tl_objective_ref(&cand, x, z, lambda);
            // the sign of det must not flip along the path
            let same_side = cand.determinant() * t.determinant() > 0.0;
            if same_side && fc <= f - 1e-4 * step * gg {
                t = cand;
                f = fc;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return t;
            }
        }
    }
    t
}

/// Central finite-difference gradient of `f` at `t`.
pub fn finite_difference<F: Fn(&DMatrix<f64>) -> f64>(f: F, t: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(t.nrows(), t.ncols());
    for i in 0..t.nrows() {
        for j in 0..t.ncols() {
            let mut plus = t.clone();
            plus[(i, j)] += h;
            let mut minus = t.clone();
            minus[(i, j)] -= h;
            g[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    g
}

/// Least-squares solution of the stacked system `[A1; A2] Z ≈ [B1; B2]` by SVD.
pub fn stacked_least_squares(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    b2: &DMatrix<f64>,
) -> DMatrix<f64> {
    let cols = a1.ncols();
    let mut a = DMatrix::zeros(a1.nrows() + a2.nrows(), cols);
    a.rows_mut(0, a1.nrows()).copy_from(a1);
    a.rows_mut(a1.nrows(), a2.nrows()).copy_from(a2);
    let mut b = DMatrix::zeros(b1.nrows() + b2.nrows(), b1.ncols());
    b.rows_mut(0, b1.nrows()).copy_from(b1);
    b.rows_mut(b1.nrows(), b2.nrows()).copy_from(b2);
    a.svd(true, true).solve(&b, 1e-14).expect("svd solve")
}

/// Textbook triple loop.
pub fn matmul_loops(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut acc = 0.0;
            for k in 0..a.ncols() {
                acc += a[(i, k)] * b[(k, j)];
            }
            c[(i, j)] = acc;
        }
    }
    c
}

/// Cyclic coordinate descent for `½‖y − Aα‖² + γ‖α‖₁`.
pub fn lasso_coordinate_descent(a: &DMatrix<f64>, y: &DVector<f64>, gamma: f64, sweeps: usize) -> DVector<f64> {
    let n = a.ncols();
    let mut alpha = DVector::zeros(n);
    let mut residual = y.clone();
    let col_sq: Vec<f64> = (0..n).map(|j| a.column(j).norm_squared()).collect();
    for _ in 0..sweeps {
        let mut max_change = 0.0f64;
        for j in 0..n {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = alpha[j];
            let rho = a.column(j).dot(&residual) + col_sq[j] * old;
            let new = if rho > gamma {
                (rho - gamma) / col_sq[j]
            } else if rho < -gamma {
                (rho + gamma) / col_sq[j]
            } else {
                0.0
            };
            if new != old {
                residual.axpy(old - new, &a.column(j).into_owned(), 1.0);
                alpha[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < 1e-15 {
            break;
        }
    }
    alpha
}

/// Two-pass mean and sample standard deviation.
pub fn two_pass_stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
