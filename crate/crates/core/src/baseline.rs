//! Compressed-sensing reconstruction baseline.
//!
//! Each measurement vector is inverted on its own by solving the LASSO
//!
//! ```text
//! min_α ½‖y − Φ Sᵀ α‖² + γ ‖α‖₁,    x̂ = Sᵀ α̂
//! ```
//!
//! over an orthonormal DCT-II basis `S`, by proximal gradient descent
//! (ISTA) or its momentum-accelerated variant (FISTA).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::sensing::SensingMatrix;
use crate::{ensure_finite, shape, Error, Result};

/// Relative `γ` factors tried by [`select_gamma_factor`]; the absolute weight
/// for a measurement `y` is `factor · ‖(ΦSᵀ)ᵀ y‖_∞`.
pub const GAMMA_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

const POWER_ITERATIONS: usize = 100;
/// Power iteration approaches the top eigenvalue from below; the margin keeps
/// the step at or under `1/L`.
const LIPSCHITZ_MARGIN: f64 = 1.01;

/// Orthonormal analysis basis; rows are atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyingBasis(DMatrix<f64>);

impl SparsifyingBasis {
    /// Accepts a square matrix with `‖S Sᵀ − I‖_F ≤ 1e-10`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::dims("sparsifying basis", "square matrix", shape(&entries)));
        }
        ensure_finite(&entries, "sparsifying basis")?;
        let k = entries.nrows();
        let residual = (&entries * entries.transpose() - DMatrix::identity(k, k)).norm();
        if residual > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "basis is not orthonormal (residual {residual:e})"
            )));
        }
        Ok(SparsifyingBasis(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Orthonormal DCT-II matrix of size `n`: row 0 is `1/√n`, row `k` is
/// `√(2/n) cos(π (2j + 1) k / 2n)`.
///
/// # Panics
///
/// If `n == 0`.
pub fn dct_basis(n: usize) -> SparsifyingBasis {
    assert!(n >= 1, "DCT size must be positive");
    let nf = n as f64;
    let first = 1.0 / nf.sqrt();
    let rest = (2.0 / nf).sqrt();
    SparsifyingBasis(DMatrix::from_fn(n, n, |k, j| {
        if k == 0 {
            first
        } else {
            rest * (PI * (2 * j + 1) as f64 * k as f64 / (2.0 * nf)).cos()
        }
    }))
}

/// Componentwise `sign(v) · max(|v| − τ, 0)`.
pub fn soft_threshold(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    debug_assert!(tau >= 0.0);
    v.map(|x| x.signum() * (x.abs() - tau).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsSolverConfig {
    /// Weight of the l1 term.
    pub gamma: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// FISTA momentum instead of plain ISTA.
    pub accelerated: bool,
}

impl CsSolverConfig {
    pub fn new(gamma: f64) -> Self {
        CsSolverConfig {
            gamma,
            max_iters: 500,
            rel_tol: 1e-8,
            accelerated: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidArgument("rel_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CsSolution {
    pub signal: DVector<f64>,
    pub coefficients: DVector<f64>,
    pub iterations: usize,
    /// Objective at the start point followed by one value per iteration.
    pub objectives: Vec<f64>,
}

/// Precomputed state for reconstructing many measurements taken with the
/// same sensing matrix and basis.
#[derive(Debug, Clone)]
pub struct CsSolver {
    /// `Φ Sᵀ`
    op: DMatrix<f64>,
    basis: DMatrix<f64>,
    lipschitz: f64,
}

impl CsSolver {
    pub fn new(phi: &SensingMatrix, basis: &SparsifyingBasis) -> Result<Self> {
        Self::from_matrix(phi.matrix(), basis)
    }

    pub fn from_matrix(phi: &DMatrix<f64>, basis: &SparsifyingBasis) -> Result<Self> {
        if phi.ncols() != basis.dim() {
            return Err(Error::dims(
                "sensing columns vs basis size",
                basis.dim(),
                shape(phi),
            ));
        }
        ensure_finite(phi, "sensing matrix")?;
        let op = phi * basis.matrix().transpose();
        let lipschitz = power_iteration(&op) * LIPSCHITZ_MARGIN;
        Ok(CsSolver {
            op,
            basis: basis.matrix().clone(),
            lipschitz,
        })
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn measurement_dim(&self) -> usize {
        self.op.nrows()
    }

    pub fn signal_dim(&self) -> usize {
        self.op.ncols()
    }

    /// `‖(ΦSᵀ)ᵀ y‖_∞`; any `γ` at or above it yields `α̂ = 0`.
    pub fn gamma_ceiling(&self, y: &DVector<f64>) -> f64 {
        self.op.tr_mul(y).amax()
    }

    /// `½‖y − ΦSᵀα‖² + γ‖α‖₁`.
    pub fn objective(&self, alpha: &DVector<f64>, y: &DVector<f64>, gamma: f64) -> f64 {
        0.5 * (y - &self.op * alpha).norm_squared() + gamma * alpha.lp_norm(1)
    }

    /// One proximal-gradient step from `alpha` with step `1/L`.
    pub fn step(&self, alpha: &DVector<f64>, y: &DVector<f64>, gamma: f64) -> DVector<f64> {
        let step = 1.0 / self.lipschitz;
        let residual = &self.op * alpha - y;
        let grad = self.op.tr_mul(&residual);
        soft_threshold(&(alpha - grad * step), gamma * step)
    }

    pub fn solve(&self, y: &DVector<f64>, config: &CsSolverConfig) -> Result<CsSolution> {
        config.validate()?;
        if y.len() != self.measurement_dim() {
            return Err(Error::dims(
                "measurement length",
                self.measurement_dim(),
                y.len(),
            ));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("measurements"));
        }
        let gamma = config.gamma;
        let mut alpha = DVector::zeros(self.signal_dim());
        let mut objectives = vec![self.objective(&alpha, y, gamma)];
        // FISTA extrapolation point and momentum scalar
        let mut probe = alpha.clone();
        let mut theta = 1.0f64;
        let mut iterations = 0;

        for _ in 0..config.max_iters {
            iterations += 1;
            let next = if config.accelerated {
                let next = self.step(&probe, y, gamma);
                let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                probe = &next + (&next - &alpha) * ((theta - 1.0) / theta_next);
                theta = theta_next;
                next
            } else {
                self.step(&alpha, y, gamma)
            };
            alpha = next;
            let f = self.objective(&alpha, y, gamma);
            let prev = *objectives.last().unwrap();
            objectives.push(f);
            if (prev - f).abs() <= config.rel_tol * prev.abs() {
                break;
            }
        }

        let signal = self.basis.tr_mul(&alpha);
        Ok(CsSolution {
            signal,
            coefficients: alpha,
            iterations,
            objectives,
        })
    }

    /// Reconstructs every column of `y` with a per-column weight
    /// `γ = factor · ‖(ΦSᵀ)ᵀ y‖_∞`. Columns are solved in parallel.
    pub fn reconstruct_batch(
        &self,
        y: &DMatrix<f64>,
        gamma_factor: f64,
        config: &CsSolverConfig,
    ) -> Result<DMatrix<f64>> {
        if y.nrows() != self.measurement_dim() {
            return Err(Error::dims(
                "measurement rows",
                self.measurement_dim(),
                y.nrows(),
            ));
        }
        let columns: Vec<DVector<f64>> = (0..y.ncols())
            .into_par_iter()
            .map(|j| {
                let col = y.column(j).into_owned();
                self.solve_relative(&col, gamma_factor, config)
            })
            .collect::<Result<_>>()?;
        Ok(if columns.is_empty() {
            DMatrix::zeros(self.signal_dim(), 0)
        } else {
            DMatrix::from_columns(&columns)
        })
    }

    /// Solves with `γ = factor · ‖(ΦSᵀ)ᵀ y‖_∞`; a zero measurement maps to a
    /// zero signal.
    pub fn solve_relative(
        &self,
        y: &DVector<f64>,
        gamma_factor: f64,
        config: &CsSolverConfig,
    ) -> Result<DVector<f64>> {
        let ceiling = self.gamma_ceiling(y);
        if ceiling == 0.0 {
            return Ok(DVector::zeros(self.signal_dim()));
        }
        let cfg = CsSolverConfig {
            gamma: gamma_factor * ceiling,
            ..*config
        };
        Ok(self.solve(y, &cfg)?.signal)
    }
}

/// Largest eigenvalue of `AᵀA`, by power iteration on the smaller Gram
/// matrix from a constant start vector.
fn power_iteration(a: &DMatrix<f64>) -> f64 {
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.tr_mul(a)
    };
    let k = gram.nrows();
    let mut v = DVector::from_element(k, 1.0 / (k as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = &gram * &v;
        estimate = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
    }
    estimate.max((&gram * &v).dot(&v))
}

/// Reconstructs `y` (length m) from the sensing matrix and basis.
pub fn cs_reconstruct(
    phi: &SensingMatrix,
    basis: &SparsifyingBasis,
    y: &DVector<f64>,
    config: &CsSolverConfig,
) -> Result<DVector<f64>> {
    Ok(CsSolver::new(phi, basis)?.solve(y, config)?.signal)
}

/// Picks the relative weight from `grid` with the lowest mean NMSE on a
/// validation set of measurements `y` and their ground-truth signals `x`.
/// Returns the factor and its mean NMSE.
pub fn select_gamma_factor(
    solver: &CsSolver,
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    grid: &[f64],
    config: &CsSolverConfig,
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    if y.ncols() != x.ncols() || y.ncols() == 0 {
        return Err(Error::dims("validation column counts", y.ncols(), x.ncols()));
    }
    let mut best: Option<(f64, f64)> = None;
    for &factor in grid {
        let recon = solver.reconstruct_batch(y, factor, config)?;
        let mut total = 0.0;
        for j in 0..x.ncols() {
            total += crate::data::nmse(
                recon.column(j).as_slice(),
                x.column(j).as_slice(),
            )?;
        }
        let mean = total / x.ncols() as f64;
        if best.is_none_or(|(_, b)| mean < b) {
            best = Some((factor, mean));
        }
    }
    Ok(best.unwrap())
}
