//! Seeded Bernoulli (Rademacher) sensing matrices.
//!
//! Entries are `±1/√m`, so `E‖Φx‖² = ‖x‖²`. The generator is SplitMix64
//! with its state initialized to the seed; entries are drawn row-major, one
//! 64-bit output per entry, and an entry is positive exactly when the most
//! significant bit of its output is 0. Any implementation of SplitMix64
//! therefore reproduces the matrix bit for bit.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::{shape, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    entries: DMatrix<f64>,
    seed: u64,
    scale: f64,
}

/// Draws an `m × n` Bernoulli sensing matrix with entries `±1/√m`.
pub fn bernoulli_matrix(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "sensing matrix dimensions must be positive, got {m}x{n}"
        )));
    }
    if m > n {
        return Err(Error::InvalidArgument(format!(
            "sensing matrix must not have more rows than columns, got {m}x{n}"
        )));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut rng = SplitMix64::seed_from_u64(seed);
    let entries = DMatrix::from_row_iterator(
        m,
        n,
        (0..m * n).map(|_| {
            if rng.next_u64() >> 63 == 0 {
                scale
            } else {
                -scale
            }
        }),
    );
    Ok(SensingMatrix {
        entries,
        seed,
        scale,
    })
}

/// Number of measurements for an undersampling ratio: `round(ratio · n)`.
pub fn measurement_count(ratio: f64, n: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "undersampling ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let m = (ratio * n as f64).round() as usize;
    if m == 0 {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} leaves no measurements for n = {n}"
        )));
    }
    Ok(m)
}

impl SensingMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `m / n`.
    pub fn ratio(&self) -> f64 {
        self.rows() as f64 / self.cols() as f64
    }

    /// `Y = Φ X` for signals stacked as columns.
    pub fn compress(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.cols() {
            return Err(Error::dims(
                "signal rows vs sensing columns",
                self.cols(),
                shape(x),
            ));
        }
        Ok(&self.entries * x)
    }
}

/// Free-function form of [`SensingMatrix::compress`].
pub fn compress(phi: &SensingMatrix, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    phi.compress(x)
}
