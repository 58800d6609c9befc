//! Single-domain transform (analysis dictionary) learning.
//!
//! A square transform `T` maps data columns `X` to coefficients `Z ≈ T X`.
//! Learning minimizes
//!
//! ```text
//! ‖T X − Z‖²_F + λ (‖T‖²_F − log |det T|)
//! ```
//!
//! by alternating an exact coefficient update (`Z = T X`) with a closed-form
//! transform update built from one Cholesky factorization and one SVD.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::{ensure_finite, shape, Error, Result};

/// Transforms whose smallest-to-largest singular value ratio falls below this
/// are treated as singular.
pub const SINGULAR_RATIO: f64 = 1e-12;

/// A square, nonsingular analysis transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform(DMatrix<f64>);

impl Transform {
    /// Validates `entries` as a transform: square, finite and with
    /// `σ_min / σ_max ≥ 1e-12`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::dims("transform", "square matrix", shape(&entries)));
        }
        if entries.nrows() == 0 {
            return Err(Error::InvalidArgument("empty transform".into()));
        }
        ensure_finite(&entries, "transform")?;
        let sv = entries.singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min < SINGULAR_RATIO * max {
            return Err(Error::Singular("transform"));
        }
        Ok(Transform(entries))
    }

    pub fn identity(k: usize) -> Self {
        Transform(DMatrix::identity(k, k))
    }

    /// Wraps a matrix already known to be nonsingular.
    pub(crate) fn from_trusted(entries: DMatrix<f64>) -> Self {
        debug_assert!(entries.is_square());
        Transform(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `log |det T|`, from the diagonal of an LU factorization.
    pub fn log_abs_det(&self) -> Result<f64> {
        let lu = self.0.clone().lu();
        let mut acc = 0.0;
        for d in lu.u().diagonal().iter() {
            let a = d.abs();
            if a == 0.0 || !a.is_finite() {
                return Err(Error::Singular("transform determinant"));
            }
            acc += a.ln();
        }
        Ok(acc)
    }

    /// `‖T‖²_F − log |det T|`.
    pub fn penalty(&self) -> Result<f64> {
        Ok(self.0.norm_squared() - self.log_abs_det()?)
    }

    /// `T⁻ᵀ`.
    pub fn inverse_transpose(&self) -> Result<DMatrix<f64>> {
        self.0
            .clone()
            .try_inverse()
            .map(|inv| inv.transpose())
            .ok_or(Error::Singular("transform inverse"))
    }
}

/// Value of the single-domain objective, split into its two addends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TlObjectiveValue {
    pub total: f64,
    /// `‖T X − Z‖²_F`
    pub fidelity: f64,
    /// `λ (‖T‖²_F − log |det T|)`
    pub regularizer: f64,
}

fn check_operands(t: &Transform, x: &DMatrix<f64>, z: Option<&DMatrix<f64>>) -> Result<()> {
    if x.nrows() != t.dim() {
        return Err(Error::dims(
            "data rows vs transform size",
            t.dim(),
            x.nrows(),
        ));
    }
    if let Some(z) = z {
        if z.shape() != (t.dim(), x.ncols()) {
            return Err(Error::dims(
                "coefficient matrix",
                format!("{}x{}", t.dim(), x.ncols()),
                shape(z),
            ));
        }
    }
    Ok(())
}

/// `‖T X − Z‖²_F + λ (‖T‖²_F − log |det T|)`.
pub fn tl_objective(
    t: &Transform,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    lambda: f64,
) -> Result<TlObjectiveValue> {
    check_operands(t, x, Some(z))?;
    let fidelity = (t.matrix() * x - z).norm_squared();
    let regularizer = lambda * t.penalty()?;
    Ok(TlObjectiveValue {
        total: fidelity + regularizer,
        fidelity,
        regularizer,
    })
}

/// Gradient of [`tl_objective`] with respect to `T`:
/// `2 (T X − Z) Xᵀ + λ (2 T − T⁻ᵀ)`.
pub fn tl_gradient(
    t: &Transform,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    check_operands(t, x, Some(z))?;
    let residual = t.matrix() * x - z;
    let mut grad = residual * x.transpose() * 2.0;
    grad += (t.matrix() * 2.0 - t.inverse_transpose()?) * lambda;
    Ok(grad)
}

/// Exact coefficient update: `Z = T X`.
pub fn update_coefficients(t: &Transform, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_operands(t, x, None)?;
    Ok(t.matrix() * x)
}

/// Closed-form transform update for a fixed data matrix.
///
/// The Cholesky factor of `X Xᵀ + λ I` depends only on `X` and `λ`, so
/// alternating schemes that revisit the same data build this once and call
/// [`TransformUpdater::update`] per sweep.
#[derive(Debug, Clone)]
pub struct TransformUpdater<'a> {
    x: &'a DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    lambda: f64,
}

impl<'a> TransformUpdater<'a> {
    pub fn new(x: &'a DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidArgument("empty data matrix".into()));
        }
        ensure_finite(x, "transform-update data")?;
        let k = x.nrows();
        let gram = x * x.transpose() + DMatrix::identity(k, k) * lambda;
        let chol = gram
            .cholesky()
            .ok_or(Error::Cholesky("X Xᵀ + λI"))?;
        Ok(TransformUpdater { x, chol, lambda })
    }

    /// Minimizer over `T` of `‖T X − Z‖²_F + λ (‖T‖²_F − log |det T|)`:
    ///
    /// ```text
    /// X Xᵀ + λ I = L Lᵀ,   L⁻¹ X Zᵀ = U Σ Vᵀ,
    /// T = ½ V (Σ + (Σ² + 2λ I)^½) Uᵀ L⁻¹
    /// ```
    pub fn update(&self, z: &DMatrix<f64>) -> Result<Transform> {
        let k = self.x.nrows();
        if z.shape() != (k, self.x.ncols()) {
            return Err(Error::dims(
                "coefficient matrix",
                format!("{}x{}", k, self.x.ncols()),
                shape(z),
            ));
        }
        ensure_finite(z, "transform-update coefficients")?;
        let l = self.chol.l();
        let cross = self.x * z.transpose();
        let whitened = l
            .solve_lower_triangular(&cross)
            .ok_or(Error::Singular("Cholesky factor"))?;
        let svd = whitened.svd(true, true);
        let u = svd.u.as_ref().expect("requested U");
        let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
        // Every shrunk singular value is ≥ sqrt(λ/2) > 0, so T is nonsingular.
        let shrunk = svd
            .singular_values
            .map(|s| 0.5 * (s + (s * s + 2.0 * self.lambda).sqrt()));
        let mut core = v_t.transpose();
        for (mut col, d) in core.column_iter_mut().zip(shrunk.iter()) {
            col *= *d;
        }
        let core = core * u.transpose();
        // core · L⁻¹ = (L⁻ᵀ coreᵀ)ᵀ
        let t = l
            .transpose()
            .solve_upper_triangular(&core.transpose())
            .ok_or(Error::Singular("Cholesky factor"))?
            .transpose();
        ensure_finite(&t, "updated transform")?;
        Ok(Transform::from_trusted(t))
    }
}

/// One-shot closed-form transform update; see [`TransformUpdater::update`].
pub fn update_transform(x: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> Result<Transform> {
    TransformUpdater::new(x, lambda)?.update(z)
}
