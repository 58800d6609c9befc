//! Coupled analysis dictionary learning.
//!
//! Two square transforms are learned jointly: `T_M` on the measurement
//! domain `Y` (m×N) and `T_S` on the signal domain `X` (n×N), together with a
//! coupling map `C` (n×m) that carries measurement coefficients onto signal
//! coefficients. The joint objective is
//!
//! ```text
//!   ‖T_M Y − Z_M‖² + ‖T_S X − Z_S‖²
//! + λ (‖T_M‖² + ‖T_S‖² − log|det T_M| − log|det T_S|)
//! + μ ‖Z_S − C Z_M‖²
//! ```
//!
//! and is minimized by exact block-coordinate descent. Each sweep updates
//! `Z_M`, `Z_S`, `T_M`, `T_S` and `C` in that order, so the objective never
//! increases. Reconstruction of a measurement `y` is `T_S⁻¹ C T_M y`, which
//! is precomputed into a single `n × m` operator when the model is built.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::transform::{Transform, TransformUpdater};
use crate::{ensure_finite, shape, Error, Result};

/// Ridge added to `Z_M Z_Mᵀ` when it is not numerically positive definite.
pub const COUPLING_RIDGE: f64 = 1e-10;

/// The five blocks of one alternating-minimization sweep, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubStep {
    MeasurementCoefficients,
    SignalCoefficients,
    MeasurementTransform,
    SignalTransform,
    Coupling,
}

impl SubStep {
    pub const ORDER: [SubStep; 5] = [
        SubStep::MeasurementCoefficients,
        SubStep::SignalCoefficients,
        SubStep::MeasurementTransform,
        SubStep::SignalTransform,
        SubStep::Coupling,
    ];
}

/// All optimization variables of the coupled problem.
#[derive(Debug, Clone)]
pub struct CoupledVariables {
    pub t_m: Transform,
    pub t_s: Transform,
    pub z_m: DMatrix<f64>,
    pub z_s: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
}

/// The coupled objective broken into its four addends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledObjective {
    /// `‖T_M Y − Z_M‖²`
    pub measurement_fidelity: f64,
    /// `‖T_S X − Z_S‖²`
    pub signal_fidelity: f64,
    /// `λ (‖T_M‖² + ‖T_S‖² − log|det T_M| − log|det T_S|)`
    pub regularizer: f64,
    /// `μ ‖Z_S − C Z_M‖²`
    pub coupling: f64,
}

impl CoupledObjective {
    pub fn total(&self) -> f64 {
        self.measurement_fidelity + self.signal_fidelity + self.regularizer + self.coupling
    }
}

fn expect_shape(
    context: &'static str,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dims(context, format!("{rows}x{cols}"), shape(m)));
    }
    Ok(())
}

fn check_variables(
    vars: &CoupledVariables,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<()> {
    let (n, m, count) = (vars.t_s.dim(), vars.t_m.dim(), x.ncols());
    expect_shape("signal matrix X", x, n, count)?;
    expect_shape("measurement matrix Y", y, m, count)?;
    expect_shape("measurement coefficients Z_M", &vars.z_m, m, count)?;
    expect_shape("signal coefficients Z_S", &vars.z_s, n, count)?;
    expect_shape("coupling map C", &vars.coupling, n, m)
}

/// Evaluates the coupled objective at `vars`.
pub fn coupled_objective(
    vars: &CoupledVariables,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    mu: f64,
) -> Result<CoupledObjective> {
    check_variables(vars, x, y)?;
    Ok(CoupledObjective {
        measurement_fidelity: (vars.t_m.matrix() * y - &vars.z_m).norm_squared(),
        signal_fidelity: (vars.t_s.matrix() * x - &vars.z_s).norm_squared(),
        regularizer: lambda * (vars.t_m.penalty()? + vars.t_s.penalty()?),
        coupling: mu * (&vars.z_s - &vars.coupling * &vars.z_m).norm_squared(),
    })
}

fn check_mu(mu: f64) -> Result<()> {
    if mu >= 0.0 && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "mu must be finite and non-negative, got {mu}"
        )))
    }
}

/// Measurement-coefficient block: minimizes
/// `‖T_M Y − Z_M‖² + μ ‖Z_S − C Z_M‖²` by solving
/// `(I + μ CᵀC) Z_M = T_M Y + μ Cᵀ Z_S`.
pub fn solve_zm(
    t_m: &Transform,
    y: &DMatrix<f64>,
    z_s: &DMatrix<f64>,
    coupling: &DMatrix<f64>,
    mu: f64,
) -> Result<DMatrix<f64>> {
    check_mu(mu)?;
    let m = t_m.dim();
    expect_shape("measurement matrix Y", y, m, y.ncols())?;
    expect_shape("coupling map C", coupling, z_s.nrows(), m)?;
    expect_shape("signal coefficients Z_S", z_s, coupling.nrows(), y.ncols())?;

    let mut rhs = t_m.matrix() * y;
    if mu == 0.0 {
        return Ok(rhs);
    }
    rhs.gemm_tr(mu, coupling, z_s, 1.0);
    let normal = DMatrix::identity(m, m) + coupling.tr_mul(coupling) * mu;
    let chol = normal
        .cholesky()
        .ok_or(Error::Cholesky("I + μ CᵀC"))?;
    Ok(chol.solve(&rhs))
}

/// Signal-coefficient block: the minimizer of
/// `‖T_S X − Z_S‖² + μ ‖Z_S − C Z_M‖²`, i.e. `(T_S X + μ C Z_M) / (1 + μ)`.
pub fn solve_zs(
    t_s: &Transform,
    x: &DMatrix<f64>,
    z_m: &DMatrix<f64>,
    coupling: &DMatrix<f64>,
    mu: f64,
) -> Result<DMatrix<f64>> {
    check_mu(mu)?;
    let n = t_s.dim();
    expect_shape("signal matrix X", x, n, x.ncols())?;
    expect_shape("coupling map C", coupling, n, z_m.nrows())?;
    expect_shape("measurement coefficients Z_M", z_m, coupling.ncols(), x.ncols())?;

    let mut z = t_s.matrix() * x;
    z.gemm(mu, coupling, z_m, 1.0);
    z /= 1.0 + mu;
    Ok(z)
}

/// Coupling block: least-squares `C = Z_S Z_Mᵀ (Z_M Z_Mᵀ)⁻¹`.
///
/// Falls back to `Z_M Z_Mᵀ + 1e-10·I` when the Gram matrix is not
/// numerically positive definite.
pub fn solve_coupling(z_s: &DMatrix<f64>, z_m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z_s.ncols() != z_m.ncols() {
        return Err(Error::dims(
            "coefficient column counts",
            z_m.ncols(),
            z_s.ncols(),
        ));
    }
    let m = z_m.nrows();
    let gram = z_m * z_m.transpose();
    let cross = z_m * z_s.transpose();
    let chol = match gram.clone().cholesky() {
        Some(c) if c.l_dirty().diagonal().iter().all(|d| *d > 0.0) => c,
        _ => {
            let ridge = COUPLING_RIDGE * gram.trace().max(1.0) / m.max(1) as f64;
            (gram + DMatrix::identity(m, m) * ridge)
                .cholesky()
                .ok_or(Error::Cholesky("Z_M Z_Mᵀ + ridge"))?
        }
    };
    // Cᵀ = (Z_M Z_Mᵀ)⁻¹ Z_M Z_Sᵀ
    Ok(chol.solve(&cross).transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// `T_M = I`, `T_S = I`, `Z_M = Y`, `Z_S = X`.
    #[default]
    Identity,
    /// Seeded random orthogonal transforms, coefficients `T Y` and `T X`.
    RandomOrthogonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub mu: f64,
    pub max_iters: usize,
    /// Stop once `|f_k − f_{k−1}| / max(1, |f_{k−1}|)` drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            mu: 1.0,
            max_iters: 200,
            rel_tol: 1e-6,
            seed: 0,
            init: InitScheme::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidArgument(format!(
                "{what} must be positive and finite, got {v}"
            )))
        };
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda", self.lambda);
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu", self.mu);
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return bad("rel_tol", self.rel_tol);
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Objective history of a training run. Entry 0 is the objective right after
/// initialization; entry `k` follows sweep `k`.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub objectives: Vec<CoupledObjective>,
    pub iterations_run: usize,
    pub converged: bool,
}

impl TrainTrace {
    pub fn totals(&self) -> Vec<f64> {
        self.objectives.iter().map(CoupledObjective::total).collect()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objectives.last().map(CoupledObjective::total)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "iteration,total,measurement_fidelity,signal_fidelity,regularizer,coupling"
        )?;
        for (k, o) in self.objectives.iter().enumerate() {
            writeln!(
                w,
                "{k},{},{},{},{},{}",
                o.total(),
                o.measurement_fidelity,
                o.signal_fidelity,
                o.regularizer,
                o.coupling
            )?;
        }
        Ok(())
    }
}

fn random_orthogonal(k: usize, rng: &mut ChaCha8Rng) -> Transform {
    let g = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(rng));
    Transform::from_trusted(g.qr().q())
}

fn initialize(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &TrainConfig,
) -> Result<CoupledVariables> {
    let (t_m, t_s) = match config.init {
        InitScheme::Identity => (Transform::identity(y.nrows()), Transform::identity(x.nrows())),
        InitScheme::RandomOrthogonal => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let t_m = random_orthogonal(y.nrows(), &mut rng);
            let t_s = random_orthogonal(x.nrows(), &mut rng);
            (t_m, t_s)
        }
    };
    let z_m = t_m.matrix() * y;
    let z_s = t_s.matrix() * x;
    let coupling = solve_coupling(&z_s, &z_m)?;
    Ok(CoupledVariables {
        t_m,
        t_s,
        z_m,
        z_s,
        coupling,
    })
}

/// Trains a coupled model on paired signals `X` (n×N) and measurements
/// `Y` (m×N).
pub fn train(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &TrainConfig,
) -> Result<(CoupledModel, TrainTrace)> {
    run_training::<fn(usize, SubStep, &CoupledObjective)>(x, y, config, None)
}

/// Like [`train`], additionally reporting the objective after every
/// sub-step of every sweep to `observer(iteration, step, objective)`.
///
/// The observer forces five extra objective evaluations per sweep; use
/// [`train`] when they are not needed.
pub fn train_observed<F>(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &TrainConfig,
    observer: F,
) -> Result<(CoupledModel, TrainTrace)>
where
    F: FnMut(usize, SubStep, &CoupledObjective),
{
    run_training(x, y, config, Some(observer))
}

fn run_training<F>(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &TrainConfig,
    mut observer: Option<F>,
) -> Result<(CoupledModel, TrainTrace)>
where
    F: FnMut(usize, SubStep, &CoupledObjective),
{
    config.validate()?;
    if x.ncols() != y.ncols() {
        return Err(Error::dims("training pair column counts", x.ncols(), y.ncols()));
    }
    if x.ncols() == 0 || x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::InvalidArgument("empty training data".into()));
    }
    ensure_finite(x, "training signals")?;
    ensure_finite(y, "training measurements")?;
    let count = x.ncols();
    if count < x.nrows().max(y.nrows()) {
        warn!(
            "only {count} training windows for transforms of size {} and {}; the problem is underdetermined",
            x.nrows(),
            y.nrows()
        );
    }

    let (lambda, mu) = (config.lambda, config.mu);
    let measurement_updater = TransformUpdater::new(y, lambda)?;
    let signal_updater = TransformUpdater::new(x, lambda)?;

    let mut vars = initialize(x, y, config)?;
    let mut trace = TrainTrace::default();
    let mut previous = coupled_objective(&vars, x, y, lambda, mu)?;
    trace.objectives.push(previous);

    for iter in 1..=config.max_iters {
        for step in SubStep::ORDER {
            match step {
                SubStep::MeasurementCoefficients => {
                    vars.z_m = solve_zm(&vars.t_m, y, &vars.z_s, &vars.coupling, mu)?;
                }
                SubStep::SignalCoefficients => {
                    vars.z_s = solve_zs(&vars.t_s, x, &vars.z_m, &vars.coupling, mu)?;
                }
                SubStep::MeasurementTransform => {
                    vars.t_m = measurement_updater.update(&vars.z_m)?;
                }
                SubStep::SignalTransform => {
                    vars.t_s = signal_updater.update(&vars.z_s)?;
                }
                SubStep::Coupling => {
                    vars.coupling = solve_coupling(&vars.z_s, &vars.z_m)?;
                }
            }
            if let Some(obs) = observer.as_mut() {
                obs(iter, step, &coupled_objective(&vars, x, y, lambda, mu)?);
            }
        }

        let current = coupled_objective(&vars, x, y, lambda, mu)?;
        if !current.total().is_finite() {
            return Err(Error::NonFinite("coupled objective"));
        }
        trace.objectives.push(current);
        trace.iterations_run = iter;
        let prev = previous.total();
        let change = (current.total() - prev).abs() / prev.abs().max(1.0);
        previous = current;
        if change < config.rel_tol {
            trace.converged = true;
            break;
        }
    }

    let model = CoupledModel::new(vars.t_m, vars.t_s, vars.coupling, lambda, mu)?;
    Ok((model, trace))
}

/// File magic of the binary model format.
pub const MODEL_MAGIC: [u8; 4] = *b"CTL1";

/// A trained coupled model.
///
/// Holds the measurement transform (m×m), the signal transform (n×n), the
/// coupling map (n×m), the hyperparameters it was trained with and the
/// reconstruction operator `T_S⁻¹ C T_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledModel {
    t_m: Transform,
    t_s: Transform,
    coupling: DMatrix<f64>,
    lambda: f64,
    mu: f64,
    recon_op: DMatrix<f64>,
}

impl CoupledModel {
    pub fn new(
        t_m: Transform,
        t_s: Transform,
        coupling: DMatrix<f64>,
        lambda: f64,
        mu: f64,
    ) -> Result<Self> {
        expect_shape("coupling map C", &coupling, t_s.dim(), t_m.dim())?;
        ensure_finite(&coupling, "coupling map")?;
        let mapped = &coupling * t_m.matrix();
        let recon_op = t_s
            .matrix()
            .clone()
            .lu()
            .solve(&mapped)
            .ok_or(Error::Singular("signal transform"))?;
        ensure_finite(&recon_op, "reconstruction operator")?;
        Ok(CoupledModel {
            t_m,
            t_s,
            coupling,
            lambda,
            mu,
            recon_op,
        })
    }

    /// Signal length `n`.
    pub fn signal_dim(&self) -> usize {
        self.t_s.dim()
    }

    /// Measurement length `m`.
    pub fn measurement_dim(&self) -> usize {
        self.t_m.dim()
    }

    pub fn measurement_transform(&self) -> &Transform {
        &self.t_m
    }

    pub fn signal_transform(&self) -> &Transform {
        &self.t_s
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn reconstruction_operator(&self) -> &DMatrix<f64> {
        &self.recon_op
    }

    /// Reconstructs every column of `y` (m×K) into an n×K signal batch.
    pub fn reconstruct(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.measurement_dim() {
            return Err(Error::dims(
                "measurement rows",
                self.measurement_dim(),
                y.nrows(),
            ));
        }
        Ok(&self.recon_op * y)
    }

    pub fn reconstruct_vector(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.measurement_dim() {
            return Err(Error::dims(
                "measurement length",
                self.measurement_dim(),
                y.len(),
            ));
        }
        Ok(&self.recon_op * y)
    }

    /// Reconstruction without the precomputed operator: `z_M = T_M y`,
    /// `ẑ_S = C z_M`, then solve `T_S x = ẑ_S`.
    pub fn reconstruct_stepwise(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.measurement_dim() {
            return Err(Error::dims(
                "measurement rows",
                self.measurement_dim(),
                y.nrows(),
            ));
        }
        let z_m = self.t_m.matrix() * y;
        let z_s = &self.coupling * z_m;
        self.t_s
            .matrix()
            .clone()
            .lu()
            .solve(&z_s)
            .ok_or(Error::Singular("signal transform"))
    }

    /// Serializes as `CTL1`, then little-endian `u32 n`, `u32 m`,
    /// `f64 lambda`, `f64 mu`, and row-major `T_M`, `T_S`, `C`.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&MODEL_MAGIC)?;
        w.write_all(&(self.signal_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.measurement_dim() as u32).to_le_bytes())?;
        w.write_all(&self.lambda.to_le_bytes())?;
        w.write_all(&self.mu.to_le_bytes())?;
        for mat in [self.t_m.matrix(), self.t_s.matrix(), &self.coupling] {
            for row in mat.row_iter() {
                for v in row.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(Self::encoded_len(self.signal_dim(), self.measurement_dim()));
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    fn encoded_len(n: usize, m: usize) -> usize {
        4 + 4 + 4 + 8 + 8 + 8 * (m * m + n * n + n * m)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::ModelFormat(msg.to_string());
        if bytes.len() < 28 {
            return Err(bad("truncated header"));
        }
        if bytes[..4] != MODEL_MAGIC {
            return Err(bad("missing CTL1 magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let (n, m) = (u32_at(4), u32_at(8));
        if n == 0 || m == 0 {
            return Err(bad("zero dimension"));
        }
        let expected = (m * m)
            .checked_add(n * n)
            .and_then(|s| s.checked_add(n * m))
            .and_then(|s| s.checked_mul(8))
            .and_then(|s| s.checked_add(28));
        match expected {
            Some(len) if len == bytes.len() => {}
            Some(len) => {
                return Err(Error::ModelFormat(format!(
                    "expected {len} bytes for n={n}, m={m}, found {}",
                    bytes.len()
                )))
            }
            None => return Err(bad("dimensions overflow")),
        }
        let (lambda, mu) = (f64_at(12), f64_at(20));
        let mut offset = 28;
        let mut read_matrix = |rows: usize, cols: usize| {
            let m = DMatrix::from_row_iterator(
                rows,
                cols,
                (0..rows * cols).map(|i| f64_at(offset + 8 * i)),
            );
            offset += 8 * rows * cols;
            m
        };
        let t_m = read_matrix(m, m);
        let t_s = read_matrix(n, n);
        let coupling = read_matrix(n, m);
        CoupledModel::new(Transform::new(t_m)?, Transform::new(t_s)?, coupling, lambda, mu)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    /// Writes the model to `path` through a temporary sibling file, so a
    /// failed write never leaves a partial model behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::io(path, e)
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
