//! Signal windows, synthetic signal families, CSV ingestion and the error
//! metrics used to score reconstructions.
//!
//! Matrices follow one convention throughout the crate: each window is a
//! column. CSV files hold one window per row.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// A contiguous chunk of a longer recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    pub samples: Vec<f64>,
    pub source_id: String,
    /// Index of the first sample in the source recording.
    pub offset: usize,
}

/// Cuts `samples` into windows of length `n` starting every `stride`
/// samples. A trailing partial window is dropped.
pub fn window_stream(
    source_id: &str,
    samples: &[f64],
    n: usize,
    stride: usize,
) -> Result<Vec<SignalWindow>> {
    if n == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window length and stride must be positive, got n={n}, stride={stride}"
        )));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite sample at index {i} of {source_id}"
        )));
    }
    if samples.len() < n {
        return Ok(Vec::new());
    }
    Ok((0..=samples.len() - n)
        .step_by(stride)
        .map(|offset| SignalWindow {
            samples: samples[offset..offset + n].to_vec(),
            source_id: source_id.to_string(),
            offset,
        })
        .collect())
}

/// Stacks equally sized windows as columns.
pub fn windows_to_matrix(windows: &[SignalWindow]) -> Result<DMatrix<f64>> {
    let n = windows.first().map_or(0, |w| w.samples.len());
    if let Some(w) = windows.iter().find(|w| w.samples.len() != n) {
        return Err(Error::dims("window length", n, w.samples.len()));
    }
    Ok(DMatrix::from_iterator(
        n,
        windows.len(),
        windows.iter().flat_map(|w| w.samples.iter().copied()),
    ))
}

/// Zero-mean, unit-norm scaling of every column; all-constant columns are
/// only centered.
pub fn normalize_windows(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

/// Contiguous split: the first `train` columns and the rest.
pub fn split_columns(m: &DMatrix<f64>, train: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if train > m.ncols() {
        return Err(Error::InvalidArgument(format!(
            "cannot take {train} training windows from {}",
            m.ncols()
        )));
    }
    Ok((
        m.columns(0, train).into_owned(),
        m.columns(train, m.ncols() - train).into_owned(),
    ))
}

/// `‖x̂ − x‖² / ‖x‖²`.
pub fn nmse(x_hat: &[f64], x: &[f64]) -> Result<f64> {
    if x_hat.len() != x.len() {
        return Err(Error::dims("reconstruction length", x.len(), x_hat.len()));
    }
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::InvalidArgument("NMSE of a zero reference window".into()));
    }
    let err: f64 = x_hat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / energy)
}

/// Root-mean-square error.
pub fn rmse(x_hat: &[f64], x: &[f64]) -> Result<f64> {
    if x_hat.len() != x.len() {
        return Err(Error::dims("reconstruction length", x.len(), x_hat.len()));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("RMSE of an empty window".into()));
    }
    let err: f64 = x_hat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((err / x.len() as f64).sqrt())
}

/// Per-column NMSE between two n×K batches.
pub fn column_nmse(x_hat: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x_hat.shape() != x.shape() {
        return Err(Error::dims(
            "reconstruction batch",
            crate::shape(x),
            crate::shape(x_hat),
        ));
    }
    x_hat
        .column_iter()
        .zip(x.column_iter())
        .map(|(a, b)| nmse(a.as_slice(), b.as_slice()))
        .collect()
}

/// Per-column RMSE between two n×K batches.
pub fn column_rmse(x_hat: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x_hat.shape() != x.shape() {
        return Err(Error::dims(
            "reconstruction batch",
            crate::shape(x),
            crate::shape(x_hat),
        ));
    }
    x_hat
        .column_iter()
        .zip(x.column_iter())
        .map(|(a, b)| rmse(a.as_slice(), b.as_slice()))
        .collect()
}

/// Summary of per-window errors: one row of a results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    /// Sample standard deviation (divisor `count − 1`, 0 for a single value).
    pub std: f64,
    pub max: f64,
    pub min: f64,
    pub count: usize,
}

pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no errors to summarize".into()));
    }
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for (i, &e) in errors.iter().enumerate() {
        let delta = e - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (e - mean);
        max = max.max(e);
        min = min.min(e);
    }
    let count = errors.len();
    let std = if count > 1 {
        (m2 / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ErrorStats {
        mean,
        std,
        max,
        min,
        count,
    })
}

/// Synthetic stand-ins for physiological recordings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    /// A few harmonics of a random fundamental with `1/k` amplitude decay.
    Harmonic,
    /// Periodic narrow Gaussian pulses with timing jitter, an ECG-like proxy.
    PulseTrain,
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic" => Ok(SignalKind::Harmonic),
            "pulse-train" | "pulse" => Ok(SignalKind::PulseTrain),
            other => Err(Error::InvalidArgument(format!("unknown signal kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for SignalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SignalKind::Harmonic => "harmonic",
            SignalKind::PulseTrain => "pulse-train",
        })
    }
}

/// Fundamental frequency range of the synthetic families, in cycles per
/// window.
pub const FUNDAMENTAL_RANGE: (f64, f64) = (2.0, 5.0);

/// One sinusoid `amplitude · cos(2π · frequency · j / n + phase)`, with the
/// frequency in cycles per window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicComponent {
    pub frequency: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl HarmonicComponent {
    pub fn eval(&self, j: usize, n: usize) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * j as f64 / n as f64 + self.phase).cos()
    }
}

/// Parameters of the harmonic family: per window 3 to 6 harmonics `k f₀` of a
/// fundamental `f₀` drawn from [`FUNDAMENTAL_RANGE`], amplitude `1/k`,
/// uniform random phase.
pub fn harmonic_components(count: usize, seed: u64) -> Vec<Vec<HarmonicComponent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let harmonics = rng.random_range(3..=6usize);
            let f0 = rng.random_range(FUNDAMENTAL_RANGE.0..FUNDAMENTAL_RANGE.1);
            (1..=harmonics)
                .map(|k| HarmonicComponent {
                    frequency: k as f64 * f0,
                    amplitude: 1.0 / k as f64,
                    phase: rng.random_range(0.0..2.0 * PI),
                })
                .collect()
        })
        .collect()
}

fn pulse_window(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let beats = rng.random_range(FUNDAMENTAL_RANGE.0..FUNDAMENTAL_RANGE.1);
    let period = n as f64 / beats;
    let width = (0.012 * n as f64).max(0.75);
    let start = rng.random_range(0.0..period);
    let mut centers = Vec::new();
    let mut t = start - period;
    while t < n as f64 + period {
        let jitter = rng.random_range(-0.03..0.03) * period;
        let amp = rng.random_range(0.9..1.1);
        centers.push((t + jitter, amp));
        t += period;
    }
    (0..n)
        .map(|j| {
            let j = j as f64;
            centers
                .iter()
                .map(|&(c, a)| {
                    let qrs = ((j - c) / width).powi(2);
                    // broader, later secondary wave
                    let tw = ((j - c - 0.3 * period) / (4.0 * width)).powi(2);
                    a * (-0.5 * qrs).exp() + 0.3 * a * (-0.5 * tw).exp()
                })
                .sum()
        })
        .collect()
}

/// Generates `count` windows of length `n` as an n×count matrix, plus white
/// Gaussian noise of standard deviation `noise_std`. Deterministic per
/// `(kind, seed)`; the noise uses its own stream, so the clean signal does
/// not depend on `noise_std`.
pub fn synth_signals(
    kind: SignalKind,
    count: usize,
    n: usize,
    seed: u64,
    noise_std: f64,
) -> Result<DMatrix<f64>> {
    if count == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least one window of positive length, got count={count}, n={n}"
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid noise_std {noise_std}")));
    }
    let mut out = match kind {
        SignalKind::Harmonic => {
            let params = harmonic_components(count, seed);
            DMatrix::from_fn(n, count, |j, w| params[w].iter().map(|c| c.eval(j, n)).sum())
        }
        SignalKind::PulseTrain => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cols: Vec<Vec<f64>> = (0..count).map(|_| pulse_window(&mut rng, n)).collect();
            DMatrix::from_fn(n, count, |j, w| cols[w][j])
        }
    };
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let normal = Normal::new(0.0, noise_std).expect("validated std");
        for v in out.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Parses windows, one per row, into an n×N matrix. `origin` only labels
/// error messages.
pub fn read_windows_csv<R: Read>(reader: R, origin: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(rows as u64 + 1, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(parse_err(format!(
                    "expected {w} values, found {}",
                    record.len()
                )))
            }
            _ => {}
        }
        for cell in record.iter() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
        rows += 1;
    }
    let Some(n) = width else {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            message: "no windows".into(),
        });
    };
    Ok(DMatrix::from_vec(n, rows, values))
}

pub fn load_windows_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_windows_csv(file, path)
}

/// Writes each column of `m` as one comma-separated row. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_windows_csv<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for col in m.column_iter() {
        let mut first = true;
        for v in col.iter() {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            write!(w, "{v:?}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_windows_csv(BufWriter::new(file), m).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn seq(k: usize) -> Vec<f64> {
        (1..=k).map(|v| v as f64).collect()
    }

    #[test]
    fn windowing() {
        let w = window_stream("a", &seq(8), 4, 4).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].samples, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(w[1].samples, vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(w[1].offset, 4);

        let w = window_stream("a", &seq(7), 4, 4).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].samples, vec![1.0, 2.0, 3.0, 4.0]);

        let w = window_stream("a", &seq(6), 4, 2).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].samples, vec![3.0, 4.0, 5.0, 6.0]);

        assert!(window_stream("a", &seq(3), 4, 4).unwrap().is_empty());
        assert!(window_stream("a", &seq(3), 0, 4).is_err());
        assert!(window_stream("a", &[1.0, f64::NAN], 1, 1).is_err());
    }

    #[test]
    fn nmse_cases() {
        let x = [1.0, -2.0, 3.0];
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
        assert_eq!(nmse(&[0.0; 3], &x).unwrap(), 1.0);
        assert_eq!(nmse(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(nmse(&[1.0], &[0.0]).is_err());
        assert!(nmse(&[1.0], &[1.0, 2.0]).is_err());
        assert_relative_eq!(rmse(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 0.5f64.sqrt());
    }

    #[test]
    fn stats_cases() {
        let s = error_stats(&[0.1]).unwrap();
        assert_eq!((s.mean, s.std, s.max, s.min, s.count), (0.1, 0.0, 0.1, 0.1, 1));
        let s = error_stats(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_relative_eq!(s.std, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!((s.max, s.min), (2.0, 0.0));
        assert!(error_stats(&[]).is_err());
        let many = vec![0.25; 13_448];
        assert_eq!(error_stats(&many).unwrap().count, 13_448);
    }

    #[test]
    fn harmonic_matches_components() {
        let x = synth_signals(SignalKind::Harmonic, 3, 64, 11, 0.0).unwrap();
        let params = harmonic_components(3, 11);
        for (w, comps) in params.iter().enumerate() {
            assert!((3..=6).contains(&comps.len()));
            for j in 0..64 {
                let expected: f64 = comps
                    .iter()
                    .map(|c| c.amplitude * (2.0 * PI * c.frequency * j as f64 / 64.0 + c.phase).cos())
                    .sum();
                assert_relative_eq!(x[(j, w)], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn synth_shapes_and_determinism() {
        for kind in [SignalKind::Harmonic, SignalKind::PulseTrain] {
            let a = synth_signals(kind, 100, 512, 4, 0.05).unwrap();
            assert_eq!(a.shape(), (512, 100));
            assert!(a.iter().all(|v| v.is_finite()));
            let b = synth_signals(kind, 100, 512, 4, 0.05).unwrap();
            assert_eq!(a, b);
            let clean = synth_signals(kind, 100, 512, 4, 0.0).unwrap();
            let resid = (&a - &clean).norm() / (512.0 * 100.0f64).sqrt();
            assert!((resid - 0.05).abs() < 0.005, "noise level {resid}");
        }
        assert!(synth_signals(SignalKind::Harmonic, 0, 8, 0, 0.0).is_err());
    }

    #[test]
    fn csv_parses_rows_as_windows() {
        let m = read_windows_csv("1,2\n3,4\n".as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.column(1).as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn csv_reports_ragged_line() {
        let err = read_windows_csv("1,2\n3,4\n5\n".as_bytes(), Path::new("mem")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let err = read_windows_csv("1,2\nx,4\n".as_bytes(), Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(read_windows_csv("1,inf\n".as_bytes(), Path::new("mem")).is_err());
        assert!(read_windows_csv("".as_bytes(), Path::new("mem")).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = DMatrix::from_fn(5, 7, |i, j| ((i * 7 + j) as f64 * 0.731).sin() * 1e3 / (j + 1) as f64);
        let mut buf = Vec::new();
        write_windows_csv(&mut buf, &m).unwrap();
        let back = read_windows_csv(buf.as_slice(), Path::new("mem")).unwrap();
        assert!((back - &m).amax() <= 1e-15 * m.amax());
    }

    #[test]
    fn normalization() {
        let mut m = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64 + 1.0);
        normalize_windows(&mut m);
        for col in m.column_iter() {
            assert_relative_eq!(col.sum(), 0.0, epsilon = 1e-12);
            assert_relative_eq!(col.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn prefix_split() {
        let m = DMatrix::from_fn(2, 5, |i, j| (i * 5 + j) as f64);
        let (a, b) = split_columns(&m, 3).unwrap();
        assert_eq!(a.ncols(), 3);
        assert_eq!(b.ncols(), 2);
        assert_eq!(b[(0, 0)], 3.0);
        assert!(split_columns(&m, 6).is_err());
    }

    proptest! {
        #[test]
        fn non_overlapping_windows_are_lossless(chunks in 1usize..6, n in 1usize..9, seed in any::<u32>()) {
            let samples: Vec<f64> = (0..chunks * n).map(|i| (i as f64 + seed as f64).sin()).collect();
            let windows = window_stream("p", &samples, n, n).unwrap();
            prop_assert_eq!(windows.len(), chunks);
            let joined: Vec<f64> = windows.into_iter().flat_map(|w| w.samples).collect();
            prop_assert_eq!(joined, samples);
        }

        #[test]
        fn window_count_formula(len in 0usize..60, n in 1usize..10, stride in 1usize..10) {
            let samples = vec![0.5; len];
            let windows = window_stream("p", &samples, n, stride).unwrap();
            let expected = if len < n { 0 } else { (len - n) / stride + 1 };
            prop_assert_eq!(windows.len(), expected);
        }
    }
}
