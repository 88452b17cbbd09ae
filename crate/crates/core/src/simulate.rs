//! Forward model: autocorrelation matrices and triggered quadrature traces.
//!
//! For a time-bin density matrix `ρ` and a local oscillator detuned by `Δω`,
//! the quadrature second moments are `⟨X_iX_j⟩ = δ_ij/2 + η·A_ij` with
//!
//! ```text
//! A_ij = Re ρ_ij·cos(Δω(t_i−t_j)) + Im ρ_ij·sin(Δω(t_i−t_j))
//! ```
//!
//! Traces are drawn as zero-mean Gaussian vectors with exactly this
//! covariance. Only second moments enter the reconstruction, so this
//! moment-matched model is sufficient for it; the true single-photon
//! quadrature distribution is not Gaussian.
//!
//! Sampling is counter-based: every trace gets its own ChaCha stream keyed by
//! `(seed, trace index)`, and per-chunk moment sums are combined by a fixed
//! pairwise tree, so results do not depend on the thread count.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::state::{density_from_tmf, TimeBinDensityMatrix};
use crate::tmf::{TemporalModeFunction, TimeGrid};

/// Traces per work unit; fixes the reduction tree independently of threads.
const CHUNK: usize = 2048;

/// Eigenvalues of the covariance below this abort sampling.
const FACTOR_CLIP: f64 = -1e-10;

/// Number of traces behind an autocorrelation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleCount {
    /// Noiseless forward model.
    Exact,
    Finite(usize),
}

impl fmt::Display for SampleCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleCount::Exact => f.write_str("exact"),
            SampleCount::Finite(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for SampleCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("exact") {
            return Ok(SampleCount::Exact);
        }
        // accept 5e5-style counts as long as they are integral
        let n: usize = match s.parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                let x: f64 = s
                    .parse()
                    .map_err(|_| Error::invalid(format!("sample count {s:?} is not an integer or \"exact\"")))?;
                if !(x.is_finite() && x >= 0.0 && x.fract() == 0.0) {
                    return Err(Error::invalid(format!("sample count {s:?} is not an integer")));
                }
                x as usize
            }
        };
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        Ok(SampleCount::Finite(n))
    }
}

/// Reduced autocorrelation matrix `A` measured (or computed) at one detuning.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrelationMatrix {
    pub grid: TimeGrid,
    /// LO detuning `Δω` in rad/ns.
    pub delta_omega: f64,
    pub values: DMatrix<f64>,
    /// Standard error of each element, when estimated from samples.
    pub stderr: Option<DMatrix<f64>>,
    pub n_samples: SampleCount,
}

impl AutocorrelationMatrix {
    pub fn new(
        grid: TimeGrid,
        delta_omega: f64,
        values: DMatrix<f64>,
        stderr: Option<DMatrix<f64>>,
        n_samples: SampleCount,
    ) -> Result<Self> {
        let n = grid.n_bins();
        if values.nrows() != n || values.ncols() != n {
            return Err(Error::invalid(format!(
                "{}×{} autocorrelation matrix for a {n}-bin grid",
                values.nrows(),
                values.ncols()
            )));
        }
        if !delta_omega.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("autocorrelation data must be finite"));
        }
        if let Some(se) = &stderr {
            if se.shape() != values.shape() {
                return Err(Error::invalid("stderr shape differs from values"));
            }
            if se.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid("stderr must be finite and non-negative"));
            }
        }
        let a = Self { grid, delta_omega, values, stderr, n_samples };
        if !a.is_symmetric() {
            return Err(Error::invalid("autocorrelation matrix is not symmetric"));
        }
        Ok(a)
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Exact element-wise symmetry.
    pub fn is_symmetric(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (i + 1..n).all(|j| self.values[(i, j)] == self.values[(j, i)]))
    }

    pub fn max_abs_diff(&self, other: &AutocorrelationMatrix) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Triggered quadrature traces, one row per trace, vacuum variance 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureTraceSet {
    grid: TimeGrid,
    delta_omega: f64,
    traces: DMatrix<f64>,
    seed: u64,
    eta: f64,
}

impl QuadratureTraceSet {
    pub fn new(
        grid: TimeGrid,
        delta_omega: f64,
        traces: DMatrix<f64>,
        seed: u64,
        eta: f64,
    ) -> Result<Self> {
        if traces.ncols() != grid.n_bins() {
            return Err(Error::invalid(format!(
                "traces have {} bins but the grid has {}",
                traces.ncols(),
                grid.n_bins()
            )));
        }
        if traces.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("traces contain non-finite samples"));
        }
        check_eta(eta)?;
        Ok(Self { grid, delta_omega, traces, seed, eta })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn delta_omega(&self) -> f64 {
        self.delta_omega
    }

    /// `n_samples × n_bins`.
    pub fn traces(&self) -> &DMatrix<f64> {
        &self.traces
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn n_samples(&self) -> usize {
        self.traces.nrows()
    }

    /// Empirical `⟨X_i²⟩` per bin.
    pub fn variances(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        self.traces.column_iter().map(|c| c.iter().map(|x| x * x).sum::<f64>() / n).collect()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("heralding efficiency {eta} outside [0, 1]")));
    }
    Ok(())
}

fn check_state(rho: &TimeBinDensityMatrix) -> Result<()> {
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
        return Err(Error::invalid(format!("density matrix trace is {tr}, expected 1")));
    }
    if rho.hermiticity_error() > 1e-10 * rho.max_abs().max(1.0) {
        return Err(Error::invalid("density matrix is not Hermitian"));
    }
    Ok(())
}

/// Noiseless `η·A` for one detuning.
pub fn autocorr_exact(
    rho: &TimeBinDensityMatrix,
    delta_omega: f64,
    eta: f64,
) -> Result<AutocorrelationMatrix> {
    check_state(rho)?;
    check_eta(eta)?;
    if !delta_omega.is_finite() {
        return Err(Error::invalid("detuning must be finite"));
    }
    let grid = *rho.grid();
    let n = grid.n_bins();
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        values[(i, i)] = eta * rho.get(i, i).re;
        for j in i + 1..n {
            let (s, c) = (delta_omega * grid.lag(i, j)).sin_cos();
            let z = rho.get(i, j);
            let v = eta * (z.re * c + z.im * s);
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(AutocorrelationMatrix { grid, delta_omega, values, stderr: None, n_samples: SampleCount::Exact })
}

fn covariance_eigen(
    rho: &TimeBinDensityMatrix,
    delta_omega: f64,
    eta: f64,
) -> Result<(DMatrix<f64>, SymmetricEigen<f64, nalgebra::Dyn>)> {
    let a = autocorr_exact(rho, delta_omega, eta)?;
    let n = a.dim();
    let sigma = a.values + DMatrix::<f64>::identity(n, n) * 0.5;
    let eig = SymmetricEigen::new(sigma.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min >= -1e-8) {
        return Err(Error::Model(format!(
            "quadrature covariance has eigenvalue {min:e}; input state is not physical"
        )));
    }
    Ok((sigma, eig))
}

/// `Σ = I/2 + η·A`, checked positive semidefinite.
pub fn covariance(rho: &TimeBinDensityMatrix, delta_omega: f64, eta: f64) -> Result<DMatrix<f64>> {
    covariance_eigen(rho, delta_omega, eta).map(|(sigma, _)| sigma)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed used for detuning `k` of an experiment seeded with `seed`.
pub fn detuning_seed(seed: u64, k: usize) -> u64 {
    splitmix64(seed ^ splitmix64(0x5eed_0000_0000_0000 ^ k as u64))
}

fn chacha_key(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut z = seed;
    for word in key.chunks_exact_mut(8) {
        z = splitmix64(z);
        word.copy_from_slice(&z.to_le_bytes());
    }
    key
}

/// Symmetric square root `Σ^½ = s₀·I + V·diag(√λ − s₀)·Vᵀ` with `s₀ = √½`;
/// only eigenvectors whose eigenvalue differs from the vacuum ½ are kept.
struct TraceSampler {
    n_bins: usize,
    base: f64,
    basis: DMatrix<f64>,
    basis_t: DMatrix<f64>,
    gains: Vec<f64>,
    key: [u8; 32],
}

impl TraceSampler {
    fn new(rho: &TimeBinDensityMatrix, delta_omega: f64, eta: f64, seed: u64) -> Result<Self> {
        let (_, eig) = covariance_eigen(rho, delta_omega, eta)?;
        let n = rho.dim();
        let base = 0.5_f64.sqrt();
        let mut cols = Vec::new();
        let mut gains = Vec::new();
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if !(l >= FACTOR_CLIP) {
                return Err(Error::Model(format!(
                    "covariance factorization failed: eigenvalue {l:e} below {FACTOR_CLIP:e}"
                )));
            }
            let gain = l.max(0.0).sqrt() - base;
            if gain.abs() > 1e-13 {
                cols.push(eig.eigenvectors.column(k).into_owned());
                gains.push(gain);
            }
        }
        let basis = if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        let basis_t = basis.transpose();
        Ok(Self { n_bins: n, base, basis, basis_t, gains, key: chacha_key(seed) })
    }

    /// Traces `start..start+len` as the columns of an `n_bins × len` matrix.
    fn chunk(&self, start: usize, len: usize) -> DMatrix<f64> {
        let n = self.n_bins;
        let mut z = DMatrix::zeros(n, len);
        for (s, mut col) in z.column_iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::from_seed(self.key);
            rng.set_stream((start + s) as u64);
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        if self.gains.is_empty() {
            return z * self.base;
        }
        let mut w = &self.basis_t * &z;
        for (mut row, g) in w.row_iter_mut().zip(&self.gains) {
            row *= *g;
        }
        z.gemm(1.0, &self.basis, &w, self.base);
        z
    }
}

/// Running sums `Σ x_i x_j` and `Σ (x_i x_j)²`.
struct MomentSums {
    count: usize,
    prod: DMatrix<f64>,
    prod_sq: DMatrix<f64>,
}

impl MomentSums {
    /// `x` holds one trace per column.
    fn from_chunk(x: &DMatrix<f64>) -> Self {
        let prod = x * x.transpose();
        let sq = x.component_mul(x);
        let prod_sq = &sq * sq.transpose();
        Self { count: x.ncols(), prod, prod_sq }
    }

    fn merge(mut self, other: MomentSums) -> Self {
        self.count += other.count;
        self.prod += other.prod;
        self.prod_sq += other.prod_sq;
        self
    }

    /// Pairwise reduction in a fixed tree over the chunk order.
    fn tree_reduce(mut parts: Vec<MomentSums>) -> Option<MomentSums> {
        while parts.len() > 1 {
            let mut next = Vec::with_capacity(parts.len().div_ceil(2));
            let mut it = parts.into_iter();
            while let Some(a) = it.next() {
                next.push(match it.next() {
                    Some(b) => a.merge(b),
                    None => a,
                });
            }
            parts = next;
        }
        parts.pop()
    }

    fn finish(self, grid: TimeGrid, delta_omega: f64) -> Result<AutocorrelationMatrix> {
        let n = grid.n_bins();
        let count = self.count as f64;
        let mut values = DMatrix::zeros(n, n);
        let mut stderr = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                // upper triangle only; the mirror makes the result exactly symmetric
                let mean = self.prod[(i, j)] / count;
                let var = ((self.prod_sq[(i, j)] - count * mean * mean) / (count - 1.0)).max(0.0);
                let a = if i == j { mean - 0.5 } else { mean };
                let se = (var / count).sqrt();
                values[(i, j)] = a;
                values[(j, i)] = a;
                stderr[(i, j)] = se;
                stderr[(j, i)] = se;
            }
        }
        AutocorrelationMatrix::new(
            grid,
            delta_omega,
            values,
            Some(stderr),
            SampleCount::Finite(self.count),
        )
    }
}

fn chunk_ranges(n_samples: usize) -> Vec<(usize, usize)> {
    (0..n_samples.div_ceil(CHUNK))
        .map(|c| {
            let start = c * CHUNK;
            (start, CHUNK.min(n_samples - start))
        })
        .collect()
}

/// Draws `n_samples` traces with covariance `I/2 + η·A`.
pub fn sample_traces(
    rho: &TimeBinDensityMatrix,
    delta_omega: f64,
    eta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<QuadratureTraceSet> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one trace"));
    }
    let sampler = TraceSampler::new(rho, delta_omega, eta, seed)?;
    let chunks: Vec<DMatrix<f64>> = chunk_ranges(n_samples)
        .into_par_iter()
        .map(|(start, len)| sampler.chunk(start, len))
        .collect();
    let n = rho.dim();
    let mut traces = DMatrix::zeros(n_samples, n);
    for ((start, len), x) in chunk_ranges(n_samples).into_iter().zip(chunks) {
        traces.rows_mut(start, len).copy_from(&x.transpose());
    }
    Ok(QuadratureTraceSet { grid: *rho.grid(), delta_omega, traces, seed, eta })
}

/// `Â_ij = (1/n)·Σ_s X_i X_j − δ_ij/2` with element-wise standard errors.
pub fn estimate_autocorr(traces: &QuadratureTraceSet) -> Result<AutocorrelationMatrix> {
    let n_samples = traces.n_samples();
    if n_samples < 2 {
        return Err(Error::invalid(format!("need at least 2 traces, got {n_samples}")));
    }
    let parts: Vec<MomentSums> = chunk_ranges(n_samples)
        .into_par_iter()
        .map(|(start, len)| MomentSums::from_chunk(&traces.traces.rows(start, len).transpose()))
        .collect();
    MomentSums::tree_reduce(parts)
        .expect("at least one chunk")
        .finish(traces.grid, traces.delta_omega)
}

/// Same result as `estimate_autocorr(&sample_traces(..))`, bit for bit,
/// without materializing the traces.
pub fn sample_autocorr(
    rho: &TimeBinDensityMatrix,
    delta_omega: f64,
    eta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<AutocorrelationMatrix> {
    if n_samples < 2 {
        return Err(Error::invalid(format!("need at least 2 traces, got {n_samples}")));
    }
    let sampler = TraceSampler::new(rho, delta_omega, eta, seed)?;
    let parts: Vec<MomentSums> = chunk_ranges(n_samples)
        .into_par_iter()
        .map(|(start, len)| MomentSums::from_chunk(&sampler.chunk(start, len)))
        .collect();
    MomentSums::tree_reduce(parts)
        .expect("at least one chunk")
        .finish(*rho.grid(), delta_omega)
}

/// One autocorrelation matrix per detuning; detuning `k` is sampled with
/// [`detuning_seed`]`(seed, k)`.
pub fn run_experiment(
    rho: &TimeBinDensityMatrix,
    detunings: &[f64],
    eta: f64,
    samples: SampleCount,
    seed: u64,
) -> Result<Vec<AutocorrelationMatrix>> {
    if detunings.is_empty() {
        return Err(Error::invalid("need at least one detuning"));
    }
    detunings
        .iter()
        .enumerate()
        .map(|(k, &dw)| match samples {
            SampleCount::Exact => autocorr_exact(rho, dw, eta),
            SampleCount::Finite(n) => sample_autocorr(rho, dw, eta, n, detuning_seed(seed, k)),
        })
        .collect()
}

pub fn run_experiment_tmf(
    tmf: &TemporalModeFunction,
    detunings: &[f64],
    eta: f64,
    samples: SampleCount,
    seed: u64,
) -> Result<Vec<AutocorrelationMatrix>> {
    run_experiment(&density_from_tmf(tmf)?, detunings, eta, samples, seed)
}
