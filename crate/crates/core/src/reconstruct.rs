//! Inverse problem: density matrix, amplitude and phase from autocorrelations.
//!
//! Each element `(i, j)` enters the model only through its own unknowns
//! `(Re ρ_ij, Im ρ_ij)`, so the least-squares cost over all elements and
//! detunings splits into independent 2×2 normal-equation solves.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::simulate::AutocorrelationMatrix;
use crate::state::{self, project_psd, trace_normalize, PsdDiagnostics, TimeBinDensityMatrix};

/// Normal matrices with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e8;

/// A fitted trace below this many standard errors is indistinguishable from vacuum.
pub const TRACE_SIGNIFICANCE: f64 = 5.0;

pub const DEFAULT_PHASE_THRESHOLD: f64 = 0.05;

/// Reference row for phase and homodyne cuts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowSelection {
    /// The bin with the largest diagonal element.
    #[default]
    Auto,
    Index(usize),
}

impl FromStr for RowSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RowSelection::Auto);
        }
        s.parse()
            .map(RowSelection::Index)
            .map_err(|_| Error::invalid(format!("row selection {s:?} is neither \"auto\" nor an index")))
    }
}

impl std::fmt::Display for RowSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowSelection::Auto => f.write_str("auto"),
            RowSelection::Index(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructOptions {
    /// Report the eigenvalue-clipped matrix instead of the raw fit.
    pub psd_projection: bool,
    pub psd_tol: f64,
    /// Fraction of `max|ρ|` below which the phase is masked.
    pub phase_threshold: f64,
    pub m: RowSelection,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            psd_projection: false,
            psd_tol: state::DEFAULT_PSD_TOL,
            phase_threshold: DEFAULT_PHASE_THRESHOLD,
            m: RowSelection::Auto,
        }
    }
}

/// Raw least-squares fit before any projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFit {
    /// Hermitian, unit-trace estimate.
    pub rho: TimeBinDensityMatrix,
    /// Trace of the fit before normalization (absorbs η).
    pub fitted_trace: f64,
    /// Standard error of `fitted_trace`, when the data carry standard errors.
    pub trace_stderr: Option<f64>,
    /// `Σ_(i,j,k)` of squared residuals, both triangles counted.
    pub cost: f64,
    pub n_equations: usize,
    /// `Im ρ_ij` could not be separated from `Re ρ_ij` (upper triangle, `i < j`).
    pub im_unidentifiable: DMatrix<bool>,
    /// Neither part of `ρ_ij` is constrained by the data.
    pub re_unidentifiable: DMatrix<bool>,
    /// Largest condition number among identifiable elements.
    pub max_condition: f64,
    pub small_trace: bool,
}

impl DensityFit {
    /// Root-mean-square residual per equation.
    pub fn residual(&self) -> f64 {
        (self.cost / self.n_equations as f64).sqrt()
    }

    pub fn n_im_unidentifiable(&self) -> usize {
        self.im_unidentifiable.iter().filter(|&&b| b).count()
    }

    pub fn n_re_unidentifiable(&self) -> usize {
        self.re_unidentifiable.iter().filter(|&&b| b).count()
    }

    /// The fitted trace is within [`TRACE_SIGNIFICANCE`] standard errors of zero.
    pub fn degenerate_trace(&self) -> bool {
        match self.trace_stderr {
            Some(se) => self.fitted_trace < TRACE_SIGNIFICANCE * se,
            None => self.small_trace,
        }
    }
}

struct ElementFit {
    re: f64,
    im: f64,
    im_identifiable: bool,
    re_identifiable: bool,
    condition: f64,
}

/// Weighted least squares for `a_k ≈ x·cos φ_k + y·sin φ_k`.
fn fit_element(a: &[f64], phases: &[f64], weights: &[f64]) -> ElementFit {
    let (mut p, mut q, mut r, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&ak, &ph), &w) in a.iter().zip(phases).zip(weights) {
        let (s, c) = ph.sin_cos();
        p += w * c * c;
        q += w * c * s;
        r += w * s * s;
        bx += w * ak * c;
        by += w * ak * s;
    }
    let det = p * r - q * q;
    let lmax = 0.5 * (p + r) + (0.25 * (p - r) * (p - r) + q * q).sqrt();
    let lmin = if lmax > 0.0 { det / lmax } else { 0.0 };
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if condition <= MAX_CONDITION {
        return ElementFit {
            re: (r * bx - q * by) / det,
            im: (p * by - q * bx) / det,
            im_identifiable: true,
            re_identifiable: true,
            condition,
        };
    }
    let wsum: f64 = weights.iter().sum();
    if p > 1e-12 * wsum {
        ElementFit { re: bx / p, im: 0.0, im_identifiable: false, re_identifiable: true, condition }
    } else {
        ElementFit { re: 0.0, im: 0.0, im_identifiable: false, re_identifiable: false, condition }
    }
}

/// Unweighted normal-equation solution `(Re ρ_ij, Im ρ_ij)` for one element.
/// An unidentifiable imaginary part comes back as 0.
pub fn solve_element(a_values: &[f64], detunings: &[f64], dt_ij: f64) -> Result<(f64, f64)> {
    if a_values.len() != detunings.len() || a_values.is_empty() {
        return Err(Error::invalid("one detuning per autocorrelation value"));
    }
    let phases: Vec<f64> = detunings.iter().map(|w| w * dt_ij).collect();
    let fit = fit_element(a_values, &phases, &vec![1.0; a_values.len()]);
    Ok((fit.re, fit.im))
}

fn element_weights(data: &[AutocorrelationMatrix], i: usize, j: usize, out: &mut Vec<f64>) -> bool {
    out.clear();
    for d in data {
        match &d.stderr {
            Some(se) if se[(i, j)] > 0.0 => out.push(1.0 / (se[(i, j)] * se[(i, j)])),
            _ => {
                out.clear();
                out.resize(data.len(), 1.0);
                return false;
            }
        }
    }
    true
}

/// Least-squares inversion of `A_ij = Re ρ_ij·cos(Δω_kΔt_ij) + Im ρ_ij·sin(Δω_kΔt_ij)`
/// over all supplied detunings, followed by Hermitization and trace normalization.
pub fn reconstruct_density(data: &[AutocorrelationMatrix]) -> Result<DensityFit> {
    let first = data.first().ok_or_else(|| Error::invalid("no autocorrelation data"))?;
    let grid = first.grid;
    for (k, d) in data.iter().enumerate() {
        if !d.grid.matches(&grid) {
            return Err(Error::GridMismatch(format!("dataset {k} uses a different time grid")));
        }
    }
    let n = grid.n_bins();
    let kcount = data.len();
    let mut elements = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut im_unidentifiable = DMatrix::from_element(n, n, false);
    let mut re_unidentifiable = DMatrix::from_element(n, n, false);
    let mut cost = 0.0;
    let mut max_condition = 0.0_f64;
    let mut diag_var = Some(0.0);

    let mut a = Vec::with_capacity(kcount);
    let mut phases = Vec::with_capacity(kcount);
    let mut weights = Vec::with_capacity(kcount);

    for i in 0..n {
        a.clear();
        a.extend(data.iter().map(|d| d.values[(i, i)]));
        let weighted = element_weights(data, i, i, &mut weights);
        let wsum: f64 = weights.iter().sum();
        let x = a.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
        cost += a.iter().map(|v| (v - x) * (v - x)).sum::<f64>();
        elements[(i, i)] = Complex64::new(x, 0.0);
        diag_var = match (diag_var, weighted) {
            (Some(acc), true) => Some(acc + 1.0 / wsum),
            _ => None,
        };

        for j in i + 1..n {
            let lag = grid.lag(i, j);
            a.clear();
            a.extend(data.iter().map(|d| d.values[(i, j)]));
            phases.clear();
            phases.extend(data.iter().map(|d| d.delta_omega * lag));
            element_weights(data, i, j, &mut weights);
            let fit = fit_element(&a, &phases, &weights);
            if fit.im_identifiable {
                max_condition = max_condition.max(fit.condition);
            }
            im_unidentifiable[(i, j)] = !fit.im_identifiable;
            re_unidentifiable[(i, j)] = !fit.re_identifiable;
            let sse: f64 = a
                .iter()
                .zip(&phases)
                .map(|(v, ph)| {
                    let (s, c) = ph.sin_cos();
                    let e = v - fit.re * c - fit.im * s;
                    e * e
                })
                .sum();
            cost += 2.0 * sse;
            let z = Complex64::new(fit.re, fit.im);
            elements[(i, j)] = z;
            elements[(j, i)] = z.conj();
        }
    }

    let fitted = state::hermitize(&TimeBinDensityMatrix::new(grid, elements)?);
    let normalized = trace_normalize(&fitted)?;
    Ok(DensityFit {
        rho: normalized.rho,
        fitted_trace: normalized.original_trace,
        trace_stderr: diag_var.map(f64::sqrt),
        cost,
        n_equations: n * n * kcount,
        im_unidentifiable,
        re_unidentifiable,
        max_condition,
        small_trace: normalized.small_trace,
    })
}

/// Diagonal `|φ(τ_i)|²` estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeProfile {
    pub raw: Vec<f64>,
    /// `max(raw, 0)`.
    pub clipped: Vec<f64>,
}

pub fn extract_amplitude(rho: &TimeBinDensityMatrix) -> AmplitudeProfile {
    let raw = rho.diagonal_re();
    let clipped = raw.iter().map(|v| v.max(0.0)).collect();
    AmplitudeProfile { raw, clipped }
}

/// Phase `θ_j` relative to row `m`, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    pub phase: Vec<f64>,
    pub valid: Vec<bool>,
    pub m: usize,
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * ((x + PI) / (2.0 * PI)).floor();
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn resolve_row(m: RowSelection, n: usize, diag: impl Iterator<Item = f64>) -> Result<usize> {
    match m {
        RowSelection::Auto => Ok(argmax(diag)),
        RowSelection::Index(m) if m < n => Ok(m),
        RowSelection::Index(m) => Err(Error::invalid(format!("row {m} outside a {n}-bin grid"))),
    }
}

/// `θ_j = arg ρ_mj − arg ρ_mm`, masked where `|ρ_mj| ≤ threshold·max|ρ|`.
pub fn extract_phase(
    rho: &TimeBinDensityMatrix,
    m: RowSelection,
    phase_threshold: f64,
) -> Result<PhaseProfile> {
    let n = rho.dim();
    let m = resolve_row(m, n, (0..n).map(|i| rho.get(i, i).re))?;
    let cutoff = phase_threshold * rho.max_abs();
    let reference = rho.get(m, m).arg();
    let mut phase = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for j in 0..n {
        let z = rho.get(m, j);
        let ok = z.norm() > cutoff;
        valid.push(ok);
        phase.push(if ok { wrap_phase(z.arg() - reference) } else { f64::NAN });
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptyPhase(phase_threshold));
    }
    Ok(PhaseProfile { phase, valid, m })
}

/// Diagonal and row-`m` cuts of a homodyne (`Δω = 0`) autocorrelation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HomodyneProfile {
    /// `A_jj = |φ(τ_j)|²`.
    pub amplitude_sq: Vec<f64>,
    /// `A_mj = φ(τ_m)·Re φ(τ_j)` in the real-at-peak gauge.
    pub re_phi_scaled: Vec<f64>,
    pub m: usize,
}

pub fn homodyne_profile(a: &AutocorrelationMatrix, m: RowSelection) -> Result<HomodyneProfile> {
    if a.delta_omega != 0.0 {
        return Err(Error::invalid(format!(
            "homodyne profile needs Δω = 0, got {} rad/ns",
            a.delta_omega
        )));
    }
    let n = a.dim();
    let amplitude_sq: Vec<f64> = (0..n).map(|j| a.values[(j, j)]).collect();
    let m = resolve_row(m, n, amplitude_sq.iter().copied())?;
    let re_phi_scaled = (0..n).map(|j| a.values[(m, j)]).collect();
    Ok(HomodyneProfile { amplitude_sq, re_phi_scaled, m })
}

pub fn purity_report(rho: &TimeBinDensityMatrix) -> Result<f64> {
    state::purity(rho)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub fitted_trace: f64,
    pub trace_stderr: Option<f64>,
    pub degenerate_trace: bool,
    pub small_trace: bool,
    pub im_unidentifiable: usize,
    pub re_unidentifiable: usize,
    pub max_condition: f64,
    /// All datasets were taken at `Δω = 0`.
    pub homodyne_only: bool,
    pub psd: PsdDiagnostics,
    pub psd_applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Reported matrix; PSD-projected when requested.
    pub rho: TimeBinDensityMatrix,
    pub purity: f64,
    pub raw_purity: f64,
    pub projected_purity: f64,
    pub amplitude_sq: Vec<f64>,
    pub amplitude_sq_clipped: Vec<f64>,
    pub phase: Vec<f64>,
    pub phase_valid: Vec<bool>,
    pub m_row: usize,
    pub residual: f64,
    pub diagnostics: Diagnostics,
}

/// Full pipeline: fit, optional projection, purity, amplitude and phase.
pub fn reconstruct(
    data: &[AutocorrelationMatrix],
    options: &ReconstructOptions,
) -> Result<ReconstructionResult> {
    let fit = reconstruct_density(data)?;
    let raw_purity = state::purity(&fit.rho)?;
    let (projected, psd) = project_psd(&fit.rho, options.psd_tol)?;
    let projected_purity = state::purity(&projected)?;
    let (rho, purity) = if options.psd_projection {
        (projected, projected_purity)
    } else {
        (fit.rho.clone(), raw_purity)
    };
    let amplitude = extract_amplitude(&rho);
    let phase = extract_phase(&rho, options.m, options.phase_threshold)?;
    let diagnostics = Diagnostics {
        fitted_trace: fit.fitted_trace,
        trace_stderr: fit.trace_stderr,
        degenerate_trace: fit.degenerate_trace(),
        small_trace: fit.small_trace,
        im_unidentifiable: fit.n_im_unidentifiable(),
        re_unidentifiable: fit.n_re_unidentifiable(),
        max_condition: fit.max_condition,
        homodyne_only: data.iter().all(|d| d.delta_omega == 0.0),
        psd,
        psd_applied: options.psd_projection,
    };
    Ok(ReconstructionResult {
        rho,
        purity,
        raw_purity,
        projected_purity,
        amplitude_sq: amplitude.raw,
        amplitude_sq_clipped: amplitude.clipped,
        phase: phase.phase,
        phase_valid: phase.valid,
        m_row: phase.m,
        residual: fit.residual(),
        diagnostics,
    })
}
