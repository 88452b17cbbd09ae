//! Discretized temporal mode functions.
//!
//! A [`TemporalModeFunction`] stores one complex amplitude per time bin of a
//! uniform [`TimeGrid`]. Constructors return unit-normalized functions
//! (`Σ|φ_i|² = 1`, bin-sum convention) in the global-phase gauge where the
//! amplitude at the bin of largest magnitude is real and non-negative.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Uniform time-bin axis; bin `i` is centred at `t_start + i·dt` (ns).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    dt: f64,
    n_bins: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, dt: f64, n_bins: usize) -> Result<Self> {
        if !t_start.is_finite() {
            return Err(Error::invalid(format!("t_start must be finite, got {t_start}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("bin width must be positive, got {dt}")));
        }
        if n_bins < 2 {
            return Err(Error::invalid(format!("need at least 2 bins, got {n_bins}")));
        }
        Ok(Self { t_start, dt, n_bins })
    }

    /// Recovers a grid from a list of bin centres, which must be uniformly spaced.
    pub fn from_centers(centers: &[f64]) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::invalid("need at least 2 bin centers"));
        }
        let n = centers.len();
        let dt = (centers[n - 1] - centers[0]) / (n - 1) as f64;
        let grid = Self::new(centers[0], dt, n)?;
        for (i, &t) in centers.iter().enumerate() {
            if (t - grid.center(i)).abs() > 1e-6 * dt {
                return Err(Error::Format(format!(
                    "bin centers are not uniformly spaced (bin {i}: {t} vs {})",
                    grid.center(i)
                )));
            }
        }
        Ok(grid)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn center(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.dt
    }

    /// `t_i − t_j`, computed from the bin offset so it is exact in `i − j`.
    pub fn lag(&self, i: usize, j: usize) -> f64 {
        (i as f64 - j as f64) * self.dt
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.center(i)).collect()
    }

    /// Equality up to round-off in the stored start and width, as happens
    /// after a round trip through a text file.
    pub fn matches(&self, other: &TimeGrid) -> bool {
        let tol = 1e-9 * self.dt.max(other.dt);
        self.n_bins == other.n_bins
            && (self.dt - other.dt).abs() <= tol
            && (self.t_start - other.t_start).abs() <= tol
    }
}

pub fn make_time_grid(t_start: f64, dt: f64, n_bins: usize) -> Result<TimeGrid> {
    TimeGrid::new(t_start, dt, n_bins)
}

/// Complex amplitude per time bin.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalModeFunction {
    grid: TimeGrid,
    amplitudes: Vec<Complex64>,
}

impl TemporalModeFunction {
    /// Wraps raw amplitudes without normalizing them.
    pub fn from_raw(grid: TimeGrid, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != grid.n_bins() {
            return Err(Error::invalid(format!(
                "{} amplitudes for a {}-bin grid",
                amplitudes.len(),
                grid.n_bins()
            )));
        }
        if let Some(i) = amplitudes.iter().position(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(Error::invalid(format!("non-finite amplitude at bin {i}")));
        }
        Ok(Self { grid, amplitudes })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sq() - 1.0).abs() <= tol
    }

    /// Scales to unit bin-sum norm; phases are untouched.
    pub fn normalize(&self) -> Result<Self> {
        let norm_sq = self.norm_sq();
        if !(norm_sq > 0.0) {
            return Err(Error::degenerate("mode function is identically zero"));
        }
        let scale = norm_sq.sqrt().recip();
        Ok(Self {
            grid: self.grid,
            amplitudes: self.amplitudes.iter().map(|a| a * scale).collect(),
        })
    }

    /// Index of the bin with the largest `|φ|` (first one on ties).
    pub fn peak_bin(&self) -> usize {
        let mut best = 0;
        let mut best_mag = f64::NEG_INFINITY;
        for (i, a) in self.amplitudes.iter().enumerate() {
            let mag = a.norm_sqr();
            if mag > best_mag {
                best = i;
                best_mag = mag;
            }
        }
        best
    }

    /// Rotates the global phase so the peak-bin amplitude is real and non-negative.
    pub fn with_fixed_global_phase(mut self) -> Self {
        let peak = self.peak_bin();
        let a = self.amplitudes[peak];
        let mag = a.norm();
        if mag > 0.0 {
            let rot = a.conj() / mag;
            for v in &mut self.amplitudes {
                *v *= rot;
            }
            self.amplitudes[peak] = Complex64::new(mag, 0.0);
        }
        self
    }

    /// Multiplies every amplitude by `c`.
    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            grid: self.grid,
            amplitudes: self.amplitudes.iter().map(|a| a * c).collect(),
        }
    }
}

pub fn normalize(tmf: &TemporalModeFunction) -> Result<TemporalModeFunction> {
    tmf.normalize()
}

fn finish(grid: TimeGrid, amplitudes: Vec<Complex64>) -> Result<TemporalModeFunction> {
    Ok(TemporalModeFunction::from_raw(grid, amplitudes)?
        .normalize()?
        .with_fixed_global_phase())
}

/// Effective damping `γₑ = (γ₁₃+γ₁₂)/2` and oscillation frequency
/// `Ωₑ = √(Ω_c² − (γ₁₃−γ₁₂)²)` of the damped Rabi waveform.
pub fn rabi_effective_rates(omega_c: f64, gamma13: f64, gamma12: f64) -> Result<(f64, f64)> {
    if !(omega_c.is_finite() && gamma13.is_finite() && gamma12.is_finite()) {
        return Err(Error::invalid("Rabi parameters must be finite"));
    }
    if gamma13 < 0.0 || gamma12 < 0.0 {
        return Err(Error::invalid(format!(
            "dephasing rates must be non-negative (γ13 = {gamma13}, γ12 = {gamma12})"
        )));
    }
    let split = gamma13 - gamma12;
    let disc = omega_c * omega_c - split * split;
    if !(disc > 0.0) {
        return Err(Error::Regime(format!(
            "Ω_c² = {} does not exceed (γ13−γ12)² = {}; waveform is not underdamped",
            omega_c * omega_c,
            split * split
        )));
    }
    Ok((0.5 * (gamma13 + gamma12), disc.sqrt()))
}

/// Damped Rabi oscillation `φ(τ) ∝ e^(−γₑτ)·sin(Ωₑτ/2)` for `τ ≥ 0`, zero before the herald.
pub fn rabi_tmf(
    omega_c: f64,
    gamma13: f64,
    gamma12: f64,
    grid: &TimeGrid,
) -> Result<TemporalModeFunction> {
    let (gamma_e, omega_e) = rabi_effective_rates(omega_c, gamma13, gamma12)?;
    let amplitudes: Vec<Complex64> = grid
        .centers()
        .into_iter()
        .map(|tau| {
            if tau < 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new((-gamma_e * tau).exp() * (0.5 * omega_e * tau).sin(), 0.0)
            }
        })
        .collect();
    if amplitudes.iter().all(|a| a.norm_sqr() == 0.0) {
        return Err(Error::degenerate(
            "grid samples the Rabi waveform only at its zeros",
        ));
    }
    finish(*grid, amplitudes)
}

pub fn tabulated_tmf(grid: &TimeGrid, samples: &[Complex64]) -> Result<TemporalModeFunction> {
    if samples.len() != grid.n_bins() {
        return Err(Error::invalid(format!(
            "{} samples for a {}-bin grid",
            samples.len(),
            grid.n_bins()
        )));
    }
    finish(*grid, samples.to_vec())
}

/// Biphoton joint spectrum `Φ(Ω)` on a uniform detuning axis (rad/ns).
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpectrum {
    detunings: Vec<f64>,
    values: Vec<Complex64>,
}

impl JointSpectrum {
    pub fn new(detunings: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if detunings.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} detunings but {} spectrum values",
                detunings.len(),
                values.len()
            )));
        }
        if detunings.len() < 2 {
            return Err(Error::invalid("joint spectrum needs at least 2 samples"));
        }
        if detunings.iter().any(|w| !w.is_finite())
            || values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::invalid("joint spectrum contains non-finite samples"));
        }
        let step = detunings[1] - detunings[0];
        if !(step > 0.0) {
            return Err(Error::invalid("detunings must be strictly increasing"));
        }
        for (k, pair) in detunings.windows(2).enumerate() {
            let d = pair[1] - pair[0];
            if !(d > 0.0) {
                return Err(Error::invalid("detunings must be strictly increasing"));
            }
            if (d - step).abs() > 1e-6 * step {
                return Err(Error::invalid(format!(
                    "detunings not uniformly spaced at sample {}",
                    k + 1
                )));
            }
        }
        Ok(Self { detunings, values })
    }

    pub fn detunings(&self) -> &[f64] {
        &self.detunings
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Uniform spacing `ΔΩ` of the detuning axis.
    pub fn spacing(&self) -> f64 {
        let n = self.detunings.len();
        (self.detunings[n - 1] - self.detunings[0]) / (n - 1) as f64
    }

    pub fn max_abs_detuning(&self) -> f64 {
        self.detunings.iter().fold(0.0_f64, |m, w| m.max(w.abs()))
    }
}

/// Heralded mode function as the Fourier transform of the joint spectrum,
/// `φ(τ_i) = (1/√2π)·Σ_k Φ(Ω_k)·e^(−iΩ_kτ_i)·ΔΩ`, then normalized.
pub fn tmf_from_joint_spectrum(
    spectrum: &JointSpectrum,
    grid: &TimeGrid,
) -> Result<TemporalModeFunction> {
    if spectrum.values().iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(Error::degenerate("joint spectrum is identically zero"));
    }
    let max_w = spectrum.max_abs_detuning();
    if grid.dt() * max_w > PI * (1.0 + 1e-12) {
        return Err(Error::Aliasing(format!(
            "bin width {} ns exceeds π/max|Ω| = {} ns",
            grid.dt(),
            PI / max_w
        )));
    }
    let weight = spectrum.spacing() / (2.0 * PI).sqrt();
    let amplitudes: Vec<Complex64> = grid
        .centers()
        .into_iter()
        .map(|tau| {
            spectrum
                .detunings()
                .iter()
                .zip(spectrum.values())
                .map(|(&w, &v)| v * Complex64::from_polar(1.0, -w * tau))
                .sum::<Complex64>()
                * weight
        })
        .collect();
    if amplitudes.iter().all(|a| a.norm_sqr() == 0.0) {
        return Err(Error::degenerate("transformed mode function vanishes on the grid"));
    }
    finish(*grid, amplitudes)
}
