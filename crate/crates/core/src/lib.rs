//! Time-bin temporal-mode tomography of narrowband heralded single photons.
//!
//! The crate covers both directions of the measurement:
//!
//! * [`simulate`] turns a known temporal density matrix into triggered
//!   quadrature statistics for a local oscillator detuned by `Δω`, either
//!   exactly or by Monte-Carlo sampling of quadrature traces.
//! * [`reconstruct`] inverts a set of reduced autocorrelation matrices taken
//!   at several detunings back into the time-bin density matrix, and extracts
//!   purity, the amplitude profile `|φ(τ)|²` and the phase `θ(τ)`.
//!
//! Units are fixed throughout: time in ns, angular frequency in rad/ns and
//! rates in 1/ns. All mode functions live in the frame rotating at the
//! photon's central frequency.

pub mod error;
pub mod io;
pub mod oracle;
pub mod reconstruct;
pub mod simulate;
pub mod state;
pub mod tmf;

pub use error::{Error, Result};
pub use reconstruct::{ReconstructOptions, ReconstructionResult, RowSelection};
pub use simulate::{AutocorrelationMatrix, QuadratureTraceSet, SampleCount};
pub use state::TimeBinDensityMatrix;
pub use tmf::{JointSpectrum, TemporalModeFunction, TimeGrid};

pub use num_complex::Complex64;

/// Converts an ordinary frequency in MHz to an angular frequency in rad/ns.
pub fn mhz_to_rad_per_ns(nu_mhz: f64) -> f64 {
    2.0 * std::f64::consts::PI * nu_mhz * 1e-3
}
