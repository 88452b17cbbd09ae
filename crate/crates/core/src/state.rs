//! Time-bin density matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tmf::{TemporalModeFunction, TimeGrid};

/// Complex `N×N` density matrix in the time-bin basis, `ρ_ij = ⟨1_i|ρ|1_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBinDensityMatrix {
    grid: TimeGrid,
    elements: DMatrix<Complex64>,
}

/// Outcome of eigenvalue clipping in [`project_psd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdDiagnostics {
    pub min_eigenvalue: f64,
    /// Sum of the negative eigenvalues that were clipped (≤ 0).
    pub clipped_mass: f64,
    /// Set when the most negative eigenvalue lies below `−tol`.
    pub heavily_clipped: bool,
}

/// Result of [`trace_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct TraceNormalized {
    pub rho: TimeBinDensityMatrix,
    pub original_trace: f64,
    pub small_trace: bool,
}

/// Traces below this are normalized but flagged.
pub const SMALL_TRACE: f64 = 1e-6;

/// Default eigenvalue tolerance for flagging heavy clipping.
pub const DEFAULT_PSD_TOL: f64 = 0.05;

impl TimeBinDensityMatrix {
    pub fn new(grid: TimeGrid, elements: DMatrix<Complex64>) -> Result<Self> {
        let n = grid.n_bins();
        if elements.nrows() != n || elements.ncols() != n {
            return Err(Error::invalid(format!(
                "{}×{} matrix for a {n}-bin grid",
                elements.nrows(),
                elements.ncols()
            )));
        }
        if elements.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::invalid("density matrix has non-finite elements"));
        }
        Ok(Self { grid, elements })
    }

    /// Equal-weight mixture `I/N`.
    pub fn maximally_mixed(grid: TimeGrid) -> Self {
        let n = grid.n_bins();
        let elements = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(1.0 / n as f64, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        Self { grid, elements }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn elements(&self) -> &DMatrix<Complex64> {
        &self.elements
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.elements[(i, j)]
    }

    pub fn trace(&self) -> Complex64 {
        self.elements.diagonal().sum()
    }

    /// Largest `|ρ_ij − conj(ρ_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.elements[(i, j)] - self.elements[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.elements.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }

    fn is_hermitian(&self) -> bool {
        self.hermiticity_error() <= 1e-10 * self.max_abs().max(1.0)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = hermitize(self);
        let mut ev: Vec<f64> = SymmetricEigen::new(h.elements).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Real part of the diagonal.
    pub fn diagonal_re(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.elements[(i, i)].re).collect()
    }
}

/// `ρ_ij = conj(φ_i)·φ_j` for a normalized mode function.
pub fn density_from_tmf(tmf: &TemporalModeFunction) -> Result<TimeBinDensityMatrix> {
    if !tmf.is_normalized(1e-9) {
        return Err(Error::invalid(format!(
            "mode function is not normalized (Σ|φ|² = {})",
            tmf.norm_sq()
        )));
    }
    let phi = tmf.amplitudes();
    let n = phi.len();
    let elements = DMatrix::from_fn(n, n, |i, j| phi[i].conj() * phi[j]);
    Ok(TimeBinDensityMatrix { grid: *tmf.grid(), elements })
}

/// `Tr(ρ²)`, evaluated as `Σ_ij |ρ_ij|²`.
pub fn purity(rho: &TimeBinDensityMatrix) -> Result<f64> {
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-6 || tr.im.abs() > 1e-6 {
        return Err(Error::invalid(format!("purity needs unit trace, got {tr}")));
    }
    Ok(rho.elements.iter().map(|z| z.norm_sqr()).sum())
}

pub fn hermitize(rho: &TimeBinDensityMatrix) -> TimeBinDensityMatrix {
    let n = rho.dim();
    let m = &rho.elements;
    let elements = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(m[(i, i)].re, 0.0)
        } else if i < j {
            (m[(i, j)] + m[(j, i)].conj()) * 0.5
        } else {
            (m[(j, i)] + m[(i, j)].conj()).conj() * 0.5
        }
    });
    TimeBinDensityMatrix { grid: rho.grid, elements }
}

/// Clips negative eigenvalues to zero and restores unit trace.
pub fn project_psd(
    rho: &TimeBinDensityMatrix,
    tol: f64,
) -> Result<(TimeBinDensityMatrix, PsdDiagnostics)> {
    if !rho.is_hermitian() {
        return Err(Error::invalid(format!(
            "PSD projection needs a Hermitian matrix (error {:e})",
            rho.hermiticity_error()
        )));
    }
    let h = hermitize(rho);
    let eig = SymmetricEigen::new(h.elements.clone());
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let clipped_mass: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).sum();
    let diagnostics = PsdDiagnostics {
        min_eigenvalue,
        clipped_mass,
        heavily_clipped: min_eigenvalue < -tol,
    };
    if min_eigenvalue >= 0.0 {
        let n = trace_normalize(&h)?;
        return Ok((n.rho, diagnostics));
    }
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::degenerate("no positive eigenvalues left after clipping"));
    }
    let n = rho.dim();
    let v = &eig.eigenvectors;
    let mut elements = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (k, &l) in clipped.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let w = l / total;
        for j in 0..n {
            let vj = v[(j, k)].conj() * w;
            for i in 0..n {
                elements[(i, j)] += v[(i, k)] * vj;
            }
        }
    }
    let out = hermitize(&TimeBinDensityMatrix { grid: rho.grid, elements });
    Ok((out, diagnostics))
}

pub fn trace_normalize(rho: &TimeBinDensityMatrix) -> Result<TraceNormalized> {
    let tr = rho.trace().re;
    if !(tr > 0.0) {
        return Err(Error::degenerate(format!("trace {tr} is not positive")));
    }
    let scale = 1.0 / tr;
    Ok(TraceNormalized {
        rho: TimeBinDensityMatrix { grid: rho.grid, elements: rho.elements.map(|z| z * scale) },
        original_trace: tr,
        small_trace: tr < SMALL_TRACE,
    })
}

/// `⟨φ|ρ|φ⟩`.
pub fn fidelity(rho: &TimeBinDensityMatrix, tmf: &TemporalModeFunction) -> Result<f64> {
    if !rho.grid.matches(tmf.grid()) {
        return Err(Error::GridMismatch("density matrix and mode function grids differ".into()));
    }
    if !tmf.is_normalized(1e-9) {
        return Err(Error::invalid("fidelity needs a normalized mode function"));
    }
    // ρ_ij multiplies |1_j⟩⟨1_i|, so ⟨φ|ρ|φ⟩ = Σ_ij conj(φ_j)·ρ_ij·φ_i
    let phi = tmf.amplitudes();
    let n = phi.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let mut col = Complex64::new(0.0, 0.0);
        for i in 0..n {
            col += rho.elements[(i, j)] * phi[i];
        }
        acc += phi[j].conj() * col;
    }
    if acc.im.abs() > 1e-10 {
        return Err(Error::invalid(format!(
            "⟨φ|ρ|φ⟩ has imaginary part {:e}; ρ is not Hermitian",
            acc.im
        )));
    }
    Ok(acc.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tmf::{make_time_grid, rabi_tmf, tabulated_tmf};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn one_hot(n: usize, k: usize) -> TemporalModeFunction {
        let g = make_time_grid(0.0, 1.0, n).unwrap();
        let mut v = vec![c(0.0, 0.0); n];
        v[k] = c(1.0, 0.0);
        tabulated_tmf(&g, &v).unwrap()
    }

    fn rho_from(grid: TimeGrid, rows: &[&[Complex64]]) -> TimeBinDensityMatrix {
        let n = rows.len();
        TimeBinDensityMatrix::new(grid, DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    fn explicit_tr_rho_sq(rho: &TimeBinDensityMatrix) -> f64 {
        let m = rho.elements();
        let sq = m * m;
        sq.diagonal().sum().re
    }

    #[test]
    fn density_from_one_hot_and_equal_superposition() {
        let rho = density_from_tmf(&one_hot(4, 2)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == 2 && j == 2 { 1.0 } else { 0.0 };
                assert_eq!(rho.get(i, j), c(want, 0.0));
            }
        }

        let g = make_time_grid(0.0, 1.0, 2).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let tmf = TemporalModeFunction::from_raw(g, vec![c(s, 0.0), c(s, 0.0)]).unwrap();
        let rho = density_from_tmf(&tmf).unwrap();
        for z in rho.elements().iter() {
            assert!((z - c(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn density_rejects_unnormalized() {
        let g = make_time_grid(0.0, 1.0, 2).unwrap();
        let tmf = TemporalModeFunction::from_raw(g, vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!(matches!(density_from_tmf(&tmf), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rabi_density_is_pure() {
        let g = make_time_grid(0.0, 10.0, 64).unwrap();
        let tmf = rabi_tmf(crate::mhz_to_rad_per_ns(31.5), 0.003, 0.003, &g).unwrap();
        let rho = density_from_tmf(&tmf).unwrap();
        assert!((explicit_tr_rho_sq(&rho) - 1.0).abs() < 1e-12);
        assert!((purity(&rho).unwrap() - 1.0).abs() < 1e-12);
        assert!((rho.trace() - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn purity_examples() {
        let g = make_time_grid(0.0, 1.0, 3).unwrap();
        let z = c(0.0, 0.0);
        let h = c(0.5, 0.0);
        let mix = rho_from(g, &[&[h, z, z], &[z, h, z], &[z, z, z]]);
        assert!((purity(&mix).unwrap() - 0.5).abs() < 1e-15);

        let doubled = rho_from(g, &[&[c(1.0, 0.0), z, z], &[z, c(1.0, 0.0), z], &[z, z, z]]);
        assert!(matches!(purity(&doubled), Err(Error::InvalidArgument(_))));

        let g = make_time_grid(0.0, 1.0, 5).unwrap();
        let mm = TimeBinDensityMatrix::maximally_mixed(g);
        assert!((purity(&mm).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn hermitize_examples() {
        let g = make_time_grid(0.0, 1.0, 2).unwrap();
        let a = c(1.0, 2.0);
        let b = c(3.0, -5.0);
        let rho = rho_from(g, &[&[c(0.5, 0.0), a], &[b, c(0.5, 0.0)]]);
        let h = hermitize(&rho);
        let want = (a + b.conj()) * 0.5;
        assert_eq!(h.get(0, 1), want);
        assert_eq!(h.get(1, 0), want.conj());

        let again = hermitize(&h);
        assert_eq!(again, h);
    }

    #[test]
    fn project_psd_examples() {
        let g = make_time_grid(0.0, 1.0, 2).unwrap();
        let z = c(0.0, 0.0);
        let rho = rho_from(g, &[&[c(1.1, 0.0), z], &[z, c(-0.1, 0.0)]]);
        let (p, d) = project_psd(&rho, DEFAULT_PSD_TOL).unwrap();
        assert!((p.get(0, 0) - c(1.0, 0.0)).norm() < 1e-12);
        assert!(p.get(1, 1).norm() < 1e-12);
        assert!(d.heavily_clipped);
        assert!((d.min_eigenvalue + 0.1).abs() < 1e-12);

        let pure = density_from_tmf(&one_hot(3, 1)).unwrap();
        let (p, d) = project_psd(&pure, DEFAULT_PSD_TOL).unwrap();
        assert!(!d.heavily_clipped);
        for (x, y) in p.elements().iter().zip(pure.elements().iter()) {
            assert!((x - y).norm() < 1e-12);
        }

        let bad = rho_from(g, &[&[c(0.5, 0.0), c(0.1, 0.0)], &[c(0.3, 0.0), c(0.5, 0.0)]]);
        assert!(matches!(project_psd(&bad, 0.05), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn trace_normalize_examples() {
        let g = make_time_grid(0.0, 1.0, 2).unwrap();
        let z = c(0.0, 0.0);
        let rho = rho_from(g, &[&[c(1.5, 0.0), c(0.2, 0.1)], &[c(0.2, -0.1), c(0.5, 0.0)]]);
        let n = trace_normalize(&rho).unwrap();
        assert_eq!(n.original_trace, 2.0);
        assert_eq!(n.rho.get(0, 1), c(0.1, 0.05));
        assert!(!n.small_trace);

        let unit = trace_normalize(&n.rho).unwrap();
        assert_eq!(unit.rho, n.rho);

        let tiny = rho_from(g, &[&[c(5e-10, 0.0), z], &[z, c(5e-10, 0.0)]]);
        let n = trace_normalize(&tiny).unwrap();
        assert!(n.small_trace);
        assert!((n.rho.trace().re - 1.0).abs() < 1e-12);

        let neg = rho_from(g, &[&[c(-1.0, 0.0), z], &[z, c(0.5, 0.0)]]);
        assert!(matches!(trace_normalize(&neg), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn fidelity_examples() {
        let g = make_time_grid(0.0, 10.0, 32).unwrap();
        let tmf = rabi_tmf(0.2, 0.003, 0.001, &g).unwrap();
        let rho = density_from_tmf(&tmf).unwrap();
        assert!((fidelity(&rho, &tmf).unwrap() - 1.0).abs() < 1e-12);

        let a = density_from_tmf(&one_hot(4, 0)).unwrap();
        assert_eq!(fidelity(&a, &one_hot(4, 3)).unwrap(), 0.0);

        let mm = TimeBinDensityMatrix::maximally_mixed(g);
        assert!((fidelity(&mm, &tmf).unwrap() - 1.0 / 32.0).abs() < 1e-15);

        let chirped: Vec<Complex64> = (0..32)
            .map(|k| Complex64::from_polar((-(k as f64 - 12.0).powi(2) / 40.0).exp(), 0.3 * k as f64))
            .collect();
        let tmf = tabulated_tmf(&g, &chirped).unwrap();
        let rho = density_from_tmf(&tmf).unwrap();
        assert!((fidelity(&rho, &tmf).unwrap() - 1.0).abs() < 1e-12);

        let other = make_time_grid(0.0, 5.0, 32).unwrap();
        let t2 = rabi_tmf(0.2, 0.003, 0.001, &other).unwrap();
        assert!(matches!(fidelity(&rho, &t2), Err(Error::GridMismatch(_))));
    }

    fn random_tmf(n: usize) -> impl Strategy<Value = TemporalModeFunction> {
        (prop::collection::vec(-1.0f64..1.0, n), prop::collection::vec(-1.0f64..1.0, n))
            .prop_filter("non-zero", |(r, i)| r.iter().chain(i).any(|v| v.abs() > 1e-3))
            .prop_map(move |(r, i)| {
                let g = make_time_grid(0.0, 1.0, n).unwrap();
                let v: Vec<Complex64> = r.iter().zip(&i).map(|(&a, &b)| c(a, b)).collect();
                tabulated_tmf(&g, &v).unwrap()
            })
    }

    proptest! {
        #[test]
        fn pure_states_have_unit_purity(tmf in random_tmf(10)) {
            let rho = density_from_tmf(&tmf).unwrap();
            prop_assert!((purity(&rho).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!(rho.hermiticity_error() < 1e-15);
        }

        #[test]
        fn hermitize_output_is_hermitian(
            re in prop::collection::vec(-1.0f64..1.0, 25),
            im in prop::collection::vec(-1.0f64..1.0, 25),
        ) {
            let g = make_time_grid(0.0, 1.0, 5).unwrap();
            let m = DMatrix::from_fn(5, 5, |i, j| c(re[5 * i + j], im[5 * i + j]));
            let h = hermitize(&TimeBinDensityMatrix::new(g, m).unwrap());
            prop_assert!(h.hermiticity_error() <= 1e-15);
        }

        #[test]
        fn projection_is_psd_and_keeps_dominant_purity(
            tmf in random_tmf(8),
            noise in prop::collection::vec(-0.02f64..0.02, 128),
        ) {
            let pure = density_from_tmf(&tmf).unwrap();
            let n = 8;
            let m = pure.elements() + DMatrix::from_fn(n, n, |i, j| c(noise[n * i + j], noise[64 + n * i + j]));
            let noisy = hermitize(&TimeBinDensityMatrix::new(*pure.grid(), m).unwrap());
            let noisy = trace_normalize(&noisy).unwrap().rho;
            let before = noisy.eigenvalues();
            prop_assume!(before[n - 1] > 0.8);
            let (p, _) = project_psd(&noisy, DEFAULT_PSD_TOL).unwrap();
            let after = p.eigenvalues();
            prop_assert!(after[0] >= -1e-12);
            prop_assert!((p.trace().re - 1.0).abs() < 1e-12);
            // eigenvalue oracle: clipping drops Σλ₋² and renormalizing by
            // S = 1 + |Σλ₋| ≥ 1 shrinks the rest, so Σλ² can only go down
            let pur_before: f64 = before.iter().map(|l| l * l).sum();
            let pur_after: f64 = after.iter().map(|l| l * l).sum();
            let s: f64 = before.iter().filter(|&&l| l > 0.0).sum();
            let predicted: f64 = before.iter().filter(|&&l| l > 0.0).map(|l| (l / s) * (l / s)).sum();
            prop_assert!((pur_after - predicted).abs() < 1e-10);
            prop_assert!(pur_after <= pur_before + 1e-12);
            prop_assert!((purity(&p).unwrap() - pur_after).abs() < 1e-10);
        }

        #[test]
        fn fidelity_is_bounded_for_states(
            tmf in random_tmf(6),
            other in random_tmf(6),
            w in 0.0f64..1.0,
        ) {
            let a = density_from_tmf(&tmf).unwrap();
            let b = density_from_tmf(&other).unwrap();
            let m = a.elements() * c(w, 0.0) + b.elements() * c(1.0 - w, 0.0);
            let rho = TimeBinDensityMatrix::new(*a.grid(), m).unwrap();
            let f = fidelity(&rho, &tmf).unwrap();
            prop_assert!(f >= -1e-10 && f <= 1.0 + 1e-10);
        }
    }
}
