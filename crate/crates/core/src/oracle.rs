//! Brute-force cross-checks for the forward model and the element solver.
//!
//! Nothing here calls into `simulate` or `reconstruct`; the arithmetic is
//! spelled out on plain `f64`s so the checks stay independent of the code
//! they validate.

use crate::error::{Error, Result};
use crate::tmf::TemporalModeFunction;

fn element_cost(a: &[f64], detunings: &[f64], dt_ij: f64, x: f64, y: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..a.len() {
        let ph = detunings[k] * dt_ij;
        let r = a[k] - x * ph.cos() - y * ph.sin();
        total += r * r;
    }
    total
}

/// Grid search over `(x, y) ∈ [−1, 1]²` at spacing `2/grid_steps`, then one
/// pass at ten times finer spacing over the neighbouring cells of the best
/// coarse point. Exact ties go to the smaller `|y|`.
pub fn brute_force_element_fit(
    a_values: &[f64],
    detunings: &[f64],
    dt_ij: f64,
    grid_steps: usize,
) -> Result<(f64, f64)> {
    if grid_steps < 100 {
        return Err(Error::invalid(format!("grid_steps must be at least 100, got {grid_steps}")));
    }
    if a_values.len() != detunings.len() {
        return Err(Error::invalid("one detuning per autocorrelation value"));
    }
    let h = 2.0 / grid_steps as f64;
    let mut best = (0.0, 0.0);
    let mut best_cost = f64::INFINITY;
    let consider = |x: f64, y: f64, best: &mut (f64, f64), best_cost: &mut f64| {
        let c = element_cost(a_values, detunings, dt_ij, x, y);
        if c < *best_cost || (c == *best_cost && y.abs() < best.1.abs()) {
            *best_cost = c;
            *best = (x, y);
        }
    };
    for p in 0..=grid_steps {
        let x = -1.0 + p as f64 * h;
        for q in 0..=grid_steps {
            let y = -1.0 + q as f64 * h;
            consider(x, y, &mut best, &mut best_cost);
        }
    }
    let (cx, cy) = best;
    let fine = h / 10.0;
    for p in -10..=10 {
        let x = cx + p as f64 * fine;
        for q in -10..=10 {
            let y = cy + q as f64 * fine;
            consider(x, y, &mut best, &mut best_cost);
        }
    }
    Ok(best)
}

/// `Re[conj(φ_i)·φ_j·e^(−iΔω(t_i−t_j))]`, one scalar at a time.
pub fn direct_forward_check(
    tmf: &TemporalModeFunction,
    delta_omega: f64,
    i: usize,
    j: usize,
) -> Result<f64> {
    let n = tmf.len();
    if i >= n || j >= n {
        return Err(Error::invalid(format!("index ({i}, {j}) outside a {n}-bin mode function")));
    }
    let (ar, ai) = (tmf.amplitudes()[i].re, tmf.amplitudes()[i].im);
    let (br, bi) = (tmf.amplitudes()[j].re, tmf.amplitudes()[j].im);
    // conj(a)·b
    let pr = ar * br + ai * bi;
    let pi = ar * bi - ai * br;
    let ph = -delta_omega * (tmf.grid().center(i) - tmf.grid().center(j));
    Ok(pr * ph.cos() - pi * ph.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tmf::{make_time_grid, tabulated_tmf};
    use num_complex::Complex64;

    #[test]
    fn recovers_known_parameters() {
        let dws = [-0.06, -0.03, 0.0, 0.02, 0.05, 0.08, 0.11, 0.14];
        let dt = 30.0;
        for (x0, y0) in [(0.3, -0.2), (-0.71, 0.05), (0.0, 0.0), (0.123, 0.456)] {
            let a: Vec<f64> = dws.iter().map(|w: &f64| x0 * (w * dt).cos() + y0 * (w * dt).sin()).collect();
            let (x, y) = brute_force_element_fit(&a, &dws, dt, 200).unwrap();
            let bound = 2.0 * (2.0 / 200.0 / 10.0);
            assert!((x - x0).abs() <= bound && (y - y0).abs() <= bound, "({x}, {y}) vs ({x0}, {y0})");
        }
    }

    #[test]
    fn zero_lag_ties_break_toward_zero() {
        let dws = [-0.06, 0.0, 0.05];
        let (x, y) = brute_force_element_fit(&[0.4, 0.4, 0.4], &dws, 0.0, 100).unwrap();
        assert!((x - 0.4).abs() < 2e-3);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn rejects_coarse_grid() {
        assert!(brute_force_element_fit(&[0.1], &[0.0], 1.0, 50).is_err());
    }

    #[test]
    fn forward_check_basics() {
        let g = make_time_grid(0.0, 10.0, 4).unwrap();
        let v = [Complex64::new(0.3, 0.1), Complex64::new(-0.5, 0.4), Complex64::new(0.2, -0.6), Complex64::new(0.1, 0.0)];
        let tmf = tabulated_tmf(&g, &v).unwrap();
        for i in 0..4 {
            let d = direct_forward_check(&tmf, 0.0, i, i).unwrap();
            assert!((d - tmf.amplitudes()[i].norm_sqr()).abs() < 1e-15);
            for j in 0..4 {
                let a = direct_forward_check(&tmf, 0.07, i, j).unwrap();
                let b = direct_forward_check(&tmf, 0.07, j, i).unwrap();
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert!(direct_forward_check(&tmf, 0.0, 4, 0).is_err());
    }
}
