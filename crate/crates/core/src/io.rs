//! File formats.
//!
//! * Mode functions: CSV with header `tau_ns,re,im`.
//! * Joint spectra: CSV with header `omega_rad_per_ns,re,im`.
//! * Real matrices (autocorrelations, density matrix parts): headerless CSV,
//!   first row the bin centres in ns, then `N` rows of `N` values.
//! * Density matrices: a pair `<name>.re.csv` / `<name>.im.csv` in the
//!   matrix format above.
//! * Trace sets: the same CSV layout with one trace per row, or a
//!   little-endian binary file (see [`write_traces_bin`]).
//!
//! Floats are written in the shortest representation that parses back to
//! the same value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::reconstruct::{HomodyneProfile, ReconstructionResult};
use crate::simulate::{AutocorrelationMatrix, QuadratureTraceSet, SampleCount};
use crate::state::TimeBinDensityMatrix;
use crate::tmf::{tabulated_tmf, JointSpectrum, TemporalModeFunction, TimeGrid};

pub const TMF_HEADER: [&str; 3] = ["tau_ns", "re", "im"];
pub const SPECTRUM_HEADER: [&str; 3] = ["omega_rad_per_ns", "re", "im"];
pub const PROFILE_HEADER: [&str; 5] = ["tau_ns", "amp_sq", "amp_sq_clipped", "phase_rad", "phase_valid"];

pub const TRACE_MAGIC: &[u8; 4] = b"TMQT";
pub const TRACE_VERSION: u32 = 1;
pub const TRACE_HEADER_LEN: usize = 32;

fn parse_f64(field: &str, path: &Path, row: usize) -> Result<f64> {
    field.trim().parse().map_err(|_| {
        Error::Format(format!("{}: row {}: {:?} is not a number", path.display(), row + 1, field))
    })
}

fn read_columns3(path: &Path, header: [&str; 3]) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if got != header {
        return Err(Error::Format(format!(
            "{}: expected header {}, found {}",
            path.display(),
            header.join(","),
            got.join(",")
        )));
    }
    let mut axis = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Format(format!("{}: row {} has {} fields", path.display(), row + 2, rec.len())));
        }
        axis.push(parse_f64(&rec[0], path, row + 1)?);
        values.push(Complex64::new(parse_f64(&rec[1], path, row + 1)?, parse_f64(&rec[2], path, row + 1)?));
    }
    Ok((axis, values))
}

fn write_columns3(path: &Path, header: [&str; 3], axis: &[f64], values: &[Complex64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (x, v) in axis.iter().zip(values) {
        w.write_record([x.to_string(), v.re.to_string(), v.im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a tabulated mode function; the result is normalized.
pub fn read_tmf_csv(path: impl AsRef<Path>) -> Result<TemporalModeFunction> {
    let path = path.as_ref();
    let (tau, samples) = read_columns3(path, TMF_HEADER)?;
    let grid = TimeGrid::from_centers(&tau)?;
    tabulated_tmf(&grid, &samples)
}

pub fn write_tmf_csv(path: impl AsRef<Path>, tmf: &TemporalModeFunction) -> Result<()> {
    write_columns3(path.as_ref(), TMF_HEADER, &tmf.grid().centers(), tmf.amplitudes())
}

pub fn read_joint_spectrum_csv(path: impl AsRef<Path>) -> Result<JointSpectrum> {
    let (w, v) = read_columns3(path.as_ref(), SPECTRUM_HEADER)?;
    JointSpectrum::new(w, v)
}

pub fn write_joint_spectrum_csv(path: impl AsRef<Path>, spectrum: &JointSpectrum) -> Result<()> {
    write_columns3(path.as_ref(), SPECTRUM_HEADER, spectrum.detunings(), spectrum.values())
}

fn read_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push(rec.iter().map(|f| parse_f64(f, path, r)).collect::<Result<Vec<f64>>>()?);
    }
    Ok(rows)
}

fn write_rows<'a>(
    path: &Path,
    centers: &[f64],
    rows: impl Iterator<Item = Vec<f64>> + 'a,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(centers.iter().map(f64::to_string))?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Headerless matrix CSV: bin centres, then the rows.
pub fn write_real_matrix(path: impl AsRef<Path>, grid: &TimeGrid, m: &DMatrix<f64>) -> Result<()> {
    write_rows(
        path.as_ref(),
        &grid.centers(),
        m.row_iter().map(|r| r.iter().copied().collect()),
    )
}

pub fn read_real_matrix(path: impl AsRef<Path>) -> Result<(TimeGrid, DMatrix<f64>)> {
    let path = path.as_ref();
    let rows = read_table(path)?;
    let (centers, body) = rows
        .split_first()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    let grid = TimeGrid::from_centers(centers)?;
    let n = grid.n_bins();
    if body.len() != n || body.iter().any(|r| r.len() != n) {
        return Err(Error::Format(format!(
            "{}: expected {n} rows of {n} values after the bin centers",
            path.display()
        )));
    }
    Ok((grid, DMatrix::from_fn(n, n, |i, j| body[i][j])))
}

fn pair_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.re.csv")), dir.join(format!("{name}.im.csv")))
}

pub fn write_density_pair(dir: impl AsRef<Path>, name: &str, rho: &TimeBinDensityMatrix) -> Result<()> {
    let (re, im) = pair_paths(dir.as_ref(), name);
    write_real_matrix(re, rho.grid(), &rho.elements().map(|z| z.re))?;
    write_real_matrix(im, rho.grid(), &rho.elements().map(|z| z.im))
}

pub fn read_density_pair(dir: impl AsRef<Path>, name: &str) -> Result<TimeBinDensityMatrix> {
    let (re_path, im_path) = pair_paths(dir.as_ref(), name);
    let (g_re, re) = read_real_matrix(&re_path)?;
    let (g_im, im) = read_real_matrix(&im_path)?;
    if !g_re.matches(&g_im) {
        return Err(Error::GridMismatch(format!("{name}: real and imaginary parts use different grids")));
    }
    TimeBinDensityMatrix::new(g_re, re.zip_map(&im, Complex64::new))
}

/// Writes `<name>.csv` and, when present, `<name>.stderr.csv`.
pub fn write_autocorr(dir: impl AsRef<Path>, name: &str, a: &AutocorrelationMatrix) -> Result<()> {
    let dir = dir.as_ref();
    write_real_matrix(dir.join(format!("{name}.csv")), &a.grid, &a.values)?;
    if let Some(se) = &a.stderr {
        write_real_matrix(dir.join(format!("{name}.stderr.csv")), &a.grid, se)?;
    }
    Ok(())
}

/// Reads a matrix written by [`write_autocorr`]; the standard errors are
/// picked up if their file exists.
pub fn read_autocorr(
    dir: impl AsRef<Path>,
    name: &str,
    delta_omega: f64,
    n_samples: SampleCount,
) -> Result<AutocorrelationMatrix> {
    let dir = dir.as_ref();
    let (grid, values) = read_real_matrix(dir.join(format!("{name}.csv")))?;
    let se_path = dir.join(format!("{name}.stderr.csv"));
    let stderr = if se_path.exists() {
        let (g, se) = read_real_matrix(&se_path)?;
        if !g.matches(&grid) {
            return Err(Error::GridMismatch(format!("{name}: stderr grid differs from values")));
        }
        Some(se)
    } else {
        None
    };
    AutocorrelationMatrix::new(grid, delta_omega, values, stderr, n_samples)
}

pub fn write_traces_csv(path: impl AsRef<Path>, traces: &QuadratureTraceSet) -> Result<()> {
    write_rows(
        path.as_ref(),
        &traces.grid().centers(),
        traces.traces().row_iter().map(|r| r.iter().copied().collect()),
    )
}

pub fn read_traces_csv(
    path: impl AsRef<Path>,
    delta_omega: f64,
    seed: u64,
    eta: f64,
) -> Result<QuadratureTraceSet> {
    let path = path.as_ref();
    let rows = read_table(path)?;
    let (centers, body) = rows
        .split_first()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    let grid = TimeGrid::from_centers(centers)?;
    let n = grid.n_bins();
    if let Some(r) = body.iter().position(|r| r.len() != n) {
        return Err(Error::Format(format!("{}: trace {} has the wrong length", path.display(), r + 1)));
    }
    QuadratureTraceSet::new(grid, delta_omega, DMatrix::from_fn(body.len(), n, |s, i| body[s][i]), seed, eta)
}

/// Binary trace file, all fields little-endian:
///
/// ```text
/// offset  size  field
///      0     4  magic "TMQT"
///      4     4  version (u32) = 1
///      8     8  n_samples (u64)
///     16     8  n_bins (u64)
///     24     8  delta_omega in rad/ns (f64)
///     32  8·N   bin centres in ns (f64)
///      …  8·S·N traces, row-major (f64)
/// ```
pub fn write_traces_bin(path: impl AsRef<Path>, traces: &QuadratureTraceSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&TRACE_VERSION.to_le_bytes())?;
    w.write_all(&(traces.n_samples() as u64).to_le_bytes())?;
    w.write_all(&(traces.grid().n_bins() as u64).to_le_bytes())?;
    w.write_all(&traces.delta_omega().to_le_bytes())?;
    for t in traces.grid().centers() {
        w.write_all(&t.to_le_bytes())?;
    }
    for row in traces.traces().row_iter() {
        for v in row.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces_bin(path: impl AsRef<Path>, seed: u64, eta: f64) -> Result<QuadratureTraceSet> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; TRACE_HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[0..4] != TRACE_MAGIC {
        return Err(Error::Format(format!("{}: not a trace file", path.display())));
    }
    let word = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().expect("8 bytes"));
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != TRACE_VERSION {
        return Err(Error::Format(format!("{}: unsupported version {version}", path.display())));
    }
    let n_samples = usize::try_from(word(8)).map_err(|_| Error::Format("sample count overflows".into()))?;
    let n_bins = usize::try_from(word(16)).map_err(|_| Error::Format("bin count overflows".into()))?;
    let delta_omega = f64::from_bits(word(24));
    let mut next = || -> Result<f64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let centers = (0..n_bins).map(|_| next()).collect::<Result<Vec<f64>>>()?;
    let grid = TimeGrid::from_centers(&centers)?;
    let mut traces = DMatrix::zeros(n_samples, n_bins);
    for s in 0..n_samples {
        for i in 0..n_bins {
            traces[(s, i)] = next()?;
        }
    }
    QuadratureTraceSet::new(grid, delta_omega, traces, seed, eta)
}

/// `tau_ns, amp_sq, amp_sq_clipped, phase_rad, phase_valid`; masked phases are `NaN`.
pub fn write_profile_csv(path: impl AsRef<Path>, result: &ReconstructionResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PROFILE_HEADER)?;
    let centers = result.rho.grid().centers();
    for j in 0..centers.len() {
        w.write_record([
            centers[j].to_string(),
            result.amplitude_sq[j].to_string(),
            result.amplitude_sq_clipped[j].to_string(),
            result.phase[j].to_string(),
            u8::from(result.phase_valid[j]).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Diagonal and row-`m` cuts of `Re ρ` and `Im ρ`.
pub fn write_cuts_csv(path: impl AsRef<Path>, result: &ReconstructionResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tau_ns", "diag_re", "row_m_re", "row_m_im"])?;
    let rho = &result.rho;
    let m = result.m_row;
    for (j, t) in rho.grid().centers().iter().enumerate() {
        let d = rho.get(j, j);
        let r = rho.get(m, j);
        w.write_record([t.to_string(), d.re.to_string(), r.re.to_string(), r.im.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_homodyne_csv(path: impl AsRef<Path>, grid: &TimeGrid, profile: &HomodyneProfile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tau_ns", "amp_sq", "re_phi_scaled"])?;
    for (j, t) in grid.centers().iter().enumerate() {
        w.write_record([
            t.to_string(),
            profile.amplitude_sq[j].to_string(),
            profile.re_phi_scaled[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text `key: value` summary of a reconstruction.
pub fn format_report(result: &ReconstructionResult) -> String {
    let d = &result.diagnostics;
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(": ");
        s.push_str(&v);
        s.push('\n');
    };
    line("purity", result.purity.to_string());
    line("raw_purity", result.raw_purity.to_string());
    line("projected_purity", result.projected_purity.to_string());
    line("m", result.m_row.to_string());
    line("residual", result.residual.to_string());
    line("fitted_trace", d.fitted_trace.to_string());
    line(
        "trace_stderr",
        d.trace_stderr.map_or_else(|| "none".to_string(), |v| v.to_string()),
    );
    line("degenerate_trace", d.degenerate_trace.to_string());
    line("small_trace", d.small_trace.to_string());
    line("im_unidentifiable", d.im_unidentifiable.to_string());
    line("re_unidentifiable", d.re_unidentifiable.to_string());
    line("max_condition", d.max_condition.to_string());
    line("homodyne_only", d.homodyne_only.to_string());
    line("psd_applied", d.psd_applied.to_string());
    line("psd_min_eigenvalue", d.psd.min_eigenvalue.to_string());
    line("psd_clipped_mass", d.psd.clipped_mass.to_string());
    line("psd_heavily_clipped", d.psd.heavily_clipped.to_string());
    s
}

pub fn write_report(path: impl AsRef<Path>, result: &ReconstructionResult) -> Result<()> {
    std::fs::write(path, format_report(result))?;
    Ok(())
}

/// Writes `rho.re.csv`, `rho.im.csv`, `profile.csv`, `cuts.csv` and `report.txt`.
pub fn write_reconstruction(dir: impl AsRef<Path>, result: &ReconstructionResult) -> Result<()> {
    let dir = dir.as_ref();
    write_density_pair(dir, "rho", &result.rho)?;
    write_profile_csv(dir.join("profile.csv"), result)?;
    write_cuts_csv(dir.join("cuts.csv"), result)?;
    write_report(dir.join("report.txt"), result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{autocorr_exact, sample_autocorr, sample_traces};
    use crate::state::density_from_tmf;
    use crate::tmf::{make_time_grid, rabi_tmf};
    use proptest::prelude::*;

    fn chirped() -> TemporalModeFunction {
        let g = make_time_grid(-20.0, 10.0, 9).unwrap();
        let v: Vec<Complex64> = (0..9).map(|k| Complex64::from_polar(1.0 + k as f64, 0.3 * k as f64)).collect();
        tabulated_tmf(&g, &v).unwrap()
    }

    #[test]
    fn tmf_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tmf.csv");
        let tmf = chirped();
        write_tmf_csv(&p, &tmf).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("tau_ns,re,im\n"));
        let back = read_tmf_csv(&p).unwrap();
        assert!(back.grid().matches(tmf.grid()));
        for (a, b) in back.amplitudes().iter().zip(tmf.amplitudes()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn tmf_csv_rejects_wrong_header_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "t,re,im\n0,1,0\n1,1,0\n").unwrap();
        assert!(matches!(read_tmf_csv(&p), Err(Error::Format(_))));
        std::fs::write(&p, "tau_ns,re,im\n0,1,0\n1,x,0\n").unwrap();
        assert!(matches!(read_tmf_csv(&p), Err(Error::Format(_))));
        std::fs::write(&p, "tau_ns,re,im\n0,1,0\n1,1,0\n5,1,0\n").unwrap();
        assert!(matches!(read_tmf_csv(&p), Err(Error::Format(_))));
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("spec.csv");
        let w: Vec<f64> = (0..11).map(|k| -0.5 + 0.1 * k as f64).collect();
        let v: Vec<Complex64> = w.iter().map(|&x| Complex64::new(0.1, x).inv()).collect();
        let s = JointSpectrum::new(w, v).unwrap();
        write_joint_spectrum_csv(&p, &s).unwrap();
        assert_eq!(read_joint_spectrum_csv(&p).unwrap(), s);
    }

    #[test]
    fn density_pair_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rho = density_from_tmf(&chirped()).unwrap();
        write_density_pair(dir.path(), "rho", &rho).unwrap();
        assert!(dir.path().join("rho.re.csv").exists());
        let back = read_density_pair(dir.path(), "rho").unwrap();
        assert_eq!(back.elements(), rho.elements());
    }

    #[test]
    fn autocorr_round_trip_with_stderr() {
        let dir = tempfile::tempdir().unwrap();
        let rho = density_from_tmf(&chirped()).unwrap();
        let a = sample_autocorr(&rho, 0.05, 1.0, 300, 1).unwrap();
        write_autocorr(dir.path(), "A_00", &a).unwrap();
        let back = read_autocorr(dir.path(), "A_00", 0.05, SampleCount::Finite(300)).unwrap();
        assert_eq!(back, a);
        let e = autocorr_exact(&rho, 0.0, 1.0).unwrap();
        write_autocorr(dir.path(), "A_01", &e).unwrap();
        assert!(!dir.path().join("A_01.stderr.csv").exists());
        assert_eq!(read_autocorr(dir.path(), "A_01", 0.0, SampleCount::Exact).unwrap(), e);
    }

    #[test]
    fn matrix_reader_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "0,1\n1,2\n3\n").unwrap();
        assert!(matches!(read_real_matrix(&p), Err(Error::Format(_))));
    }

    #[test]
    fn binary_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_time_grid(0.0, 10.0, 4).unwrap();
        let rho = density_from_tmf(&rabi_tmf(0.2, 0.0, 0.0, &g).unwrap()).unwrap();
        let t = sample_traces(&rho, 0.125, 1.0, 3, 0).unwrap();
        let p = dir.path().join("t.bin");
        write_traces_bin(&p, &t).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 32 + 8 * 4 + 8 * 3 * 4);
        assert_eq!(&bytes[0..4], b"TMQT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 4);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 0.125);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 10.0);
        std::fs::write(&p, b"NOPE").unwrap();
        assert!(read_traces_bin(&p, 0, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn trace_files_round_trip(seed in 0u64..10_000, n in 2usize..40, dw in -0.2f64..0.2) {
            let dir = tempfile::tempdir().unwrap();
            let rho = density_from_tmf(&chirped()).unwrap();
            let t = sample_traces(&rho, dw, 0.9, n, seed).unwrap();
            let csv_path = dir.path().join("t.csv");
            let bin_path = dir.path().join("t.bin");
            write_traces_csv(&csv_path, &t).unwrap();
            write_traces_bin(&bin_path, &t).unwrap();
            prop_assert_eq!(&read_traces_csv(&csv_path, dw, seed, 0.9).unwrap(), &t);
            prop_assert_eq!(&read_traces_bin(&bin_path, seed, 0.9).unwrap(), &t);
        }
    }
}
