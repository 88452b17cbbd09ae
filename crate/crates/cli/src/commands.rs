use std::fmt;
use std::path::{Path, PathBuf};

use tbtomo::io;
use tbtomo::oracle::{brute_force_element_fit, direct_forward_check};
use tbtomo::reconstruct::{homodyne_profile, reconstruct, solve_element};
use tbtomo::simulate::{autocorr_exact, detuning_seed, estimate_autocorr, sample_autocorr, sample_traces};
use tbtomo::state::{density_from_tmf, fidelity};
use tbtomo::tmf::{make_time_grid, rabi_tmf, tmf_from_joint_spectrum};
use tbtomo::{
    mhz_to_rad_per_ns, AutocorrelationMatrix, ReconstructOptions, ReconstructionResult, SampleCount,
    TemporalModeFunction, TimeBinDensityMatrix,
};

use crate::config::{ConfigError, RunConfig, TmfSpec, TraceFormat};
use crate::manifest::{Dataset, Manifest};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration; exit code 2.
    Usage(String),
    /// A run finished but missed a threshold; exit code 1.
    Threshold(String),
    /// Anything else that stopped the run; exit code 2.
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Threshold(_) => 1,
            CliError::Usage(_) | CliError::Run(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Threshold(m) => write!(f, "FAIL: {m}"),
            CliError::Run(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<tbtomo::Error> for CliError {
    fn from(e: tbtomo::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn ctx<T>(r: tbtomo::Result<T>, what: impl FnOnce() -> String) -> Result<T> {
    r.map_err(|e| CliError::Run(format!("{}: {e}", what())))
}

pub fn build_tmf(cfg: &RunConfig) -> Result<TemporalModeFunction> {
    let spec = cfg
        .tmf
        .as_ref()
        .ok_or_else(|| CliError::Usage("missing tmf spec (set tmf.model in the config file)".into()))?;
    let grid = || {
        make_time_grid(cfg.grid.t_start_ns, cfg.grid.dt_ns, cfg.grid.n_bins)
            .map_err(|e| CliError::Usage(format!("grid: {e}")))
    };
    match spec {
        TmfSpec::Rabi { omega_c_mhz, gamma13, gamma12 } => {
            Ok(rabi_tmf(mhz_to_rad_per_ns(*omega_c_mhz), *gamma13, *gamma12, &grid()?)?)
        }
        TmfSpec::Tabulated { path } => {
            let tmf = ctx(io::read_tmf_csv(path), || path.display().to_string())?;
            if cfg.grid_explicit && !tmf.grid().matches(&grid()?) {
                return Err(CliError::Usage(format!(
                    "grid.* settings disagree with the bins in {}",
                    path.display()
                )));
            }
            Ok(tmf)
        }
        TmfSpec::Spectrum { path } => {
            let s = ctx(io::read_joint_spectrum_csv(path), || path.display().to_string())?;
            Ok(tmf_from_joint_spectrum(&s, &grid()?)?)
        }
    }
}

fn options(cfg: &RunConfig) -> ReconstructOptions {
    ReconstructOptions {
        psd_projection: cfg.psd,
        psd_tol: cfg.psd_tol,
        phase_threshold: cfg.phase_threshold,
        m: cfg.m,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Run(format!("cannot create {}: {e}", dir.display())))
}

fn checked_eta(cfg: &RunConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&cfg.eta) {
        return Err(CliError::Usage(format!("eta must lie in [0, 1], got {}", cfg.eta)));
    }
    Ok(cfg.eta)
}

/// Generates every dataset; with `dir` set, also writes the dataset directory.
fn generate(
    cfg: &RunConfig,
    tmf: &TemporalModeFunction,
    dir: Option<&Path>,
) -> Result<(TimeBinDensityMatrix, Vec<AutocorrelationMatrix>)> {
    let eta = checked_eta(cfg)?;
    let rho = density_from_tmf(tmf)?;
    let dws = cfg.detunings_rad_per_ns();
    if let Some(dir) = dir {
        create_dir(dir)?;
        io::write_tmf_csv(dir.join("tmf.csv"), tmf)?;
        io::write_density_pair(dir, "rho_true", &rho)?;
    }
    let mut data = Vec::with_capacity(dws.len());
    let mut datasets = Vec::with_capacity(dws.len());
    for (k, &dw) in dws.iter().enumerate() {
        let seed = detuning_seed(cfg.seed, k);
        let name = format!("A_{k:02}");
        let mut traces_file = None;
        let a = match (cfg.samples, cfg.traces, dir) {
            (SampleCount::Exact, _, _) => autocorr_exact(&rho, dw, eta)?,
            (SampleCount::Finite(n), TraceFormat::None, _) | (SampleCount::Finite(n), _, None) => {
                sample_autocorr(&rho, dw, eta, n, seed)?
            }
            (SampleCount::Finite(n), fmt, Some(dir)) => {
                let t = sample_traces(&rho, dw, eta, n, seed)?;
                let file = if fmt == TraceFormat::Csv {
                    let f = format!("traces_{k:02}.csv");
                    io::write_traces_csv(dir.join(&f), &t)?;
                    f
                } else {
                    let f = format!("traces_{k:02}.bin");
                    io::write_traces_bin(dir.join(&f), &t)?;
                    f
                };
                traces_file = Some(file);
                estimate_autocorr(&t)?
            }
        };
        if let Some(dir) = dir {
            io::write_autocorr(dir, &name, &a)?;
        }
        datasets.push(Dataset {
            name,
            detuning_mhz: cfg.detunings_mhz[k],
            delta_omega: dw,
            seed,
            traces: traces_file,
        });
        data.push(a);
    }
    if let Some(dir) = dir {
        let manifest = Manifest {
            samples: cfg.samples,
            eta,
            seed: cfg.seed,
            n_bins: rho.dim(),
            datasets,
            truth: Some("rho_true".into()),
            tmf: Some("tmf.csv".into()),
            config: cfg.to_pairs(),
        };
        std::fs::write(dir.join(crate::manifest::FILE_NAME), manifest.render())
            .map_err(|e| CliError::Run(format!("cannot write manifest: {e}")))?;
    }
    Ok((rho, data))
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let tmf = build_tmf(cfg)?;
    let out = cfg.out.as_ref().ok_or_else(|| CliError::Usage("simulate needs --out <dir>".into()))?;
    let (_, data) = generate(cfg, &tmf, Some(out))?;
    println!("wrote {} autocorrelation matrices ({} bins, samples = {}) to {}", data.len(), tmf.len(), cfg.samples, out.display());
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<AutocorrelationMatrix>)> {
    let manifest = Manifest::load(dir).map_err(|e| CliError::Run(e.0))?;
    if manifest.datasets.is_empty() {
        return Err(CliError::Run("manifest lists no datasets".into()));
    }
    let data = manifest
        .datasets
        .iter()
        .map(|d| {
            ctx(io::read_autocorr(dir, &d.name, d.delta_omega, manifest.samples), || {
                format!("{}/{}.csv", dir.display(), d.name)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, data))
}

fn write_outputs(out: &Path, result: &ReconstructionResult, data: &[AutocorrelationMatrix], cfg: &RunConfig) -> Result<()> {
    create_dir(out)?;
    io::write_reconstruction(out, result)?;
    if result.diagnostics.homodyne_only {
        let profile = homodyne_profile(&data[0], cfg.m)?;
        io::write_homodyne_csv(out.join("homodyne.csv"), &data[0].grid, &profile)?;
    }
    Ok(())
}

pub fn reconstruct_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let (_, data) = load_dataset(dir)?;
    let result = reconstruct(&data, &options(cfg))?;
    let out = cfg.out.clone().unwrap_or_else(|| dir.to_path_buf());
    write_outputs(&out, &result, &data, cfg)?;
    print!("{}", io::format_report(&result));
    if result.diagnostics.homodyne_only {
        println!("note: homodyne-only data; Im ρ is unidentifiable and was set to 0");
    }
    Ok(())
}

pub fn analyze(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let (_, data) = load_dataset(dir)?;
    let a = data
        .iter()
        .find(|a| a.delta_omega == 0.0)
        .ok_or_else(|| CliError::Run("no Δω = 0 dataset in the manifest".into()))?;
    let profile = homodyne_profile(a, cfg.m)?;
    let out: PathBuf = cfg.out.clone().unwrap_or_else(|| dir.to_path_buf());
    create_dir(&out)?;
    io::write_homodyne_csv(out.join("homodyne.csv"), &a.grid, &profile)?;
    let peak = profile.amplitude_sq[profile.m];
    println!("m: {}", profile.m);
    println!("peak_amp_sq: {peak}");
    println!("wrote {}", out.join("homodyne.csv").display());
    Ok(())
}

pub fn roundtrip(cfg: &RunConfig) -> Result<()> {
    let tmf = build_tmf(cfg)?;
    let (truth, data) = generate(cfg, &tmf, cfg.out.as_deref())?;
    let result = match reconstruct(&data, &options(cfg)) {
        Ok(r) => r,
        Err(tbtomo::Error::DegenerateInput(m)) => {
            return Err(CliError::Threshold(format!("degenerate trace ({m})")));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(out) = &cfg.out {
        write_outputs(out, &result, &data, cfg)?;
    }
    let fid = fidelity(&result.rho, &tmf)?;
    let max_err = (result.rho.elements() - truth.elements()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    println!("purity: {}", result.purity);
    println!("fidelity: {fid}");
    println!("max_element_error: {max_err}");
    println!("fitted_trace: {}", result.diagnostics.fitted_trace);
    if result.diagnostics.degenerate_trace {
        return Err(CliError::Threshold(format!(
            "degenerate trace (fitted trace {} is not significant)",
            result.diagnostics.fitted_trace
        )));
    }
    let mut failures = Vec::new();
    match cfg.samples {
        SampleCount::Exact => {
            if !(fid >= 1.0 - 1e-9) {
                failures.push(format!("fidelity {fid} < 1 - 1e-9"));
            }
            if !(max_err <= 1e-10) {
                failures.push(format!("max_element_error {max_err} > 1e-10"));
            }
            if !((result.purity - 1.0).abs() <= 1e-10) {
                failures.push(format!("purity {} outside 1 ± 1e-10", result.purity));
            }
        }
        SampleCount::Finite(_) => {
            if !(result.purity >= 0.90) {
                failures.push(format!("purity {} < 0.90", result.purity));
            }
        }
    }
    if failures.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::Threshold(failures.join("; ")))
    }
}

fn condition(phases: &[f64]) -> f64 {
    let (mut p, mut q, mut r) = (0.0, 0.0, 0.0);
    for &ph in phases {
        let (s, c) = ph.sin_cos();
        p += c * c;
        q += c * s;
        r += s * s;
    }
    let disc = ((p - r) * (p - r) + 4.0 * q * q).sqrt();
    let lmin = 0.5 * (p + r - disc);
    if lmin > 0.0 {
        0.5 * (p + r + disc) / lmin
    } else {
        f64::INFINITY
    }
}

const ORACLE_GRID: usize = 200;
const ORACLE_MAX_ELEMENTS: usize = 200;
const ORACLE_MAX_CONDITION: f64 = 10.0;
const FORWARD_TOL: f64 = 1e-12;

/// Compares the library against the brute-force oracles on the configured state.
pub fn oracle(cfg: &RunConfig) -> Result<()> {
    let tmf = build_tmf(cfg)?;
    let rho = density_from_tmf(&tmf)?;
    let dws = cfg.detunings_rad_per_ns();
    let n = tmf.len();
    let exact: Vec<AutocorrelationMatrix> =
        dws.iter().map(|&dw| autocorr_exact(&rho, dw, 1.0)).collect::<tbtomo::Result<_>>()?;

    let mut forward = 0.0f64;
    for (a, &dw) in exact.iter().zip(&dws) {
        for i in 0..n {
            for j in 0..n {
                forward = forward.max((a.values[(i, j)] - direct_forward_check(&tmf, dw, i, j)?).abs());
            }
        }
    }

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let stride = pairs.len().div_ceil(ORACLE_MAX_ELEMENTS).max(1);
    let bound = 2.0 * (2.0 / ORACLE_GRID as f64) / 10.0;
    let (mut compared, mut skipped, mut element) = (0usize, 0usize, 0.0f64);
    for &(i, j) in pairs.iter().step_by(stride) {
        let lag = tmf.grid().lag(i, j);
        if condition(&dws.iter().map(|w| w * lag).collect::<Vec<_>>()) > ORACLE_MAX_CONDITION {
            skipped += 1;
            continue;
        }
        let a: Vec<f64> = exact.iter().map(|m| m.values[(i, j)]).collect();
        let (x, y) = solve_element(&a, &dws, lag)?;
        let (bx, by) = brute_force_element_fit(&a, &dws, lag, ORACLE_GRID)?;
        element = element.max((x - bx).abs()).max((y - by).abs());
        compared += 1;
    }
    println!("forward_max_abs_diff: {forward} (tolerance {FORWARD_TOL})");
    println!("element_fits_compared: {compared} (skipped {skipped} ill-conditioned)");
    println!("element_max_abs_diff: {element} (bound {bound})");
    let mut failures = Vec::new();
    if !(forward <= FORWARD_TOL) {
        failures.push(format!("forward model differs by {forward}"));
    }
    if !(element <= bound) {
        failures.push(format!("element fit differs from brute force by {element}"));
    }
    if failures.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::Threshold(failures.join("; ")))
    }
}
