//! Run configuration: a flat `key = value` file, `#` starts a comment.
//!
//! | key                  | default                          |
//! |----------------------|----------------------------------|
//! | `tmf.model`          | required: `rabi`, `tabulated`, `spectrum` |
//! | `tmf.omega_c_mhz`    | 31.5 (rabi; always ×2π)          |
//! | `tmf.gamma13`        | 0.003 1/ns (rabi)                |
//! | `tmf.gamma12`        | 0.003 1/ns (rabi)                |
//! | `tmf.path`           | required for tabulated/spectrum  |
//! | `grid.t_start_ns`    | 0                                |
//! | `grid.dt_ns`         | 10                               |
//! | `grid.n_bins`        | 64                               |
//! | `detunings_mhz`      | -10,-5,0,3,8,13,18,23            |
//! | `angular_convention` | `2pi`                            |
//! | `eta`                | 1                                |
//! | `samples`            | `exact`                          |
//! | `seed`               | 0                                |
//! | `out`                | none                             |
//! | `psd`                | false                            |
//! | `psd_tol`            | 0.05                             |
//! | `phase_threshold`    | 0.05                             |
//! | `m`                  | `auto`                           |
//! | `traces`             | `none` (`csv`, `bin`)            |
//! | `label`              | none; free text copied into the manifest (e.g. OD, Ω_p) |

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tbtomo::{mhz_to_rad_per_ns, RowSelection, SampleCount};

pub const DEFAULT_DETUNINGS_MHZ: [f64; 8] = [-10.0, -5.0, 0.0, 3.0, 8.0, 13.0, 18.0, 23.0];

const KEYS: [&str; 20] = [
    "tmf.model",
    "tmf.omega_c_mhz",
    "tmf.gamma13",
    "tmf.gamma12",
    "tmf.path",
    "grid.t_start_ns",
    "grid.dt_ns",
    "grid.n_bins",
    "detunings_mhz",
    "angular_convention",
    "eta",
    "samples",
    "seed",
    "out",
    "psd",
    "psd_tol",
    "phase_threshold",
    "m",
    "traces",
    "label",
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// How detuning values given in MHz become rad/ns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngularConvention {
    /// Values are ordinary frequencies: `Δω = 2π·ν`.
    TwoPi,
    /// Values are already angular (10⁶ rad/s).
    Direct,
}

impl AngularConvention {
    pub fn to_rad_per_ns(self, mhz: f64) -> f64 {
        match self {
            AngularConvention::TwoPi => mhz_to_rad_per_ns(mhz),
            AngularConvention::Direct => mhz * 1e-3,
        }
    }
}

impl FromStr for AngularConvention {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "2pi" => Ok(AngularConvention::TwoPi),
            "direct" => Ok(AngularConvention::Direct),
            _ => err(format!("angular convention must be 2pi or direct, got {s:?}")),
        }
    }
}

impl fmt::Display for AngularConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AngularConvention::TwoPi => "2pi",
            AngularConvention::Direct => "direct",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    None,
    Csv,
    Bin,
}

impl FromStr for TraceFormat {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "none" => Ok(TraceFormat::None),
            "csv" => Ok(TraceFormat::Csv),
            "bin" => Ok(TraceFormat::Bin),
            _ => err(format!("traces must be none, csv or bin, got {s:?}")),
        }
    }
}

impl fmt::Display for TraceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceFormat::None => "none",
            TraceFormat::Csv => "csv",
            TraceFormat::Bin => "bin",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TmfSpec {
    Rabi { omega_c_mhz: f64, gamma13: f64, gamma12: f64 },
    Tabulated { path: PathBuf },
    Spectrum { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub t_start_ns: f64,
    pub dt_ns: f64,
    pub n_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tmf: Option<TmfSpec>,
    pub grid: GridSpec,
    /// Set when any `grid.*` key was given explicitly.
    pub grid_explicit: bool,
    pub detunings_mhz: Vec<f64>,
    pub angular_convention: AngularConvention,
    pub eta: f64,
    pub samples: SampleCount,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub psd: bool,
    pub psd_tol: f64,
    pub phase_threshold: f64,
    pub m: RowSelection,
    pub traces: TraceFormat,
    pub label: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tmf: None,
            grid: GridSpec { t_start_ns: 0.0, dt_ns: 10.0, n_bins: 64 },
            grid_explicit: false,
            detunings_mhz: DEFAULT_DETUNINGS_MHZ.to_vec(),
            angular_convention: AngularConvention::TwoPi,
            eta: 1.0,
            samples: SampleCount::Exact,
            seed: 0,
            out: None,
            psd: false,
            psd_tol: tbtomo::state::DEFAULT_PSD_TOL,
            phase_threshold: tbtomo::reconstruct::DEFAULT_PHASE_THRESHOLD,
            m: RowSelection::Auto,
            traces: TraceFormat::None,
            label: None,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().or_else(|_| err(format!("{key}: cannot parse {v:?}")))
}

pub fn parse_detunings(v: &str) -> Result<Vec<f64>, ConfigError> {
    let list: Vec<f64> = v
        .split(',')
        .map(|s| num::<f64>("detunings", s.trim()))
        .collect::<Result<_, _>>()?;
    if list.is_empty() || list.iter().any(|x| !x.is_finite()) {
        return err("detunings must be a non-empty list of finite numbers");
    }
    Ok(list)
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => err(format!("{key}: expected true or false, got {v:?}")),
    }
}

/// Splits `key = value` lines; rejects duplicates and lines without `=`.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return err(format!("line {}: expected key = value", n + 1));
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if map.insert(k.clone(), v).is_some() {
            return err(format!("line {}: duplicate key {k}", n + 1));
        }
    }
    Ok(map)
}

impl RunConfig {
    /// Parses a config file body; relative `tmf.path` values are resolved
    /// against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let map = parse_pairs(text)?;
        if let Some(bad) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return err(format!("unknown config key {bad}"));
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let mut c = RunConfig::default();

        let rabi_keys = ["tmf.omega_c_mhz", "tmf.gamma13", "tmf.gamma12"];
        c.tmf = match get("tmf.model") {
            None => {
                if let Some(k) = rabi_keys.iter().chain(["tmf.path"].iter()).find(|k| map.contains_key(**k)) {
                    return err(format!("{k} given without tmf.model"));
                }
                None
            }
            Some("rabi") => {
                if map.contains_key("tmf.path") {
                    return err("tmf.path is not used by the rabi model");
                }
                let f = |k: &str, d: f64| get(k).map_or(Ok(d), |v| num(k, v));
                Some(TmfSpec::Rabi {
                    omega_c_mhz: f("tmf.omega_c_mhz", 31.5)?,
                    gamma13: f("tmf.gamma13", 0.003)?,
                    gamma12: f("tmf.gamma12", 0.003)?,
                })
            }
            Some(model @ ("tabulated" | "spectrum")) => {
                if let Some(k) = rabi_keys.iter().find(|k| map.contains_key(**k)) {
                    return err(format!("{k} is only used by the rabi model"));
                }
                let Some(p) = get("tmf.path") else {
                    return err(format!("tmf.model = {model} needs tmf.path"));
                };
                let path = base.join(p);
                Some(if model == "tabulated" {
                    TmfSpec::Tabulated { path }
                } else {
                    TmfSpec::Spectrum { path }
                })
            }
            Some(other) => return err(format!("unknown tmf.model {other:?}")),
        };

        if let Some(v) = get("grid.t_start_ns") {
            c.grid.t_start_ns = num("grid.t_start_ns", v)?;
            c.grid_explicit = true;
        }
        if let Some(v) = get("grid.dt_ns") {
            c.grid.dt_ns = num("grid.dt_ns", v)?;
            c.grid_explicit = true;
        }
        if let Some(v) = get("grid.n_bins") {
            c.grid.n_bins = num("grid.n_bins", v)?;
            c.grid_explicit = true;
        }
        if let Some(v) = get("detunings_mhz") {
            c.detunings_mhz = parse_detunings(v)?;
        }
        if let Some(v) = get("angular_convention") {
            c.angular_convention = v.parse()?;
        }
        if let Some(v) = get("eta") {
            c.eta = num("eta", v)?;
        }
        if let Some(v) = get("samples") {
            c.samples = v.parse().map_err(|e: tbtomo::Error| ConfigError(format!("samples: {e}")))?;
        }
        if let Some(v) = get("seed") {
            c.seed = num("seed", v)?;
        }
        if let Some(v) = get("out") {
            c.out = Some(base.join(v));
        }
        if let Some(v) = get("psd") {
            c.psd = parse_bool("psd", v)?;
        }
        if let Some(v) = get("psd_tol") {
            c.psd_tol = num("psd_tol", v)?;
        }
        if let Some(v) = get("phase_threshold") {
            c.phase_threshold = num("phase_threshold", v)?;
        }
        if let Some(v) = get("m") {
            c.m = v.parse().map_err(|e: tbtomo::Error| ConfigError(format!("m: {e}")))?;
        }
        if let Some(v) = get("traces") {
            c.traces = v.parse()?;
        }
        c.label = get("label").map(str::to_owned);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn detunings_rad_per_ns(&self) -> Vec<f64> {
        self.detunings_mhz.iter().map(|&v| self.angular_convention.to_rad_per_ns(v)).collect()
    }

    /// Canonical `key = value` listing of every setting.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        match &self.tmf {
            Some(TmfSpec::Rabi { omega_c_mhz, gamma13, gamma12 }) => {
                put("tmf.model", "rabi".into());
                put("tmf.omega_c_mhz", omega_c_mhz.to_string());
                put("tmf.gamma13", gamma13.to_string());
                put("tmf.gamma12", gamma12.to_string());
            }
            Some(TmfSpec::Tabulated { path }) => {
                put("tmf.model", "tabulated".into());
                put("tmf.path", path.display().to_string());
            }
            Some(TmfSpec::Spectrum { path }) => {
                put("tmf.model", "spectrum".into());
                put("tmf.path", path.display().to_string());
            }
            None => {}
        }
        put("grid.t_start_ns", self.grid.t_start_ns.to_string());
        put("grid.dt_ns", self.grid.dt_ns.to_string());
        put("grid.n_bins", self.grid.n_bins.to_string());
        put(
            "detunings_mhz",
            self.detunings_mhz.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
        put("angular_convention", self.angular_convention.to_string());
        put("eta", self.eta.to_string());
        put("samples", self.samples.to_string());
        put("seed", self.seed.to_string());
        put("psd", self.psd.to_string());
        put("psd_tol", self.psd_tol.to_string());
        put("phase_threshold", self.phase_threshold.to_string());
        put("m", self.m.to_string());
        put("traces", self.traces.to_string());
        if let Some(l) = &self.label {
            put("label", l.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("tmf.model = rabi\n# comment\nseed = 9\nsamples = 5e5\n", Path::new("/x")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.samples, SampleCount::Finite(500_000));
        assert_eq!(c.detunings_mhz, DEFAULT_DETUNINGS_MHZ.to_vec());
        assert!(matches!(c.tmf, Some(TmfSpec::Rabi { omega_c_mhz, .. }) if omega_c_mhz == 31.5));
        assert!(!c.grid_explicit);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let e = RunConfig::parse("tmf.model = rabi\nsed = 1\n", Path::new(".")).unwrap_err();
        assert!(e.0.contains("unknown config key sed"));
        assert!(RunConfig::parse("seed = 1\nseed = 2\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("just words\n", Path::new(".")).is_err());
    }

    #[test]
    fn model_specific_keys_are_checked() {
        assert!(RunConfig::parse("tmf.model = tabulated\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("tmf.model = rabi\ntmf.path = a.csv\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("tmf.model = tabulated\ntmf.path = a.csv\ntmf.gamma13 = 1\n", Path::new(".")).is_err());
        assert!(RunConfig::parse("tmf.gamma13 = 1\n", Path::new(".")).is_err());
        let c = RunConfig::parse("tmf.model = spectrum\ntmf.path = s.csv\n", Path::new("/d")).unwrap();
        assert_eq!(c.tmf, Some(TmfSpec::Spectrum { path: PathBuf::from("/d/s.csv") }));
    }

    #[test]
    fn angular_conventions() {
        assert!((AngularConvention::TwoPi.to_rad_per_ns(1.0) - 2.0 * std::f64::consts::PI * 1e-3).abs() < 1e-18);
        assert_eq!(AngularConvention::Direct.to_rad_per_ns(5.0), 5e-3);
        assert!("radians".parse::<AngularConvention>().is_err());
    }

    #[test]
    fn pairs_reparse_to_the_same_config() {
        let c = RunConfig::parse(
            "tmf.model = rabi\ntmf.omega_c_mhz = 18\ngrid.n_bins = 32\ndetunings_mhz = 0, 3.5\npsd = on\nm = 4\ntraces = bin\nlabel = OD 10\n",
            Path::new("/"),
        )
        .unwrap();
        let text: String = c.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        assert_eq!(RunConfig::parse(&text, Path::new("/")).unwrap(), c);
    }
}
