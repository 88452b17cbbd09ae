//! `manifest.txt`: what a dataset directory contains and how it was made.

use std::fmt::Write as _;
use std::path::Path;

use tbtomo::SampleCount;

use crate::config::{parse_pairs, ConfigError};

pub const FILE_NAME: &str = "manifest.txt";
const FORMAT: &str = "tbtomo-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Base name of the matrix file, without `.csv`.
    pub name: String,
    pub detuning_mhz: f64,
    pub delta_omega: f64,
    pub seed: u64,
    pub traces: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub samples: SampleCount,
    pub eta: f64,
    pub seed: u64,
    pub n_bins: usize,
    pub datasets: Vec<Dataset>,
    /// Density-pair base name of the generating state.
    pub truth: Option<String>,
    pub tmf: Option<String>,
    pub config: Vec<(String, String)>,
}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(format!("manifest: {}", msg.into()))
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format = {FORMAT}");
        let _ = writeln!(s, "version = {VERSION}");
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "eta = {}", self.eta);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "n_bins = {}", self.n_bins);
        if let Some(t) = &self.truth {
            let _ = writeln!(s, "truth = {t}");
        }
        if let Some(t) = &self.tmf {
            let _ = writeln!(s, "tmf = {t}");
        }
        let _ = writeln!(s, "datasets = {}", self.datasets.len());
        for (k, d) in self.datasets.iter().enumerate() {
            let _ = writeln!(s, "dataset.{k}.name = {}", d.name);
            let _ = writeln!(s, "dataset.{k}.detuning_mhz = {}", d.detuning_mhz);
            let _ = writeln!(s, "dataset.{k}.delta_omega_rad_per_ns = {}", d.delta_omega);
            let _ = writeln!(s, "dataset.{k}.seed = {}", d.seed);
            if let Some(t) = &d.traces {
                let _ = writeln!(s, "dataset.{k}.traces = {t}");
            }
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let map = parse_pairs(text)?;
        let get = |k: &str| map.get(k).map(String::as_str).ok_or_else(|| bad(format!("missing {k}")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, ConfigError> {
            v.parse().map_err(|_| bad(format!("{k}: cannot parse {v:?}")))
        }
        if get("format")? != FORMAT {
            return Err(bad("not a tbtomo dataset"));
        }
        let version: u32 = num("version", get("version")?)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let samples: SampleCount = get("samples")?.parse().map_err(|e: tbtomo::Error| bad(e.to_string()))?;
        let count: usize = num("datasets", get("datasets")?)?;
        let mut datasets = Vec::with_capacity(count);
        for k in 0..count {
            let key = |f: &str| format!("dataset.{k}.{f}");
            datasets.push(Dataset {
                name: get(&key("name"))?.to_string(),
                detuning_mhz: num(&key("detuning_mhz"), get(&key("detuning_mhz"))?)?,
                delta_omega: num(&key("delta_omega_rad_per_ns"), get(&key("delta_omega_rad_per_ns"))?)?,
                seed: num(&key("seed"), get(&key("seed"))?)?,
                traces: map.get(&key("traces")).cloned(),
            });
        }
        let known = |k: &str| {
            matches!(k, "format" | "version" | "samples" | "eta" | "seed" | "n_bins" | "truth" | "tmf" | "datasets")
                || k.starts_with("config.")
                || k.strip_prefix("dataset.")
                    .and_then(|r| r.split_once('.'))
                    .is_some_and(|(i, _)| i.parse::<usize>().is_ok_and(|i| i < count))
        };
        if let Some(k) = map.keys().find(|k| !known(k)) {
            return Err(bad(format!("unknown key {k}")));
        }
        Ok(Manifest {
            samples,
            eta: num("eta", get("eta")?)?,
            seed: num("seed", get("seed")?)?,
            n_bins: num("n_bins", get("n_bins")?)?,
            datasets,
            truth: map.get("truth").cloned(),
            tmf: map.get("tmf").cloned(),
            config: map
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v.clone())))
                .collect(),
        })
    }

    pub fn load(dir: &Path) -> Result<Self, ConfigError> {
        let path = dir.join(FILE_NAME);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Manifest::parse(&text)
    }
}
