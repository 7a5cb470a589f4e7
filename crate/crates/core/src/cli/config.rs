//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! ```text
//! # comment
//! [model]
//! sigma = 1
//! batch = 10
//! [compute]
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Raw parsed file: `section.key → (value, line)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {n}: unterminated section header")))?;
                section = name.trim().to_ascii_lowercase();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {n}: expected key = value")))?;
            let key = k.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::Config(format!("line {n}: empty key")));
            }
            let full = if section.is_empty() { key } else { format!("{section}.{key}") };
            if entries.insert(full.clone(), (v.trim().to_string(), n)).is_some() {
                return Err(Error::Config(format!("line {n}: duplicate key {full}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn raw(&self, key: &str) -> Option<&(String, usize)> {
        self.entries.get(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, n)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {n}: cannot parse {key} = {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, n)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Config(format!("line {n}: cannot parse {s:?} in {key}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.raw(key).map(|r| r.1)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Schedule families a config can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Constant,
    IidGrid,
    Uniform,
    Cyclic,
    Markov,
    MarkovTwoState,
}

impl Variant {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::IidGrid => "iid",
            Self::Uniform => "uniform",
            Self::Cyclic => "cyclic",
            Self::Markov => "markov",
            Self::MarkovTwoState => "markov_two_state",
        }
    }
}

impl FromStr for Variant {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "constant" => Self::Constant,
            "iid" | "iid_grid" => Self::IidGrid,
            "uniform" | "iid_uniform" => Self::Uniform,
            "cyclic" => Self::Cyclic,
            "markov" => Self::Markov,
            "markov_two_state" | "two_state" => Self::MarkovTwoState,
            _ => return Err(()),
        })
    }
}

/// How an α is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Kernel,
    RegenMc,
    LinearSystem,
    Simulation,
}

impl Route {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Kernel => "kernel",
            Self::RegenMc => "regen_mc",
            Self::LinearSystem => "linear_system",
            Self::Simulation => "simulation",
        }
    }
}

impl FromStr for Route {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "kernel" => Self::Kernel,
            "regen_mc" => Self::RegenMc,
            "linear_system" => Self::LinearSystem,
            "simulation" => Self::Simulation,
            _ => return Err(()),
        })
    }
}

/// Moment backend for kernel routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Quadrature,
    MonteCarlo,
}

impl FromStr for Backend {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "quadrature" => Ok(Self::Quadrature),
            "monte_carlo" | "mc" => Ok(Self::MonteCarlo),
            _ => Err(()),
        }
    }
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    EtaHat,
    Range,
    K,
    P,
    Batch,
    Dim,
}

impl FromStr for SweepParam {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "eta_hat" => Self::EtaHat,
            "r" | "range" => Self::Range,
            "k" => Self::K,
            "p" => Self::P,
            "b" | "batch" => Self::Batch,
            "d" | "dim" => Self::Dim,
            _ => return Err(()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub sigma: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub batch: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleBlock {
    pub variants: Vec<Variant>,
    pub eta_hat: f64,
    pub range: f64,
    pub k: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComputeBlock {
    pub n_samples: usize,
    pub n_paths: usize,
    pub n_runs: usize,
    pub n_iters: usize,
    pub tail_window: usize,
    pub seed: u64,
    pub tol: f64,
    pub workers: Option<usize>,
    pub routes: Vec<Route>,
    pub backend: Backend,
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputBlock {
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub binary: Option<PathBuf>,
    pub ensemble_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub schedule: ScheduleBlock,
    pub sweep: Option<(SweepParam, Vec<f64>)>,
    pub compute: ComputeBlock,
    pub output: OutputBlock,
    /// ensemble file read by `estimate`
    pub input: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "model.sigma",
    "model.sigma_x",
    "model.sigma_y",
    "model.batch",
    "model.dim",
    "schedule.variant",
    "schedule.eta_hat",
    "schedule.range",
    "schedule.k",
    "schedule.p",
    "sweep.parameter",
    "sweep.values",
    "compute.n_samples",
    "compute.n_paths",
    "compute.n_runs",
    "compute.n_iters",
    "compute.tail_window",
    "compute.seed",
    "compute.tol",
    "compute.workers",
    "compute.routes",
    "compute.backend",
    "compute.timing",
    "output.csv",
    "output.svg",
    "output.binary",
    "output.ensemble_csv",
    "input.ensemble",
];

fn parse_enum<T: FromStr>(raw: &RawConfig, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        let n = raw.line_of(key).unwrap_or(0);
        Error::Config(format!("line {n}: unknown value {value:?} for {key}"))
    })
}

fn enum_list<T: FromStr>(raw: &RawConfig, key: &str, default: &str) -> Result<Vec<T>> {
    let list: Vec<String> = raw.get_list(key)?.unwrap_or_else(|| vec![default.to_string()]);
    list.iter().map(|v| parse_enum(raw, key, v)).collect()
}

impl ExperimentConfig {
    /// Builds the typed config. `seed_override` satisfies the mandatory seed.
    pub fn from_raw(raw: &RawConfig, seed_override: Option<u64>) -> Result<Self> {
        for key in raw.keys() {
            if !KNOWN_KEYS.contains(&key) {
                let n = raw.line_of(key).unwrap_or(0);
                return Err(Error::Config(format!("line {n}: unknown key {key}")));
            }
        }
        let seed = match (seed_override, raw.get::<u64>("compute.seed")?) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => return Err(Error::Config("missing mandatory key compute.seed".into())),
        };
        let model = ModelBlock {
            sigma: raw.get_or("model.sigma", 1.0)?,
            sigma_x: raw.get_or("model.sigma_x", 1.0)?,
            sigma_y: raw.get_or("model.sigma_y", 1.0)?,
            batch: raw.get_or("model.batch", 10)?,
            dim: raw.get_or("model.dim", 10)?,
        };
        let schedule = ScheduleBlock {
            variants: enum_list(raw, "schedule.variant", "constant")?,
            eta_hat: raw.get_or("schedule.eta_hat", 0.1)?,
            range: raw.get_or("schedule.range", 0.0)?,
            k: raw.get_or("schedule.k", 2)?,
            p: raw.get_or("schedule.p", 1.0)?,
        };
        let sweep = match raw.get::<String>("sweep.parameter")? {
            None => {
                if raw.line_of("sweep.values").is_some() {
                    return Err(Error::Config("sweep.values given without sweep.parameter".into()));
                }
                None
            }
            Some(name) => {
                let param = parse_enum(raw, "sweep.parameter", &name.to_ascii_lowercase())?;
                let values: Vec<f64> = raw
                    .get_list("sweep.values")?
                    .ok_or_else(|| Error::Config("sweep.parameter needs sweep.values".into()))?;
                if values.is_empty() {
                    return Err(Error::Config("sweep.values is empty".into()));
                }
                Some((param, values))
            }
        };
        let compute = ComputeBlock {
            n_samples: raw.get_or("compute.n_samples", 1_000_000)?,
            n_paths: raw.get_or("compute.n_paths", 100_000)?,
            n_runs: raw.get_or("compute.n_runs", 2000)?,
            n_iters: raw.get_or("compute.n_iters", 1000)?,
            tail_window: raw.get_or("compute.tail_window", 500)?,
            seed,
            tol: raw.get_or("compute.tol", crate::tailindex::tolerance())?,
            workers: raw.get("compute.workers")?,
            routes: enum_list(raw, "compute.routes", "kernel")?,
            backend: match raw.get::<String>("compute.backend")? {
                None => Backend::Quadrature,
                Some(v) => parse_enum(raw, "compute.backend", &v)?,
            },
            timing: raw.get_or("compute.timing", false)?,
        };
        let output = OutputBlock {
            csv: raw.get("output.csv")?,
            svg: raw.get("output.svg")?,
            binary: raw.get("output.binary")?,
            ensemble_csv: raw.get("output.ensemble_csv")?,
        };
        Ok(Self {
            model,
            schedule,
            sweep,
            compute,
            output,
            input: raw.get("input.ensemble")?,
        })
    }

    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self> {
        Self::from_raw(&RawConfig::parse(text)?, seed_override)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        Self::from_raw(&RawConfig::load(path)?, seed_override)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_lists() {
        let cfg = ExperimentConfig::parse(
            "[model]\nsigma = 2 # scale\nbatch=5\n[schedule]\nvariant = constant, cyclic\n\
             [sweep]\nparameter = eta_hat\nvalues = 0.4, 0.5\n[compute]\nseed = 3\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.model.sigma, 2.0);
        assert_eq!(cfg.model.batch, 5);
        assert_eq!(cfg.schedule.variants, vec![Variant::Constant, Variant::Cyclic]);
        assert_eq!(cfg.sweep, Some((SweepParam::EtaHat, vec![0.4, 0.5])));
        assert_eq!(cfg.compute.seed, 3);
    }

    #[test]
    fn missing_seed_is_an_error() {
        let err = ExperimentConfig::parse("[model]\nsigma = 1\n", None).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("seed")));
        assert_eq!(ExperimentConfig::parse("", Some(9)).unwrap().compute.seed, 9);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("[compute]\nseed = 1\n\n[model]\nbatch = ten\n", None).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.starts_with("line 5")), "{err}");
        let err = RawConfig::parse("[model]\nnonsense\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.starts_with("line 2")));
        let err = ExperimentConfig::parse("[compute]\nseed = 1\nspeed = 2\n", None).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.starts_with("line 3")));
    }
}
