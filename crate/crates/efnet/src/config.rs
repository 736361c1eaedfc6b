//! Experiment configuration: a flat `key = value` text format grouped by
//! `[section]` headers, plus dotted `section.key=value` command-line
//! overrides.
//!
//! Every run resolves to a canonical list of `(dotted key, value)` pairs
//! covering all knobs and seeds. Output files echo exactly this list in
//! their comment header, and the same list parses back into an identical
//! configuration, which is what makes runs reproducible from their own
//! output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::coarse::CoarseConfig;
use crate::epidemic::EpidemicParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Temporal,
    Portrait,
    Continuation,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Temporal => "temporal",
            Mode::Portrait => "portrait",
            Mode::Continuation => "continuation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSection {
    pub n_nodes: usize,
    pub degree: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSection {
    pub p_si_sweep: Vec<f64>,
    pub initial_infected: Vec<f64>,
    pub t_max: usize,
    pub run_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortraitSection {
    pub anchor_s: f64,
    pub anchor_i: f64,
    pub n_trajectories: usize,
    pub t_max: usize,
    pub run_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationSection {
    pub p_start: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub ds: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub fd_step: f64,
    pub n_points: usize,
    pub damping: f64,
    /// Forward-simulation steps used to produce the seed fixed-point
    /// guess at `p_start`.
    pub warmup_steps: usize,
    pub warmup_i0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub output: PathBuf,
    pub network: NetworkSection,
    pub epidemic: EpidemicParams,
    pub coarse: CoarseConfig,
    pub temporal: TemporalSection,
    pub portrait: PortraitSection,
    pub continuation: ContinuationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Temporal,
            output: PathBuf::from("efnet_out.csv"),
            network: NetworkSection { n_nodes: 20_000, degree: 4, seed: 42 },
            epidemic: EpidemicParams { p_si: 0.17, c1: 0.1, c2: 0.5, p_rs: 0.2 },
            coarse: CoarseConfig::default(),
            temporal: TemporalSection {
                p_si_sweep: vec![0.5, 0.25, 0.17, 0.14, 0.13, 0.10],
                initial_infected: vec![0.5, 0.05],
                t_max: 2000,
                run_seed: 1,
            },
            portrait: PortraitSection {
                anchor_s: 0.45,
                anchor_i: 0.29,
                n_trajectories: 10,
                t_max: 60,
                run_seed: 1,
            },
            continuation: ContinuationSection {
                p_start: 0.25,
                p_min: 0.10,
                p_max: 0.25,
                ds: 0.005,
                newton_tol: 1e-3,
                newton_max_iter: 12,
                fd_step: 5e-3,
                n_points: 80,
                damping: 1.0,
                warmup_steps: 500,
                warmup_i0: 0.5,
            },
        }
    }
}

fn format_f64_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Loads a configuration file and applies `section.key=value`
    /// overrides on top.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut pairs = parse_sections(text)?;
        for (line, ov) in overrides.iter().enumerate() {
            let (key, value) = ov.split_once('=').ok_or(ConfigError::Syntax {
                line,
                message: format!("override `{ov}` is not of the form key=value"),
            })?;
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        Self::from_pairs(&pairs)
    }

    /// Builds a configuration from dotted key/value pairs, starting from
    /// the documented defaults.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (key, value) in pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        fn list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
            value
                .split(',')
                .map(|v| num::<f64>(key, v.trim()))
                .collect()
        }

        match key {
            "mode" => {
                self.mode = match value {
                    "temporal" => Mode::Temporal,
                    "portrait" => Mode::Portrait,
                    "continuation" => Mode::Continuation,
                    other => {
                        return Err(ConfigError::InvalidValue {
                            key: key.into(),
                            message: format!(
                                "`{other}` is not one of temporal|portrait|continuation"
                            ),
                        })
                    }
                }
            }
            "output" => self.output = PathBuf::from(value),
            "network.n_nodes" => self.network.n_nodes = num(key, value)?,
            "network.degree" => self.network.degree = num(key, value)?,
            "network.seed" => self.network.seed = num(key, value)?,
            "epidemic.p_si" => self.epidemic.p_si = num(key, value)?,
            "epidemic.c1" => self.epidemic.c1 = num(key, value)?,
            "epidemic.c2" => self.epidemic.c2 = num(key, value)?,
            "epidemic.p_rs" => self.epidemic.p_rs = num(key, value)?,
            "coarse.horizon_t" => self.coarse.horizon_t = num(key, value)?,
            "coarse.ensemble" => self.coarse.ensemble = num(key, value)?,
            "coarse.base_seed" => self.coarse.base_seed = num(key, value)?,
            "sa.temp_init" => self.coarse.sa.temp_init = num(key, value)?,
            "sa.cooling" => self.coarse.sa.cooling = num(key, value)?,
            "sa.sweeps_max" => self.coarse.sa.sweeps_max = num(key, value)?,
            "sa.moves_per_sweep" => self.coarse.sa.moves_per_sweep = num(key, value)?,
            "sa.tol" => self.coarse.sa.tol = num(key, value)?,
            "sa.stall_sweeps" => self.coarse.sa.stall_sweeps = num(key, value)?,
            "heal.dt" => self.coarse.heal.dt = num(key, value)?,
            "heal.max_rounds" => self.coarse.heal.max_rounds = num(key, value)?,
            "heal.moment_tol" => self.coarse.heal.moment_tol = num(key, value)?,
            "temporal.p_si_sweep" => self.temporal.p_si_sweep = list(key, value)?,
            "temporal.initial_infected" => self.temporal.initial_infected = list(key, value)?,
            "temporal.t_max" => self.temporal.t_max = num(key, value)?,
            "temporal.run_seed" => self.temporal.run_seed = num(key, value)?,
            "portrait.anchor_s" => self.portrait.anchor_s = num(key, value)?,
            "portrait.anchor_i" => self.portrait.anchor_i = num(key, value)?,
            "portrait.n_trajectories" => self.portrait.n_trajectories = num(key, value)?,
            "portrait.t_max" => self.portrait.t_max = num(key, value)?,
            "portrait.run_seed" => self.portrait.run_seed = num(key, value)?,
            "continuation.p_start" => self.continuation.p_start = num(key, value)?,
            "continuation.p_min" => self.continuation.p_min = num(key, value)?,
            "continuation.p_max" => self.continuation.p_max = num(key, value)?,
            "continuation.ds" => self.continuation.ds = num(key, value)?,
            "continuation.newton_tol" => self.continuation.newton_tol = num(key, value)?,
            "continuation.newton_max_iter" => {
                self.continuation.newton_max_iter = num(key, value)?
            }
            "continuation.fd_step" => self.continuation.fd_step = num(key, value)?,
            "continuation.n_points" => self.continuation.n_points = num(key, value)?,
            "continuation.damping" => self.continuation.damping = num(key, value)?,
            "continuation.warmup_steps" => self.continuation.warmup_steps = num(key, value)?,
            "continuation.warmup_i0" => self.continuation.warmup_i0 = num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.epidemic.validate().map_err(|e| ConfigError::InvalidValue {
            key: "epidemic".into(),
            message: e.to_string(),
        })?;
        self.coarse.sa.validate().map_err(|e| ConfigError::InvalidValue {
            key: "sa".into(),
            message: e.to_string(),
        })?;
        if self.coarse.horizon_t == 0 || self.coarse.ensemble == 0 {
            return Err(ConfigError::InvalidValue {
                key: "coarse".into(),
                message: "horizon_t and ensemble must be positive".into(),
            });
        }
        if self.network.n_nodes == 0 || self.network.degree == 0 {
            return Err(ConfigError::InvalidValue {
                key: "network".into(),
                message: "n_nodes and degree must be positive".into(),
            });
        }
        Ok(())
    }

    /// The full resolved configuration as canonical dotted pairs, in a
    /// stable order. Feeding these back through [`from_pairs`]
    /// reconstructs an identical configuration.
    pub fn resolved_pairs(&self) -> Vec<(String, String)> {
        let c = &self.continuation;
        vec![
            ("mode".into(), self.mode.to_string()),
            ("output".into(), self.output.display().to_string()),
            ("network.n_nodes".into(), self.network.n_nodes.to_string()),
            ("network.degree".into(), self.network.degree.to_string()),
            ("network.seed".into(), self.network.seed.to_string()),
            ("epidemic.p_si".into(), self.epidemic.p_si.to_string()),
            ("epidemic.c1".into(), self.epidemic.c1.to_string()),
            ("epidemic.c2".into(), self.epidemic.c2.to_string()),
            ("epidemic.p_rs".into(), self.epidemic.p_rs.to_string()),
            ("coarse.horizon_t".into(), self.coarse.horizon_t.to_string()),
            ("coarse.ensemble".into(), self.coarse.ensemble.to_string()),
            ("coarse.base_seed".into(), self.coarse.base_seed.to_string()),
            ("sa.temp_init".into(), self.coarse.sa.temp_init.to_string()),
            ("sa.cooling".into(), self.coarse.sa.cooling.to_string()),
            ("sa.sweeps_max".into(), self.coarse.sa.sweeps_max.to_string()),
            ("sa.moves_per_sweep".into(), self.coarse.sa.moves_per_sweep.to_string()),
            ("sa.tol".into(), self.coarse.sa.tol.to_string()),
            ("sa.stall_sweeps".into(), self.coarse.sa.stall_sweeps.to_string()),
            ("heal.dt".into(), self.coarse.heal.dt.to_string()),
            ("heal.max_rounds".into(), self.coarse.heal.max_rounds.to_string()),
            ("heal.moment_tol".into(), self.coarse.heal.moment_tol.to_string()),
            ("temporal.p_si_sweep".into(), format_f64_list(&self.temporal.p_si_sweep)),
            (
                "temporal.initial_infected".into(),
                format_f64_list(&self.temporal.initial_infected),
            ),
            ("temporal.t_max".into(), self.temporal.t_max.to_string()),
            ("temporal.run_seed".into(), self.temporal.run_seed.to_string()),
            ("portrait.anchor_s".into(), self.portrait.anchor_s.to_string()),
            ("portrait.anchor_i".into(), self.portrait.anchor_i.to_string()),
            ("portrait.n_trajectories".into(), self.portrait.n_trajectories.to_string()),
            ("portrait.t_max".into(), self.portrait.t_max.to_string()),
            ("portrait.run_seed".into(), self.portrait.run_seed.to_string()),
            ("continuation.p_start".into(), c.p_start.to_string()),
            ("continuation.p_min".into(), c.p_min.to_string()),
            ("continuation.p_max".into(), c.p_max.to_string()),
            ("continuation.ds".into(), c.ds.to_string()),
            ("continuation.newton_tol".into(), c.newton_tol.to_string()),
            ("continuation.newton_max_iter".into(), c.newton_max_iter.to_string()),
            ("continuation.fd_step".into(), c.fd_step.to_string()),
            ("continuation.n_points".into(), c.n_points.to_string()),
            ("continuation.damping".into(), c.damping.to_string()),
            ("continuation.warmup_steps".into(), c.warmup_steps.to_string()),
            ("continuation.warmup_i0".into(), c.warmup_i0.to_string()),
        ]
    }
}

/// Parses the sectioned file format into dotted pairs. Top-level keys
/// (before any section header) stay undotted.
fn parse_sections(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut pairs = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(ConfigError::Syntax {
                line: idx + 1,
                message: format!("unterminated section header `{raw}`"),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
            line: idx + 1,
            message: format!("expected `key = value`, got `{raw}`"),
        })?;
        let dotted = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        pairs.insert(dotted, value.trim().to_string());
    }
    Ok(pairs)
}
