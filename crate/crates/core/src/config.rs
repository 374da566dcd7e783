//! Run configuration: `key = value` text files plus command-line overrides.
//!
//! Grammar: one `key = value` per line. Blank lines are ignored, and `#`
//! starts a comment that runs to the end of the line (so values cannot
//! contain `#`). Keys are the names listed in [`KEYS`]; anything else is
//! rejected. Precedence is defaults, then the file, then flags. Optional
//! values use a sentinel: `space =` (empty), `l_min = auto`,
//! `query_budget = unlimited`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::controller::SearchConfig;
use crate::data::SpiralConfig;
use crate::error::{Error, Result};
use crate::fitness::LossBounds;
use crate::logging::LogFormat;
use crate::supernet::{OpKind, SupernetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    #[default]
    Supernet,
    Tabular,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Supernet => "supernet",
            BackendKind::Tabular => "tabular",
        }
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supernet" => Ok(BackendKind::Supernet),
            "tabular" => Ok(BackendKind::Tabular),
            other => Err(Error::InvalidParameter(format!(
                "backend must be supernet or tabular, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub space: Option<PathBuf>,
    pub out: PathBuf,
    pub log_format: LogFormat,
    /// Seeds swarm, weight init and mini-batch order.
    pub rng_seed: u64,
    pub dataset_seed: u64,
    pub search: SearchConfig,
    pub l_min: Option<f64>,
    pub l_max: Option<f64>,
    pub net: SupernetConfig,
    pub spirals: SpiralConfig,
    pub query_budget: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Supernet,
            space: None,
            out: PathBuf::from("runs"),
            log_format: LogFormat::Csv,
            rng_seed: 0,
            dataset_seed: 0,
            search: SearchConfig::default(),
            l_min: None,
            l_max: None,
            net: SupernetConfig::default(),
            spirals: SpiralConfig::default(),
            query_budget: None,
        }
    }
}

/// Every recognized key, in serialization order.
pub const KEYS: &[&str] = &[
    "backend",
    "space",
    "out",
    "log_format",
    "rng_seed",
    "dataset_seed",
    "warmup_epochs",
    "batch_size",
    "eta_w",
    "warmup_arch_lr",
    "exploration_eta_alpha",
    "stability_threshold",
    "stability_arch_lr",
    "min_stability_epochs",
    "window_n",
    "delta",
    "abs_alpha_threshold",
    "max_total_epochs",
    "stop_mode",
    "pop_size",
    "phi",
    "generations_per_epoch",
    "swarm_lower",
    "swarm_upper",
    "history_capacity",
    "lambda_swarm",
    "lambda_op",
    "l_min",
    "l_max",
    "num_nodes",
    "ops",
    "width",
    "num_classes",
    "stem_scale",
    "init_gain",
    "train_size",
    "val_size",
    "spiral_turns",
    "spiral_noise",
    "query_budget",
    "record_wall_time",
];

fn uint<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn real(v: &str) -> std::result::Result<f64, String> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("expected a finite number, got {v:?}"))
}

fn check(ok: bool, msg: &str) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn opt_real(v: &str) -> std::result::Result<Option<f64>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        real(v).map(Some)
    }
}

fn show_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl RunConfig {
    /// Parses and range-checks one value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let st = &mut self.search.stage;
        let sw = &mut self.search.swarm;
        match key {
            "backend" => self.backend = value.parse().map_err(|e: Error| e.to_string())?,
            "space" => {
                self.space = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "out" => {
                check(!value.is_empty(), "must not be empty")?;
                self.out = PathBuf::from(value);
            }
            "log_format" => self.log_format = value.parse().map_err(|e: Error| e.to_string())?,
            "rng_seed" => self.rng_seed = uint(value)?,
            "dataset_seed" => self.dataset_seed = uint(value)?,
            "warmup_epochs" => st.warmup_epochs = uint(value)?,
            "batch_size" => {
                st.batch_size = uint(value)?;
                check(st.batch_size > 0, "must be positive")?;
            }
            "eta_w" => {
                st.eta_w = real(value)?;
                check(st.eta_w > 0.0, "must be > 0")?;
            }
            "warmup_arch_lr" => {
                st.warmup_arch_lr = real(value)?;
                check(
                    st.warmup_arch_lr == 0.0,
                    "alpha is frozen during warm-up; must be 0",
                )?;
            }
            "exploration_eta_alpha" => {
                st.exploration_eta_alpha = real(value)?;
                check(
                    (0.0..=1.0).contains(&st.exploration_eta_alpha),
                    "must lie in [0, 1]",
                )?;
            }
            "stability_threshold" => {
                st.stability_threshold = real(value)?;
                let t = st.stability_threshold;
                check(t > 0.0 && t < 1.0, "must lie in (0, 1)")?;
            }
            "stability_arch_lr" => {
                st.stability_arch_lr = real(value)?;
                check(st.stability_arch_lr >= 0.0, "must be >= 0")?;
            }
            "min_stability_epochs" => st.min_stability_epochs = uint(value)?,
            "window_n" => {
                st.window_n = uint(value)?;
                check(st.window_n > 0, "must be positive")?;
            }
            "delta" => {
                st.delta = real(value)?;
                check(st.delta > 0.0 && st.delta < 1.0, "must lie in (0, 1)")?;
            }
            "abs_alpha_threshold" => {
                st.abs_alpha_threshold = real(value)?;
                check(st.abs_alpha_threshold > 0.0, "must be > 0")?;
            }
            "max_total_epochs" => st.max_total_epochs = uint(value)?,
            "stop_mode" => st.stop_mode = value.parse().map_err(|e: Error| e.to_string())?,
            "pop_size" => {
                sw.pop_size = uint(value)?;
                check(sw.pop_size >= 3, "must be >= 3")?;
            }
            "phi" => {
                sw.phi = real(value)?;
                check((0.0..=1.0).contains(&sw.phi), "must lie in [0, 1]")?;
            }
            "generations_per_epoch" => {
                sw.generations_per_epoch = uint(value)?;
                check(sw.generations_per_epoch > 0, "must be positive")?;
            }
            "swarm_lower" => self.search.swarm_lower = real(value)?,
            "swarm_upper" => self.search.swarm_upper = real(value)?,
            "history_capacity" => {
                self.search.history_capacity = uint(value)?;
                check(self.search.history_capacity > 0, "must be positive")?;
            }
            "lambda_swarm" => {
                self.search.fitness.lambda_swarm = real(value)?;
                check(self.search.fitness.lambda_swarm >= 0.0, "must be >= 0")?;
            }
            "lambda_op" => {
                self.search.fitness.lambda_op = real(value)?;
                check(self.search.fitness.lambda_op >= 0.0, "must be >= 0")?;
            }
            "l_min" => self.l_min = opt_real(value)?,
            "l_max" => self.l_max = opt_real(value)?,
            "num_nodes" => {
                self.net.num_nodes = uint(value)?;
                check(self.net.num_nodes > 0, "must be positive")?;
            }
            "ops" => {
                self.net.ops = value
                    .split(',')
                    .map(|s| s.trim().parse::<OpKind>())
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.to_string())?;
                let mut names: Vec<&str> = self.net.ops.iter().map(|o| o.name()).collect();
                names.sort_unstable();
                names.dedup();
                check(
                    names.len() == self.net.ops.len(),
                    "operations must be distinct",
                )?;
            }
            "width" => {
                self.net.width = uint(value)?;
                check(self.net.width > 0, "must be positive")?;
            }
            "num_classes" => {
                let c: usize = uint(value)?;
                check(c >= 2, "must be >= 2")?;
                self.net.num_classes = c;
                self.spirals.num_classes = c;
            }
            "stem_scale" => {
                self.net.stem_scale = real(value)?;
                check(self.net.stem_scale > 0.0, "must be > 0")?;
            }
            "init_gain" => {
                self.net.init_gain = real(value)?;
                check(self.net.init_gain > 0.0, "must be > 0")?;
            }
            "train_size" => self.spirals.train_size = uint(value)?,
            "val_size" => self.spirals.val_size = uint(value)?,
            "spiral_turns" => {
                self.spirals.turns = real(value)?;
                check(self.spirals.turns > 0.0, "must be > 0")?;
            }
            "spiral_noise" => {
                self.spirals.noise = real(value)?;
                check(self.spirals.noise >= 0.0, "must be >= 0")?;
            }
            "query_budget" => {
                self.query_budget = if value == "unlimited" {
                    None
                } else {
                    Some(uint(value)?)
                };
            }
            "record_wall_time" => {
                self.search.record_wall_time = value
                    .parse()
                    .map_err(|_| format!("expected true or false, got {value:?}"))?;
            }
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let st = &self.search.stage;
        let sw = &self.search.swarm;
        Some(match key {
            "backend" => self.backend.name().to_string(),
            "space" => self
                .space
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "out" => self.out.display().to_string(),
            "log_format" => self.log_format.to_string(),
            "rng_seed" => self.rng_seed.to_string(),
            "dataset_seed" => self.dataset_seed.to_string(),
            "warmup_epochs" => st.warmup_epochs.to_string(),
            "batch_size" => st.batch_size.to_string(),
            "eta_w" => st.eta_w.to_string(),
            "warmup_arch_lr" => st.warmup_arch_lr.to_string(),
            "exploration_eta_alpha" => st.exploration_eta_alpha.to_string(),
            "stability_threshold" => st.stability_threshold.to_string(),
            "stability_arch_lr" => st.stability_arch_lr.to_string(),
            "min_stability_epochs" => st.min_stability_epochs.to_string(),
            "window_n" => st.window_n.to_string(),
            "delta" => st.delta.to_string(),
            "abs_alpha_threshold" => st.abs_alpha_threshold.to_string(),
            "max_total_epochs" => st.max_total_epochs.to_string(),
            "stop_mode" => st.stop_mode.to_string(),
            "pop_size" => sw.pop_size.to_string(),
            "phi" => sw.phi.to_string(),
            "generations_per_epoch" => sw.generations_per_epoch.to_string(),
            "swarm_lower" => self.search.swarm_lower.to_string(),
            "swarm_upper" => self.search.swarm_upper.to_string(),
            "history_capacity" => self.search.history_capacity.to_string(),
            "lambda_swarm" => self.search.fitness.lambda_swarm.to_string(),
            "lambda_op" => self.search.fitness.lambda_op.to_string(),
            "l_min" => show_opt(self.l_min),
            "l_max" => show_opt(self.l_max),
            "num_nodes" => self.net.num_nodes.to_string(),
            "ops" => self
                .net
                .ops
                .iter()
                .map(|o| o.name())
                .collect::<Vec<_>>()
                .join(","),
            "width" => self.net.width.to_string(),
            "num_classes" => self.net.num_classes.to_string(),
            "stem_scale" => self.net.stem_scale.to_string(),
            "init_gain" => self.net.init_gain.to_string(),
            "train_size" => self.spirals.train_size.to_string(),
            "val_size" => self.spirals.val_size.to_string(),
            "spiral_turns" => self.spirals.turns.to_string(),
            "spiral_noise" => self.spirals.noise.to_string(),
            "query_budget" => self
                .query_budget
                .map_or_else(|| "unlimited".to_string(), |b| b.to_string()),
            "record_wall_time" => self.search.record_wall_time.to_string(),
            _ => return None,
        })
    }

    /// Serializes every key; parsing the output yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key).expect("known key")).unwrap();
        }
        out
    }

    /// Loss bounds for base fitness, or `None` for the backend default.
    pub fn loss_bounds(&self) -> Result<Option<LossBounds>> {
        match (self.l_min, self.l_max) {
            (None, None) => Ok(None),
            (Some(lo), Some(hi)) => LossBounds::new(lo, hi).map(Some),
            _ => Err(Error::InvalidParameter(
                "l_min and l_max must both be set or both be auto".into(),
            )),
        }
    }

    pub fn search_config(&self) -> Result<SearchConfig> {
        let mut search = self.search.clone();
        search.swarm.rng_seed = self.rng_seed;
        search.loss_bounds = self.loss_bounds()?;
        Ok(search)
    }
}

/// Where each key got its current value.
type Origins = BTreeMap<String, String>;

fn config_error(key: &str, origins: &Origins, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        origin: origins
            .get(key)
            .cloned()
            .unwrap_or_else(|| "default".to_string()),
        message: message.into(),
    }
}

fn apply(
    cfg: &mut RunConfig,
    origins: &mut Origins,
    key: &str,
    value: &str,
    origin: String,
) -> Result<()> {
    if !KEYS.contains(&key) {
        return Err(Error::Config {
            key: key.to_string(),
            origin,
            message: "unknown key".into(),
        });
    }
    cfg.set(key, value).map_err(|message| Error::Config {
        key: key.to_string(),
        origin: origin.clone(),
        message,
    })?;
    origins.insert(key.to_string(), origin);
    Ok(())
}

/// Checks that involve more than one key.
fn validate(cfg: &RunConfig, origins: &Origins) -> Result<()> {
    if cfg.search.swarm_lower >= cfg.search.swarm_upper {
        return Err(config_error(
            "swarm_upper",
            origins,
            "must exceed swarm_lower",
        ));
    }
    if let Err(e) = cfg.loss_bounds() {
        return Err(config_error("l_max", origins, e.to_string()));
    }
    let c = cfg.spirals.num_classes;
    for (key, n) in [
        ("train_size", cfg.spirals.train_size),
        ("val_size", cfg.spirals.val_size),
    ] {
        if n == 0 || n % c != 0 {
            return Err(config_error(
                key,
                origins,
                format!("must be a positive multiple of num_classes = {c}"),
            ));
        }
    }
    if cfg.backend == BackendKind::Tabular && cfg.space.is_none() {
        return Err(config_error(
            "space",
            origins,
            "the tabular backend needs a space file",
        ));
    }
    cfg.search_config()?.validate()
}

/// Splits one config line into key and value; `None` for blank lines.
fn split_line(line: &str) -> Option<std::result::Result<(&str, &str), ()>> {
    let content = line.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return None;
    }
    Some(
        content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or(()),
    )
}

/// Defaults, then `text`, then `overrides` (key, value) pairs given as flags.
pub fn parse_config_text(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut origins = Origins::new();
    for (i, line) in text.lines().enumerate() {
        let origin = format!("line {}", i + 1);
        match split_line(line) {
            None => {}
            Some(Err(())) => {
                return Err(Error::Config {
                    key: line.trim().to_string(),
                    origin,
                    message: "expected `key = value`".into(),
                })
            }
            Some(Ok((key, value))) => apply(&mut cfg, &mut origins, key, value, origin)?,
        }
    }
    for (key, value) in overrides {
        let origin = format!("flag --{}", key.replace('_', "-"));
        apply(&mut cfg, &mut origins, key, value, origin)?;
    }
    validate(&cfg, &origins)?;
    Ok(cfg)
}

pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    parse_config_text(&text, overrides)
}
