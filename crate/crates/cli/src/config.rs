use std::path::Path;

use anyhow::{Context, Result};
use keyrel::experiment::{Arm, ExperimentConfig, TrainOptions};
use keyrel::serving::DEFAULT_WINDOW_MS;
use keyrel::SimConfig;
use serde::{Deserialize, Serialize};

use crate::exit::ConfigError;

/// Everything a run needs, from one TOML file plus command-line overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub experiment: ExperimentOptions,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub serve: ServeOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentOptions {
    pub arms: Vec<Arm>,
    /// Required F1 lead of judgment-trained over click-trained arms.
    pub min_gap: Option<f64>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            arms: ExperimentConfig::default().arms,
            min_gap: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub min_f1: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Items with the keyphrases assigned to their category.
    #[default]
    Category,
    /// Every item with every keyphrase.
    All,
    /// The pairs Advertising retrieved in the simulated world.
    Advertised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeOptions {
    pub addr: String,
    pub window_ms: u64,
    pub pairs: PairMode,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            window_ms: DEFAULT_WINDOW_MS,
            pairs: PairMode::Category,
        }
    }
}

impl RunConfig {
    /// The effective configuration: file contents, then dotted overrides,
    /// then `--seed`. The seed is mandatory and also becomes `sim.seed`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)], seed: Option<u64>) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        if let Some(seed) = seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if !table.contains_key("seed") {
            return Err(ConfigError("a seed is required (`seed = N` in the config or --seed N)".into()).into());
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
        cfg.sim.seed = cfg.seed;
        cfg.sim.validate().map_err(|e| ConfigError(e.to_string()))?;
        cfg.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        if cfg.serve.window_ms == 0 {
            return Err(ConfigError("serve.window_ms must be positive".into()).into());
        }
        Ok(cfg)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            sim: self.sim.clone(),
            arms: self.experiment.arms.clone(),
            train: self.train.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Pulls `--section.key value` and `--section.key=value` flags out of
/// `args`, returning the remaining arguments and the overrides. Key
/// segments are converted from kebab to snake case.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| ConfigError(format!("--{flag} needs a value")))?;
                (flag.to_string(), v)
            }
        };
        overrides.push((key.replace('-', "_"), value));
    }
    Ok((rest, overrides))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("malformed override key {key:?}")).into());
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override {key}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}
