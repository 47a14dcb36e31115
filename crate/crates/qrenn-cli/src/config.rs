//! Strict config parsing: unknown keys are fatal, the seed lives at the top
//! level and is injected into the command parameters, and every effective
//! value is echoed back into the run manifest.

use anyhow::{bail, Context};
use qrenn_core::bench::{GradStatConfig, OverlapScanConfig, SptConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Gradstats,
    Train,
    Spt,
    DlaAnalyze,
    OverlapScan,
    DatasetGen,
}

impl CommandName {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommandName::Gradstats => "gradstats",
            CommandName::Train => "train",
            CommandName::Spt => "spt",
            CommandName::DlaAnalyze => "dla-analyze",
            CommandName::OverlapScan => "overlap-scan",
            CommandName::DatasetGen => "dataset-gen",
        }
    }

    /// Commands that draw randomness and therefore require a seed.
    pub fn is_stochastic(&self) -> bool {
        !matches!(self, CommandName::OverlapScan)
    }
}

/// Data Hamiltonian selector for the Lie-algebra analysis command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HamiltonianSpec {
    /// `Z^(x)n`.
    PauliZ,
    /// Random fixed Hamiltonian with exactly `r` distinct eigenvalues.
    RandomSpectrum { r: usize },
    /// Periodic cluster-Ising chain at the given coupling.
    ClusterIsing { lambda: f64 },
    /// Random diagonal Hamiltonian.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlaAnalyzeConfig {
    pub m: usize,
    pub n: usize,
    pub hamiltonian: HamiltonianSpec,
    #[serde(default = "default_closure_tol")]
    pub tol: f64,
    /// Cap on the closure dimension; defaults to the predicted dimension
    /// plus slack when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dim: Option<usize>,
    pub seed: u64,
}

fn default_closure_tol() -> f64 {
    qrenn_core::dla::CLOSURE_RANK_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetGenConfig {
    pub feature: qrenn_core::data::FeatureTag,
    pub n: usize,
    #[serde(default = "default_total")]
    pub total: usize,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    pub seed: u64,
}

fn default_total() -> usize {
    600
}
fn default_train_size() -> usize {
    100
}

#[derive(Debug, Clone)]
pub enum CommandParams {
    Gradstats(GradStatConfig),
    Train(TrainConfig),
    Spt(SptConfig),
    DlaAnalyze(DlaAnalyzeConfig),
    OverlapScan(OverlapScanConfig),
    DatasetGen(DatasetGenConfig),
}

/// Parsed and validated run configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandName,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub params: CommandParams,
}

const TOP_LEVEL_KEYS: [&str; 5] = ["command", "seed", "output_dir", "threads", "params"];

/// Parse a TOML config document. Unknown keys anywhere are fatal; the
/// top-level seed is injected into the parameter table (which must not carry
/// its own); stochastic commands without a seed are rejected.
pub fn parse_config(text: &str, seed_override: Option<u64>) -> anyhow::Result<RunConfig> {
    let doc: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
    for key in doc.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            bail!("unknown top-level key `{key}`");
        }
    }
    let command: CommandName = doc
        .get("command")
        .cloned()
        .context("missing `command`")?
        .try_into()
        .context("invalid `command`")?;
    let seed_file: Option<u64> = match doc.get("seed") {
        None => None,
        Some(v) => Some(
            v.clone()
                .try_into()
                .context("`seed` must be a 64-bit integer")?,
        ),
    };
    let seed = seed_override.or(seed_file);
    if command.is_stochastic() && seed.is_none() {
        bail!(
            "command `{}` is stochastic and requires a seed (top-level `seed` or --seed)",
            command.as_str()
        );
    }
    let output_dir: PathBuf = match doc.get("output_dir") {
        None => PathBuf::from("qrenn-out"),
        Some(v) => PathBuf::from(
            v.as_str()
                .context("`output_dir` must be a string")?
                .to_string(),
        ),
    };
    let threads: usize = match doc.get("threads") {
        None => 0,
        Some(v) => v
            .clone()
            .try_into()
            .context("`threads` must be a non-negative integer")?,
    };

    let mut params: toml::Table = match doc.get("params") {
        None => toml::Table::new(),
        Some(v) => v
            .as_table()
            .context("`params` must be a table")?
            .clone(),
    };
    // the seed is injected where the command's config keeps it: inside the
    // nested `train` table for spt, at the parameter root otherwise
    let seed_home: &mut toml::Table = if command == CommandName::Spt {
        params
            .entry("train")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .context("`params.train` must be a table")?
    } else {
        &mut params
    };
    if seed_home.contains_key("seed") {
        bail!("`seed` inside params is not allowed; it belongs at the top level");
    }
    if let Some(s) = seed {
        seed_home.insert("seed".into(), toml::Value::Integer(s as i64));
    }

    let value = toml::Value::Table(params);
    let parsed = match command {
        CommandName::Gradstats => CommandParams::Gradstats(
            value.try_into().context("invalid gradstats params")?,
        ),
        CommandName::Train => {
            CommandParams::Train(value.try_into().context("invalid train params")?)
        }
        CommandName::Spt => CommandParams::Spt(value.try_into().context("invalid spt params")?),
        CommandName::DlaAnalyze => CommandParams::DlaAnalyze(
            value.try_into().context("invalid dla-analyze params")?,
        ),
        CommandName::OverlapScan => CommandParams::OverlapScan(
            value.try_into().context("invalid overlap-scan params")?,
        ),
        CommandName::DatasetGen => CommandParams::DatasetGen(
            value.try_into().context("invalid dataset-gen params")?,
        ),
    };
    Ok(RunConfig {
        command,
        seed,
        output_dir,
        threads,
        params: parsed,
    })
}

/// Render the effective configuration back to TOML;
/// `parse_config(serialize_config(c), None)` reproduces `c`.
pub fn serialize_config(cfg: &RunConfig) -> anyhow::Result<String> {
    let mut doc = toml::Table::new();
    doc.insert(
        "command".into(),
        toml::Value::String(cfg.command.as_str().into()),
    );
    if let Some(s) = cfg.seed {
        doc.insert("seed".into(), toml::Value::Integer(s as i64));
    }
    doc.insert(
        "output_dir".into(),
        toml::Value::String(cfg.output_dir.display().to_string()),
    );
    doc.insert("threads".into(), toml::Value::Integer(cfg.threads as i64));
    let mut params = match &cfg.params {
        CommandParams::Gradstats(p) => to_table(p)?,
        CommandParams::Train(p) => to_table(p)?,
        CommandParams::Spt(p) => to_table(p)?,
        CommandParams::DlaAnalyze(p) => to_table(p)?,
        CommandParams::OverlapScan(p) => to_table(p)?,
        CommandParams::DatasetGen(p) => to_table(p)?,
    };
    params.remove("seed");
    if let Some(train) = params.get_mut("train").and_then(|t| t.as_table_mut()) {
        train.remove("seed");
    }
    doc.insert("params".into(), toml::Value::Table(params));
    Ok(toml::to_string_pretty(&doc)?)
}

fn to_table<S: Serialize>(value: &S) -> anyhow::Result<toml::Table> {
    let v = toml::Value::try_from(value)?;
    match v {
        toml::Value::Table(t) => Ok(t),
        _ => bail!("params did not serialize to a table"),
    }
}

/// JSON echo of the effective configuration for the run manifest.
pub fn config_echo_json(cfg: &RunConfig) -> anyhow::Result<serde_json::Value> {
    let mut map = serde_json::Map::new();
    map.insert("command".into(), cfg.command.as_str().into());
    if let Some(s) = cfg.seed {
        map.insert("seed".into(), s.into());
    }
    map.insert(
        "output_dir".into(),
        cfg.output_dir.display().to_string().into(),
    );
    map.insert("threads".into(), (cfg.threads as u64).into());
    let params = match &cfg.params {
        CommandParams::Gradstats(p) => serde_json::to_value(p)?,
        CommandParams::Train(p) => serde_json::to_value(p)?,
        CommandParams::Spt(p) => serde_json::to_value(p)?,
        CommandParams::DlaAnalyze(p) => serde_json::to_value(p)?,
        CommandParams::OverlapScan(p) => serde_json::to_value(p)?,
        CommandParams::DatasetGen(p) => serde_json::to_value(p)?,
    };
    map.insert("params".into(), params);
    Ok(serde_json::Value::Object(map))
}
