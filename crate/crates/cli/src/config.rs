//! Run configuration: a sectioned TOML file merged with `--section.key value`
//! overrides, resolved once and written next to every output.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use subaru_core::DegradationSpec;
use subaru_model::{DataConfig, NetworkConfig, TrainConfig};
use toml::{Table, Value};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "SUBARU_CONFIG";
/// File name of the resolved configuration inside a run directory.
pub const RESOLVED_NAME: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Output directory; `runs/<command>` when unset.
    pub dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 0, dir: None }
    }
}

/// Capture simulation used by `degrade`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeSection {
    pub rate: u32,
    pub bits: u32,
    pub snr_db: Option<f64>,
    pub hpf_cutoff: Option<f64>,
    /// Noise clip mixed in when `snr_db` is set.
    pub noise: Option<PathBuf>,
}

impl Default for DegradeSection {
    fn default() -> Self {
        DegradeSection {
            rate: 4000,
            bits: 8,
            snr_db: None,
            hpf_cutoff: Some(15.0),
            noise: None,
        }
    }
}

impl DegradeSection {
    pub fn spec(&self) -> DegradationSpec {
        DegradationSpec {
            snr_db: self.snr_db,
            hpf_cutoff: self.hpf_cutoff,
            ..DegradationSpec::new(self.rate, self.bits)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Manifest of an existing corpus; a synthetic one is written when unset.
    pub manifest: Option<PathBuf>,
    pub speakers: usize,
    pub clips_per_speaker: usize,
    pub seconds: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub noise_clips: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            manifest: None,
            speakers: 12,
            clips_per_speaker: 5,
            seconds: 1.6,
            val_fraction: 1.0 / 6.0,
            test_fraction: 0.0,
            noise_clips: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSection {
    pub frame_s: f64,
    pub transport_ms: f64,
    /// Replaces measured inference time when set.
    pub inference_ms: Option<f64>,
}

impl Default for StreamSection {
    fn default() -> Self {
        StreamSection {
            frame_s: 1.0,
            transport_ms: 12.0,
            inference_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub rates: Vec<u32>,
    pub bits: Vec<u32>,
    /// Synthetic clips used when no input directory is given.
    pub clips: usize,
    pub source_rate: u32,
    pub seconds: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            rates: vec![24000, 12000, 10000, 8000, 6000, 4000],
            bits: vec![8, 10, 12],
            clips: 20,
            source_rate: 48000,
            seconds: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub degrade: DegradeSection,
    pub corpus: CorpusSection,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub stream: StreamSection,
    pub sweep: SweepSection,
}

/// Splits `--section.key value` and `--section.key=value` pairs out of
/// `args`; everything else is returned untouched.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !name.contains('.') {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().with_context(|| format!("--{name} needs a value"))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

/// A TOML literal when `raw` parses as one, otherwise a plain string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key {path:?}");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let next = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = next.as_table_mut().with_context(|| format!("{path}: {p} is not a section"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn leaf_paths(table: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => leaf_paths(t, &p, out),
            _ => out.push(p),
        }
    }
}

fn lookup<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut v = table.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

impl RunConfig {
    /// Merges the config file (explicit path, else `SUBARU_CONFIG`, else
    /// none) with the overrides. Every given key must name a setting.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let path = file.map(Path::to_path_buf).or(env_path);
        let mut table = match &path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<Table>().with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Table::new(),
        };
        for (k, v) in overrides {
            set_path(&mut table, k, parse_value(v))?;
        }
        let cfg: RunConfig = table.clone().try_into().context("invalid configuration")?;
        let resolved: Table = Table::try_from(&cfg)?;
        let mut given = Vec::new();
        leaf_paths(&table, "", &mut given);
        if let Some(unknown) = given.iter().find(|k| lookup(&resolved, k).is_none()) {
            bail!("unknown setting {unknown:?}");
        }
        cfg.network.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Creates the run directory and writes the resolved configuration.
    pub fn prepare_run_dir(&self, command: &str) -> Result<PathBuf> {
        let dir = self.run.dir.clone().unwrap_or_else(|| Path::new("runs").join(command));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join(RESOLVED_NAME), self.to_toml()?)?;
        Ok(dir)
    }
}
