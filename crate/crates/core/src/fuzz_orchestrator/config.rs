//! Target configuration: one JSON file per validator.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coverage_attribution::{Transport, AFL_SHM_ENV};
use crate::objects::Vrp;

/// How a target writes its accepted VRPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// `ASN,prefix,maxLength` per line, optional header.
    Csv,
    /// One JSON object per line with `asn`, `prefix` and `maxLength`.
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub name: String,
    pub binary: PathBuf,
    /// Arguments; `{repo}`, `{tal}`, `{output}` and `{workdir}` are
    /// substituted.
    #[serde(default)]
    pub args: Vec<String>,
    /// Flag placed before the TAL path, appended after `args`.
    #[serde(default)]
    pub tal_flag: Option<String>,
    /// Flag placed before the repository path, appended after `args`.
    #[serde(default)]
    pub repo_flag: Option<String>,
    /// Output file, relative to the target's working directory.
    #[serde(default = "default_output_file")]
    pub output_file: String,
    pub output_format: OutputFormat,
    #[serde(default)]
    pub coverage: bool,
    #[serde(default = "default_shm_env")]
    pub shm_env_var: String,
    #[serde(default = "default_transport")]
    pub shm_transport: Transport,
    #[serde(default = "default_bitmap_size")]
    pub bitmap_size: usize,
    #[serde(default)]
    pub crash_keywords: Vec<String>,
    /// Known loop-head counters; identified at campaign start when absent.
    #[serde(default)]
    pub identification_functions: Option<Vec<usize>>,
    /// Fixed stall baseline in seconds; measured before fuzzing when absent.
    #[serde(default)]
    pub baseline_runtime: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_output_file() -> String {
    "output.txt".into()
}
fn default_shm_env() -> String {
    AFL_SHM_ENV.into()
}
fn default_transport() -> Transport {
    Transport::SysV
}
fn default_bitmap_size() -> usize {
    65536
}
fn default_timeout() -> f64 {
    600.0
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("target {name}: {message}")]
    Invalid { name: String, message: String },
    #[error("duplicate target name {0}")]
    Duplicate(String),
}

impl TargetConfig {
    /// Reads one config. A relative binary path containing a separator is
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let load_err = |message: String| ConfigError::Load { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let mut cfg: TargetConfig = serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?;
        if cfg.binary.is_relative() && cfg.binary.components().count() > 1 {
            if let Some(dir) = path.parent() {
                cfg.binary = dir.join(&cfg.binary);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |message: &str| Err(ConfigError::Invalid { name: self.name.clone(), message: message.into() });
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return invalid("name must be non-empty without path separators");
        }
        if self.output_file.is_empty() || Path::new(&self.output_file).is_absolute() {
            return invalid("output_file must be a relative path");
        }
        if self.coverage && self.bitmap_size == 0 {
            return invalid("bitmap_size must be positive for coverage targets");
        }
        if self.timeout_secs <= 0.0 {
            return invalid("timeout_secs must be positive");
        }
        if matches!(self.baseline_runtime, Some(b) if b <= 0.0 || !b.is_finite()) {
            return invalid("baseline_runtime must be positive");
        }
        if let Some(ifs) = &self.identification_functions {
            if ifs.is_empty() || ifs.iter().any(|&i| i >= self.bitmap_size) {
                return invalid("identification_functions must be non-empty and inside the bitmap");
            }
        }
        let resolvable = self.binary.components().count() > 1 || which(&self.binary).is_some();
        if !resolvable || (self.binary.components().count() > 1 && !self.binary.is_file()) {
            return invalid(&format!("binary {} not found", self.binary.display()));
        }
        Ok(())
    }

    /// Command-line arguments for one run.
    pub fn command_args(&self, repo: &Path, tal: &Path, output: &Path, workdir: &Path) -> Vec<String> {
        let sub = |a: &str| {
            a.replace("{repo}", &repo.display().to_string())
                .replace("{tal}", &tal.display().to_string())
                .replace("{output}", &output.display().to_string())
                .replace("{workdir}", &workdir.display().to_string())
        };
        let mut v: Vec<String> = self.args.iter().map(|a| sub(a)).collect();
        if let Some(f) = &self.tal_flag {
            v.extend([f.clone(), tal.display().to_string()]);
        }
        if let Some(f) = &self.repo_flag {
            v.extend([f.clone(), repo.display().to_string()]);
        }
        v
    }
}

fn which(bin: &Path) -> Option<PathBuf> {
    std::env::var_os("PATH").and_then(|paths| std::env::split_paths(&paths).map(|d| d.join(bin)).find(|p| p.is_file()))
}

/// Loads all configs and rejects duplicate names.
pub fn load_targets(paths: &[PathBuf]) -> Result<Vec<TargetConfig>, ConfigError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in paths {
        let cfg = TargetConfig::load(p)?;
        if !seen.insert(cfg.name.clone()) {
            return Err(ConfigError::Duplicate(cfg.name));
        }
        out.push(cfg);
    }
    Ok(out)
}

/// Parses a target's VRP output.
pub fn parse_output(format: OutputFormat, text: &str) -> Result<BTreeSet<Vrp>, String> {
    let mut out = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vrp = match format {
            OutputFormat::Csv => match line.parse::<Vrp>() {
                Ok(v) => v,
                Err(_) if n == 0 && line.to_ascii_lowercase().contains("asn") => continue,
                Err(e) => return Err(format!("line {}: {e}", n + 1)),
            },
            OutputFormat::Jsonl => json_vrp(line).map_err(|e| format!("line {}: {e}", n + 1))?,
        };
        out.insert(vrp);
    }
    Ok(out)
}

fn json_vrp(line: &str) -> Result<Vrp, String> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let field = |names: &[&str]| names.iter().find_map(|n| v.get(*n)).ok_or_else(|| format!("missing {}", names[0]));
    let asn = match field(&["asn"])? {
        serde_json::Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()).ok_or("asn out of range")?,
        serde_json::Value::String(s) => s.trim_start_matches("AS").parse().map_err(|_| "bad asn")?,
        _ => return Err("bad asn".into()),
    };
    let prefix = field(&["prefix"])?.as_str().ok_or("prefix is not a string")?.parse().map_err(|e| format!("{e:?}"))?;
    let max_len = field(&["maxLength", "max_length"])?.as_u64().and_then(|m| u8::try_from(m).ok()).ok_or("bad maxLength")?;
    Ok(Vrp { asn, prefix, max_len })
}
