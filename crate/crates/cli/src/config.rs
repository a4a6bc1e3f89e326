//! Run configuration: one JSON document plus dotted-path overrides.

use std::fs;
use std::path::{Path, PathBuf};

use astrec::data::SplitFractions;
use astrec::eval::{DiagnosticOptions, HrMode};
use astrec::synth::SynthConfig;
use astrec::trainer::TrainConfig;
use astrec::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RawFormat {
    /// `user item rating` lines.
    #[default]
    Triples,
    /// Dense rating matrix, one row per user, 0 = unobserved.
    Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Prepared dataset directory read by train, evaluate, diagnose, ablate and sweep.
    pub dir: Option<PathBuf>,
    /// Raw logged feedback for `prepare`.
    pub raw_biased: Option<PathBuf>,
    /// Raw uniformly exposed feedback for `prepare`.
    pub raw_uniform: Option<PathBuf>,
    pub format: RawFormat,
    /// Field separator of raw triple files; any whitespace splits on whitespace runs.
    pub separator: String,
    pub one_based: bool,
    pub threshold: u8,
    pub split: SplitFractions,
    /// Seed of the uniform split in `prepare`.
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            raw_biased: None,
            raw_uniform: None,
            format: RawFormat::Triples,
            separator: "\t".into(),
            one_based: false,
            threshold: astrec::data::DEFAULT_THRESHOLD,
            split: SplitFractions::default(),
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthConfig {
    /// Test pairs (in file order) annotated with oracle g, k and exposure.
    pub pairs: usize,
    pub mc_draws: usize,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            pairs: 1000,
            mc_draws: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub hr_mode: HrMode,
    /// Add shift diagnostics to `evaluate` output.
    pub diagnostics: bool,
    pub diagnostic: DiagnosticOptions,
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 5,
            hr_mode: HrMode::Recall,
            diagnostics: false,
            diagnostic: DiagnosticOptions::default(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Components removed one at a time: any of "A", "S", "E".
    pub components: Vec<String>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            components: vec!["A".into(), "S".into(), "E".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    /// Dotted config path, e.g. `trainer.weights.alpha`.
    pub key: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Vec<GridAxis>,
    /// Worker threads; cells are independent, so results do not depend on it.
    pub parallel: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: Vec::new(),
            parallel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub ground_truth: GroundTruthConfig,
    pub trainer: TrainConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
    /// Training seeds `trainer.seed .. trainer.seed + seeds`.
    pub seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            ground_truth: GroundTruthConfig::default(),
            trainer: TrainConfig::default(),
            eval: EvalConfig::default(),
            ablation: AblationConfig::default(),
            sweep: SweepConfig::default(),
            seeds: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.trainer.validate()?;
        self.data.split.validate()?;
        if self.eval.k == 0 {
            return Err(Error::Config("eval.k must be >= 1".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        if self.sweep.parallel == 0 {
            return Err(Error::Config("sweep.parallel must be >= 1".into()));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data
            .dir
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset directory: pass --data or set data.dir".into()))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Parse an override value as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Set `path` (dot-separated) inside `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {path:?}")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?} descends into a non-object")))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override {path:?} descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Apply a `key=value` override.
pub fn apply_override(root: &mut Value, arg: &str) -> Result<()> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg:?} is not of the form key=value")))?;
    set_path(root, key.trim(), parse_value(raw))
}

/// Parse a `key=v1,v2,...` grid axis.
pub fn parse_grid_axis(arg: &str) -> Result<GridAxis> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("grid {arg:?} is not of the form key=v1,v2")))?;
    let values: Vec<Value> = raw.split(',').map(|v| parse_value(v.trim())).collect();
    if key.trim().is_empty() || raw.trim().is_empty() {
        return Err(Error::Config(format!("grid {arg:?} has no key or no values")));
    }
    Ok(GridAxis {
        key: key.trim().to_string(),
        values,
    })
}

/// Defaults, then the config file, then overrides in order.
pub fn load(config_file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    load_with(config_file, overrides, &[])
}

/// As [`load`], followed by already-parsed `(path, value)` settings.
pub fn load_with(config_file: Option<&Path>, overrides: &[String], settings: &[(&str, Value)]) -> Result<RunConfig> {
    let mut value = RunConfig::default().to_value();
    if let Some(path) = config_file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: invalid JSON: {e}", path.display())))?;
        merge(&mut value, file);
    }
    for arg in overrides {
        apply_override(&mut value, arg)?;
    }
    for (path, v) in settings {
        set_path(&mut value, path, v.clone())?;
    }
    let cfg = RunConfig::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Recursive object merge; non-object values in `patch` replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
