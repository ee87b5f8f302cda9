//! The JSON experiment configuration: one strict-schema document drives
//! every subcommand. Unknown keys are rejected; `--set key=value` overrides
//! are applied to the raw JSON before validation, so a bad override fails
//! exactly like a bad file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::PcmDeviceModel;
use crate::nn::{HwaNoiseSpec, TinyTransformerConfig};
use crate::perf::PipelineScenario;
use crate::train::{DriftEvalPlan, TaskKind, TaskSizes, TrainConfig};
use crate::{Error, Result};

/// Converter bit widths. Bounds and affine corrections are calibrated per
/// tile at deployment, so only the resolutions are configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterBits {
    pub dac_bits: u32,
    pub adc_bits: u32,
}

impl Default for ConverterBits {
    fn default() -> Self {
        ConverterBits { dac_bits: 8, adc_bits: 8 }
    }
}

/// Synthetic-task selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    #[serde(flatten)]
    pub kind: TaskKind,
    pub sizes: TaskSizes,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig { kind: TaskKind::token_majority(), sizes: TaskSizes::default() }
    }
}

/// Drift-sweep settings; labels resolve against the device model's `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub times: Vec<String>,
    pub trials: usize,
    pub gdc: bool,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            times: ["0s", "1h", "1d", "1w", "1m", "1y", "10y"].iter().map(|s| s.to_string()).collect(),
            trials: 10,
            gdc: true,
        }
    }
}

/// Latency-model sweep grids plus the scenario prototype carrying cluster
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerfConfig {
    pub shapes: Vec<(usize, usize)>,
    pub t_int_ns: Vec<f64>,
    pub t_values: Vec<usize>,
    pub scenario: PipelineScenario,
}

impl Default for PerfConfig {
    fn default() -> Self {
        let (shapes, t_int_ns, t_values) = crate::perf::reference_grids();
        PerfConfig { shapes, t_int_ns, t_values, scenario: PipelineScenario::default() }
    }
}

/// The full experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub pcm: PcmDeviceModel,
    pub converters: ConverterBits,
    pub model: TinyTransformerConfig,
    /// Digital pretraining phase (produces the meta-weights).
    pub pretrain: TrainConfig,
    /// Adapter training phase under hardware constraints.
    pub train: TrainConfig,
    pub noise: HwaNoiseSpec,
    pub task: TaskConfig,
    pub drift: DriftConfig,
    pub perf: PerfConfig,
    /// Per-channel weight clip in standard deviations at deployment.
    pub clip_sigma: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            pcm: PcmDeviceModel::default(),
            converters: ConverterBits::default(),
            model: TinyTransformerConfig::default(),
            pretrain: TrainConfig { lr: 3e-3, epochs: 20, batch_size: 32, ..Default::default() },
            train: TrainConfig { lr: 2e-3, epochs: 15, batch_size: 32, ..Default::default() },
            noise: HwaNoiseSpec::default(),
            task: TaskConfig::default(),
            drift: DriftConfig::default(),
            perf: PerfConfig::default(),
            clip_sigma: 3.0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.pcm.validate()?;
        self.model.validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        self.noise.validate()?;
        crate::quant::validate(self.converters.dac_bits, 1.0)?;
        crate::quant::validate(self.converters.adc_bits, 1.0)?;
        if !(self.clip_sigma > 0.0) {
            return Err(Error::Config("clip_sigma must be > 0".into()));
        }
        if self.task.sizes.vocab != self.model.vocab {
            return Err(Error::Config(format!(
                "task vocab {} != model vocab {}",
                self.task.sizes.vocab, self.model.vocab
            )));
        }
        if self.task.sizes.seq_len > self.model.max_seq {
            return Err(Error::Config(format!(
                "task seq_len {} exceeds model max_seq {}",
                self.task.sizes.seq_len, self.model.max_seq
            )));
        }
        self.drift_plan()?;
        if self.perf.shapes.is_empty() || self.perf.t_int_ns.is_empty() || self.perf.t_values.is_empty()
        {
            return Err(Error::Config("perf grids must be non-empty".into()));
        }
        self.perf.scenario.validate()?;
        Ok(())
    }

    /// Resolve the drift labels against the device reference time.
    pub fn drift_plan(&self) -> Result<DriftEvalPlan> {
        DriftEvalPlan::from_labels(&self.drift.times, self.pcm.t0, self.drift.trials, self.drift.gdc)
    }
}

/// Set one dotted-path key in a JSON document. The value string is parsed as
/// JSON when possible and treated as a bare string otherwise.
pub fn apply_override(root: &mut serde_json::Value, key: &str, value: &str) -> Result<()> {
    let parsed: serde_json::Value = match serde_json::from_str(value) {
        Ok(v) => v,
        Err(_) => serde_json::Value::String(value.to_string()),
    };
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' has an empty segment")));
    }
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}': '{part}' is not an object")))?
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let last = parts[parts.len() - 1];
    cursor
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override key '{key}' does not end in an object")))?
        .insert(last.to_string(), parsed);
    Ok(())
}

/// Parse a `key=value` argument.
pub fn parse_set_arg(arg: &str) -> Result<(String, String)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set '{arg}' is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Load a config file (or the built-in defaults), apply `--set` overrides
/// before validation, then the `--seed` and `--out` flags.
pub fn load_config(
    path: Option<&Path>,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExperimentConfig> {
    let mut value: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(ExperimentConfig::default()).expect("defaults serialize"),
    };
    for s in sets {
        let (k, v) = parse_set_arg(s)?;
        apply_override(&mut value, &k, &v)?;
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn default_roundtrips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        v.as_object_mut().unwrap().insert("bogus".into(), serde_json::json!(1));
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());

        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut v, "pcm.bogus_field", "3").unwrap();
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }

    #[test]
    fn overrides_apply_before_validation() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut v, "pcm.g_max", "30.5").unwrap();
        apply_override(&mut v, "drift.trials", "3").unwrap();
        apply_override(&mut v, "output_dir", "runs/a").unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.pcm.g_max, 30.5);
        assert_eq!(cfg.drift.trials, 3);
        assert_eq!(cfg.output_dir, PathBuf::from("runs/a"));
    }

    #[test]
    fn invalid_override_fails_validation_like_a_file_would() {
        let mut v = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut v, "pcm.g_max", "-5").unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn set_arg_parsing() {
        assert!(parse_set_arg("a.b=3").is_ok());
        assert!(parse_set_arg("nonsense").is_err());
    }

    #[test]
    fn drift_labels_resolve_against_t0() {
        let cfg = ExperimentConfig::default();
        let plan = cfg.drift_plan().unwrap();
        assert_eq!(plan.times[0].seconds, cfg.pcm.t0);
        assert_eq!(plan.times.len(), 7);
    }
}
