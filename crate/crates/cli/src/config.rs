//! Run configuration: one JSON document with a section per module, plus
//! `--set dotted.path=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use textar_core::geometry::GeometryConfig;
use textar_core::model::ModelConfig;
use textar_core::synthdoc::SynthConfig;
use textar_core::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub batch_windows: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { batch_windows: 16 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Starting point for the `model` section: desk, full, toy or baseline.
    pub model_preset: Option<String>,
    pub geometry: GeometryConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Defaults, then the file (if any), then each override in order. Unknown
    /// keys anywhere are rejected.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        if !doc.is_object() {
            return Err(CliError::Validation("config must be a JSON object".into()));
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let preset = match doc.get("model_preset") {
            None | Some(Value::Null) => ModelConfig::default(),
            Some(Value::String(name)) => ModelConfig::preset(name)?,
            Some(other) => return Err(CliError::Validation(format!("model_preset must be a string, got {other}"))),
        };
        let mut base = serde_json::to_value(RunConfig { model: preset, ..Default::default() })
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        merge(&mut base, doc);
        let cfg: RunConfig = serde_json::from_value(base).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.geometry.validate()?;
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.batch_windows == 0 {
            return Err(CliError::Validation("eval.batch_windows must be at least 1".into()));
        }
        Ok(())
    }
}

/// Deep-merges `overlay` into `base`; objects merge key by key, anything
/// else replaces. Keys absent from `base` are kept so deserialization can
/// reject them.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// `a.b.c=value`; the value is parsed as JSON and falls back to a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("--set expects path=value, got `{assignment}`")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Validation(format!("--set has an empty path segment in `{path}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Validation(format!("--set {path}: `{k}` is not inside an object")))?;
        node = obj.entry(k.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Validation(format!("--set {path}: parent is not an object")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_by_dotted_path() {
        let cfg = RunConfig::load(None, &["train.lr=0.001".into(), "geometry.m=3".into(), "train.stage=\"e2e\"".into()]).unwrap();
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.geometry.m, 3.0);
        assert_eq!(cfg.train.stage, textar_core::training::Stage::E2e);
        assert_eq!(cfg.model, ModelConfig::desk());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::load(None, &["train.lrr=1".into()]), Err(CliError::Validation(_))));
        assert!(matches!(RunConfig::load(None, &["bogus=1".into()]), Err(CliError::Validation(_))));
    }

    #[test]
    fn preset_then_overrides() {
        let cfg = RunConfig::load(None, &["model_preset=toy".into(), "model.d_model=64".into()]).unwrap();
        assert_eq!(cfg.model.s, ModelConfig::toy().s);
        assert_eq!(cfg.model.d_model, 64);
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(matches!(RunConfig::load(None, &["geometry.k=-1".into()]), Err(CliError::Validation(_))));
    }
}
