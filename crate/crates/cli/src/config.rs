use std::path::{Path, PathBuf};

use ldit_core::dit::ModelConfig;
use ldit_core::layout::{GeneratorConfig, LayoutThresholds};
use ldit_core::synthetic::SceneConfig;
use ldit_core::trainer::{EvalConfig, ExperimentConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Everything a subcommand reads. Each field can be set from a JSON file
/// and overridden with `--section.field=value`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scene: SceneConfig,
    pub eval: EvalConfig,
    pub layout: LayoutThresholds,
    pub generator: GeneratorConfig,
    pub paths: Paths,
    pub train_loop: TrainLoop,
    pub layout_gen: LayoutGen,
    pub layout_eval: LayoutEval,
    pub ablate: Ablate,
    pub cam: CamDump,
    pub infer: Infer,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Every artifact goes here.
    pub out: String,
    /// Layout file read by `layout-eval`.
    pub input: String,
    /// Checkpoint read by `eval`, `cam-dump` and `infer`. Empty means an
    /// untrained model initialized from `train.seed`.
    pub checkpoint: String,
    /// Checkpoint `train` continues from.
    pub resume: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainLoop {
    /// Save `ckpt_{step}.bin` every this many steps; 0 keeps only the final
    /// checkpoint.
    pub checkpoint_every: u64,
    /// Evaluate the final model on the held-out scenes.
    pub evaluate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutGen {
    /// Panel count; 0 takes it from `chars`.
    pub panels: usize,
    /// Characters per panel; empty means one each.
    pub chars: Vec<usize>,
    pub seed: u64,
    pub aspect_ratio: f64,
}

impl Default for LayoutGen {
    fn default() -> Self {
        LayoutGen {
            panels: 0,
            chars: Vec::new(),
            seed: 0,
            aspect_ratio: 1.0 / 1.414,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutEval {
    /// Expected characters per panel; empty scores the page against its own
    /// counts.
    pub chars: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// `train.steps_single` and `train.steps_multi` as configured.
    #[default]
    Scaled,
    /// 6000 + 3000 steps.
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablate {
    pub budget: Budget,
    /// Training seeds; the tables are averaged over them.
    pub seeds: Vec<u64>,
}

impl Default for Ablate {
    fn default() -> Self {
        Ablate {
            budget: Budget::Scaled,
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CamDump {
    /// Index into the held-out scenes.
    pub scene: usize,
    /// Pixels per heatmap cell.
    pub scale: usize,
}

impl Default for CamDump {
    fn default() -> Self {
        CamDump { scene: 0, scale: 8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Infer {
    /// Target boxes `[w_start, h_start, w_end, h_end]` in noise-grid units.
    pub boxes: Vec<[f64; 4]>,
    /// Reference images (binary PPM), one per box. Empty takes the subjects
    /// of the synthetic scene `scene_seed`.
    pub references: Vec<String>,
    pub scene_seed: u64,
    /// Seeds the initial noise.
    pub seed: u64,
}

impl RunConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            scene: self.scene.clone(),
            eval: self.eval.clone(),
        }
        .resolved()
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        if self.paths.out.is_empty() {
            return Err(CliError::Usage("--out is required".into()));
        }
        Ok(PathBuf::from(&self.paths.out))
    }
}

/// Reads the optional config file and applies `overrides` in order.
pub fn build(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("config serializes");
    if let Some(path) = file {
        let text =
            std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let from_file: RunConfig =
            serde_json::from_slice(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        value = serde_json::to_value(from_file).expect("config serializes");
    }
    for (key, raw) in overrides {
        set_key(&mut value, key, raw)?;
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn set_key(root: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    let mut node = root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| CliError::Usage(format!("unknown flag --{key}")))?;
    }
    // Values are JSON where they parse as JSON and strings otherwise.
    *node = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(_) if node.is_string() || !node.is_object() && !node.is_array() => Value::String(raw.to_string()),
        Err(e) => return Err(CliError::Usage(format!("--{key}: {e}"))),
    };
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = build(
            None,
            &[
                kv("train.lr", "0.001"),
                kv("eval.detector.min_pixels", "7"),
                kv("paths.out", "x"),
            ],
        )
        .unwrap();
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.eval.detector.min_pixels, 7);
        assert_eq!(c.paths.out, "x");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(build(None, &[kv("train.nope", "1")]), Err(CliError::Usage(_))));
        assert!(matches!(
            build(None, &[kv("train.lr", "fast")]),
            Err(CliError::Usage(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, br#"{"train": {"lr": 0.1, "extra": 1}}"#).unwrap();
        assert!(matches!(build(Some(&p), &[]), Err(CliError::Usage(_))));
    }

    #[test]
    fn echoed_config_rebuilds_itself() {
        let c = build(
            None,
            &[kv("layout_gen.chars", "[2,1,0,3]"), kv("ablate.budget", "paper")],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, serde_json::to_vec(&c).unwrap()).unwrap();
        assert_eq!(build(Some(&p), &[]).unwrap(), c);
    }
}
