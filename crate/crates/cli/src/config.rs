use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use voxelpaint_core::masks::MaskGenParams;
use voxelpaint_core::metrics::LossWeights;
use voxelpaint_core::tensor::AdamConfig;
use voxelpaint_core::train::{LossRegion, TrainConfig};
use voxelpaint_core::{SsimParams, UNetConfig};

use crate::failure::{Failure, MissingInput};

const DEFAULT_CROP: [usize; 3] = [208, 208, 144];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub prepare: PrepareConfig,
    pub train: TrainSection,
    pub infer: InferConfig,
    pub evaluate: EvaluateConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            prepare: PrepareConfig::default(),
            train: TrainSection::default(),
            infer: InferConfig::default(),
            evaluate: EvaluateConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareConfig {
    /// Directory of `{case}-t1n` scans with `{case}-mask-unhealthy` tumor masks.
    pub input: PathBuf,
    pub masks: MaskGenParams,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("raw"),
            masks: MaskGenParams::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Output directory of `prepare`.
    pub data: PathBuf,
    pub epochs: usize,
    pub folds: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub loss_region: LossRegion,
    pub ssim: SsimParams,
    pub batch_size: usize,
    pub crop: [usize; 3],
    pub model: UNetConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: PathBuf::from("prepared"),
            epochs: t.epochs,
            folds: t.folds,
            adam: t.adam,
            loss: t.loss,
            loss_region: t.loss_region,
            ssim: t.ssim,
            batch_size: t.batch_size,
            crop: t.crop,
            model: t.model,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            folds: self.folds,
            adam: self.adam,
            loss: self.loss,
            loss_region: self.loss_region,
            ssim: self.ssim,
            batch_size: self.batch_size,
            seed,
            crop: self.crop,
            model: self.model,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    /// Directory holding `{id}-t1n-voided` and `{id}-mask` volumes.
    pub input: PathBuf,
    /// One checkpoint, or several averaged as an ensemble.
    pub checkpoints: Vec<PathBuf>,
    pub crop: [usize; 3],
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("prepared"),
            checkpoints: Vec::new(),
            crop: DEFAULT_CROP,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Directory with `{id}-t1n`, `{id}-mask-healthy` and optionally
    /// `{id}-mask-unhealthy`.
    pub ground_truth: PathBuf,
    pub predictions: PathBuf,
    /// Prediction file name is `{id}{pred_suffix}.nii[.gz]`.
    pub pred_suffix: String,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            ground_truth: PathBuf::from("prepared"),
            predictions: PathBuf::from("out"),
            pred_suffix: "-t1n-inference".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub summary: PathBuf,
    pub title: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            summary: PathBuf::from("out/summary.json"),
            title: "Validation results".into(),
        }
    }
}

pub fn load(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    if !path.exists() {
        return Err(MissingInput(path.to_path_buf()).into());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::InvalidConfig(format!("{}: {e}", path.display())).into())
}

/// Prints the resolved config to stderr and stores it as
/// `{out}/{command}-config.json`.
pub fn echo(config: &RunConfig, command: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(config)?;
    eprintln!("resolved config:\n{text}");
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    let path = config.out.join(format!("{command}-config.json"));
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
