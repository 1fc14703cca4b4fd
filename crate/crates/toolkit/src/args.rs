use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pflow_core::flows::{AuxFeature, CouplingPreset, Feature, ModelConfig, ModelKind};
use pflow_core::prep::Filler;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ToolError, ToolResult};

#[derive(Debug, Parser)]
#[command(name = "pflow", version, about = "Flow models for F0 and energy contours")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus.
    Gen(GenArgs),
    /// Write the model-input features of a corpus for inspection.
    Prep(PrepArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Draw contours from a trained model.
    Sample(SampleArgs),
    /// Compare sampled tracks against references.
    Eval(EvalArgs),
    /// Run the invertibility, log-determinant and gradient suites.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Bgap,
    Agap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureArg {
    F0,
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxArg {
    Diff,
    Cwt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillerArg {
    /// Negative log distance to the nearest voiced frame.
    Dtx,
    /// Learned per-phoneme negative offset.
    Bias,
    /// Linear interpolation across gaps.
    Interp,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingArg {
    Affine,
    Spline,
    /// Bipartite: 2 affine steps nearest the data, 4 spline steps.
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamsArg {
    Final,
    Best,
}

/// Model structure flags shared by `prep` and `train`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelFlags {
    #[arg(long, value_enum, default_value = "bgap")]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value = "f0")]
    pub feature: FeatureArg,
    #[arg(long, value_enum, default_value = "diff")]
    pub aux: AuxArg,
    /// Defaults: dtx for bgap, bias for agap, none for energy.
    #[arg(long, value_enum)]
    pub filler: Option<FillerArg>,
    /// Defaults: hybrid for bgap, spline for agap.
    #[arg(long, value_enum)]
    pub coupling: Option<CouplingArg>,
    /// Feed the raw text context instead of the voiced-aware merge.
    #[arg(long)]
    pub no_voiced_context: bool,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub context_channels: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Defaults to the largest phoneme id in the corpus plus one.
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

impl ModelFlags {
    pub fn to_config(&self, corpus_vocab: usize) -> ToolResult<ModelConfig> {
        let kind = match self.model {
            ModelArg::Bgap => ModelKind::Bgap,
            ModelArg::Agap => ModelKind::Agap,
        };
        let preset = match self.coupling {
            Some(CouplingArg::Affine) => CouplingPreset::Affine,
            Some(CouplingArg::Spline) => CouplingPreset::Spline,
            Some(CouplingArg::Hybrid) => CouplingPreset::Hybrid,
            None if kind == ModelKind::Bgap => CouplingPreset::Hybrid,
            None => CouplingPreset::Spline,
        };
        let mut cfg = match (self.feature, kind) {
            (FeatureArg::Energy, k) => ModelConfig::energy(k, preset),
            (FeatureArg::F0, ModelKind::Bgap) => ModelConfig::bgap(preset),
            (FeatureArg::F0, ModelKind::Agap) => ModelConfig::agap(preset),
        };
        cfg.feature = match self.feature {
            FeatureArg::F0 => Feature::F0,
            FeatureArg::Energy => Feature::Energy,
        };
        cfg.aux = match self.aux {
            AuxArg::Diff => AuxFeature::Diff,
            AuxArg::Cwt => AuxFeature::Cwt,
        };
        if let Some(f) = self.filler {
            cfg.preproc.filler = match f {
                FillerArg::Dtx => Filler::DistanceTransform,
                FillerArg::Bias => Filler::UnvoicedBias,
                FillerArg::Interp => Filler::LinearInterp,
                FillerArg::None => Filler::None,
            };
        } else if cfg.aux == AuxFeature::Cwt {
            cfg.preproc.filler = Filler::LinearInterp;
        }
        cfg.voiced_context = !self.no_voiced_context;
        if let Some(n) = self.group_size {
            cfg.preproc.group_size = n;
        }
        if let Some(c) = self.context_channels {
            cfg.context_channels = c;
            cfg.context_proj = c;
        }
        if let Some(h) = self.hidden {
            cfg.hidden = h;
            cfg.classifier_hidden = h;
        }
        cfg.vocab_size = self.vocab_size.unwrap_or(corpus_vocab);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Autoregressive models with the distance filler are allowed but
    /// known to produce unnatural contours.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.model == ModelArg::Agap && self.filler == Some(FillerArg::Dtx) {
            w.push("autoregressive model with the distance filler tends to yield unnatural contours".into());
        }
        w
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub utterances: usize,
    #[arg(long, default_value_t = 150)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 300)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 48)]
    pub vocab_size: usize,
    /// Frames a voiced run's last phoneme may spill into the next gap.
    #[arg(long, default_value_t = 0)]
    pub boundary_jitter: usize,
    #[arg(long)]
    pub force: bool,
    /// JSON object (inline or a file path) overriding any flag.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PrepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value_t = 5000)]
    pub steps: u64,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Autoregressive crop length in groups.
    #[arg(long, default_value_t = 32)]
    pub crop_len: usize,
    #[arg(long, default_value_t = 1000)]
    pub checkpoint_every: u64,
    #[arg(long, default_value_t = 1.0)]
    pub voiced_bce_weight: f64,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Training output directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Corpus providing phoneme sequences (and reference energy).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 30)]
    pub num_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only the first N utterances.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_enum, default_value = "final")]
    pub params: ParamsArg,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Corpus holding the reference tracks.
    #[arg(long)]
    pub reference: PathBuf,
    /// Directory of sampled tracks named `<id>_s<k>.csv` (or `<id>.csv`).
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<String>,
}

/// Applies a `--config` JSON object on top of parsed flags. Keys are flag
/// names (`-` or `_`); unknown keys are usage errors.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(args: &T, config: Option<&str>) -> ToolResult<T> {
    let Some(spec) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(args).expect("flags serialize"))
            .expect("flags round trip"));
    };
    let text = if spec.trim_start().starts_with(['{', '[']) {
        spec.to_string()
    } else {
        std::fs::read_to_string(spec).map_err(|e| ToolError::io(spec, e))?
    };
    let overrides: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ToolError::Usage(format!("--config: {e}")))?;
    let serde_json::Value::Object(overrides) = overrides else {
        return Err(ToolError::Usage("--config must be a JSON object".into()));
    };
    let mut base = serde_json::to_value(args).expect("flags serialize");
    let obj = base.as_object_mut().expect("flags serialize to an object");
    for (k, v) in overrides {
        let key = k.replace('-', "_");
        if !obj.contains_key(&key) {
            return Err(ToolError::Usage(format!("--config: unknown key `{k}`")));
        }
        obj.insert(key, v);
    }
    serde_json::from_value(base).map_err(|e| ToolError::Usage(format!("--config: {e}")))
}
