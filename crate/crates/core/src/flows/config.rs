use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingKind;
use crate::error::{Error, Result};
use crate::prep::{Filler, PreprocConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bgap,
    Agap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    F0,
    Energy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxFeature {
    Diff,
    Cwt,
}

/// Named coupling layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingPreset {
    Affine,
    Spline,
    /// Bipartite: affine in the 2 steps nearest the data, spline in the rest.
    Hybrid,
}

impl CouplingPreset {
    pub fn layout(self, kind: ModelKind) -> Vec<CouplingKind> {
        let steps = match kind {
            ModelKind::Bgap => 6,
            ModelKind::Agap => 2,
        };
        (0..steps)
            .map(|i| match self {
                CouplingPreset::Affine => CouplingKind::Affine,
                CouplingPreset::Spline => CouplingKind::Spline,
                CouplingPreset::Hybrid if i < 2 && kind == ModelKind::Bgap => CouplingKind::Affine,
                CouplingPreset::Hybrid => CouplingKind::Spline,
            })
            .collect()
    }
}

/// Everything needed to rebuild a model's structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub feature: Feature,
    pub aux: AuxFeature,
    /// Coupling per step; index 0 is the step nearest the data.
    pub couplings: Vec<CouplingKind>,
    pub bound: f64,
    pub bins: usize,
    pub preproc: PreprocConfig,
    pub vocab_size: usize,
    pub context_channels: usize,
    /// Width of the shared context projector.
    pub context_proj: usize,
    /// Hidden width of coupling predictors (dense or recurrent).
    pub hidden: usize,
    pub classifier_hidden: usize,
    /// Apply the voiced-aware merge to the text context.
    pub voiced_context: bool,
}

impl ModelConfig {
    pub fn bgap(preset: CouplingPreset) -> Self {
        ModelConfig {
            kind: ModelKind::Bgap,
            feature: Feature::F0,
            aux: AuxFeature::Diff,
            couplings: preset.layout(ModelKind::Bgap),
            bound: 3.0,
            bins: 24,
            preproc: PreprocConfig::default(),
            vocab_size: 48,
            context_channels: 32,
            context_proj: 32,
            hidden: 64,
            classifier_hidden: 32,
            voiced_context: true,
        }
    }

    pub fn agap(preset: CouplingPreset) -> Self {
        ModelConfig {
            kind: ModelKind::Agap,
            couplings: preset.layout(ModelKind::Agap),
            bound: 6.0,
            hidden: 32,
            preproc: PreprocConfig {
                filler: Filler::UnvoicedBias,
                ..PreprocConfig::default()
            },
            ..Self::bgap(preset)
        }
    }

    /// Energy modeling: grouping 4 with centered differences.
    pub fn energy(kind: ModelKind, preset: CouplingPreset) -> Self {
        let base = match kind {
            ModelKind::Bgap => Self::bgap(preset),
            ModelKind::Agap => Self::agap(preset),
        };
        ModelConfig {
            feature: Feature::Energy,
            preproc: PreprocConfig {
                group_size: 4,
                filler: Filler::None,
                ..base.preproc.clone()
            },
            ..base
        }
    }

    /// Channels per frame before grouping.
    pub fn frame_channels(&self) -> usize {
        match (self.feature, self.aux) {
            (Feature::F0, AuxFeature::Cwt) => crate::prep::CWT_CHANNELS,
            _ => 2,
        }
    }

    /// Channels per grouped row seen by the flow.
    pub fn width(&self) -> usize {
        self.preproc.group_size * self.frame_channels()
    }

    pub fn validate(&self) -> Result<()> {
        self.preproc.validate()?;
        let steps = match self.kind {
            ModelKind::Bgap => 6,
            ModelKind::Agap => 2,
        };
        if self.couplings.len() != steps {
            return Err(Error::Config(format!(
                "{:?} needs {steps} coupling kinds, got {}",
                self.kind,
                self.couplings.len()
            )));
        }
        if !(self.bound > 0.0) || self.bins == 0 {
            return Err(Error::Config("spline bound and bins must be positive".into()));
        }
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("context_channels", self.context_channels),
            ("context_proj", self.context_proj),
            ("hidden", self.hidden),
            ("classifier_hidden", self.classifier_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.width() < 2 && self.kind == ModelKind::Bgap {
            return Err(Error::Config("bipartite coupling needs at least 2 channels".into()));
        }
        let filler = self.preproc.filler;
        match (self.feature, self.aux) {
            (Feature::Energy, AuxFeature::Cwt) => {
                return Err(Error::Config("wavelet features apply to F0 only".into()))
            }
            (Feature::Energy, _) if filler != Filler::None => {
                return Err(Error::Config("energy has no unvoiced gaps; use filler none".into()))
            }
            (Feature::F0, AuxFeature::Cwt) if filler == Filler::UnvoicedBias => {
                return Err(Error::Config(
                    "the unvoiced bias cannot be combined with wavelet features".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_widths() {
        assert_eq!(ModelConfig::bgap(CouplingPreset::Hybrid).width(), 4);
        let mut cwt = ModelConfig::bgap(CouplingPreset::Hybrid);
        cwt.aux = AuxFeature::Cwt;
        assert_eq!(cwt.width(), 24);
        assert_eq!(ModelConfig::energy(ModelKind::Bgap, CouplingPreset::Hybrid).width(), 8);
    }

    #[test]
    fn hybrid_layout_puts_affine_nearest_data() {
        use CouplingKind::*;
        assert_eq!(
            CouplingPreset::Hybrid.layout(ModelKind::Bgap),
            vec![Affine, Affine, Spline, Spline, Spline, Spline]
        );
        assert_eq!(CouplingPreset::Hybrid.layout(ModelKind::Agap), vec![Spline, Spline]);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let c = ModelConfig::agap(CouplingPreset::Spline);
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
        let mut bad = c.clone();
        bad.couplings.pop();
        assert!(matches!(ModelConfig::from_json(&bad.to_json()), Err(Error::Config(_))));
    }
}
