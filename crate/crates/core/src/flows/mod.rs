//! Bipartite and autoregressive flow models over grouped prosody features.

mod autoregressive;
mod bipartite;
mod config;
mod model;
mod pipeline;

pub use autoregressive::{reverse_index, AgapStep, AutoregressiveFlow};
pub use bipartite::{BgapStep, BipartiteFlow};
pub use config::{AuxFeature, CouplingPreset, Feature, ModelConfig, ModelKind};
pub use model::{Batch, ContextEncoder, Encoded, FlowNet, ForwardVars, ProsodyModel, SampleOutput};
pub use pipeline::{assemble, Example};
