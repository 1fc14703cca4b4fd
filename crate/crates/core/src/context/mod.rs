//! Conditioning: duration-replicated phoneme embeddings, the voiced/unvoiced
//! classifier, the voiced-aware merge, and the learned unvoiced bias.

mod bias;
mod merge;
mod phoneme;

pub use bias::{apply_unvoiced_bias, bias_from_head, ScatterOp, UnvoicedBias};
pub use merge::{threshold_voiced, voiced_merge, VoicedClassifier, VoicedMerge, VoicedMergeParams};
pub use phoneme::{build_phi_text, ConditioningContext, PhonemeSeq};
