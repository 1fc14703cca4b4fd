//! Data transformations that raise dimensionality and fill unvoiced gaps.

mod cwt;
mod features;
mod group;
mod track;

pub use cwt::{cwt_decode, cwt_encode, CWT_CHANNELS, CWT_SCALES};
pub use features::{
    centered_diff, centered_diff_column, descale_f0, distance_fill, distance_to_voiced,
    linear_interp_fill, log_f0, scale_energy, scale_f0, Filler, PreprocConfig, ScaledF0,
};
pub use group::{group, group_frame_index, ungroup, GroupLayout, ModelInputTensor};
pub use track::SequenceTrack;
