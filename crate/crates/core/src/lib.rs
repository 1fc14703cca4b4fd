//! Normalizing flows for low-dimensional, discontinuous prosody contours
//! (F0 with voiced/unvoiced structure, frame energy).

pub mod context;
pub mod coupling;
pub mod dcore;
pub mod error;
pub mod eval;
pub mod flows;
pub mod prep;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
