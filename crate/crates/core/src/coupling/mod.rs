//! Invertible building blocks with exact log-determinants.

mod affine;
mod invconv;
pub mod spline;

pub use affine::{affine_forward_tape, affine_inverse_rows, AffineParams};
pub use invconv::{inverse as invert_matrix, log_abs_det, random_orthogonal, InvConvParams, LogAbsDetOp, SINGULAR_DET};
pub use spline::{spline_inverse_rows, Bins, SplineOp, SplineParams};

use serde::{Deserialize, Serialize};

use crate::dcore::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingKind {
    Affine,
    Spline,
}

impl CouplingKind {
    /// Predictor outputs needed per transformed channel.
    pub fn params_per_dim(self, bins: usize) -> usize {
        match self {
            CouplingKind::Affine => 2,
            CouplingKind::Spline => spline::raw_params_per_dim(bins),
        }
    }
}

/// Channel partition for a coupling layer: `transformed` is modified using
/// parameters predicted from `conditioning`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingSplit {
    pub transformed: std::ops::Range<usize>,
    pub conditioning: std::ops::Range<usize>,
}

impl CouplingSplit {
    /// First `⌈C/2⌉` channels are transformed.
    pub fn halves(channels: usize) -> Result<Self> {
        if channels < 2 {
            return Err(Error::Contract(format!(
                "coupling needs at least 2 channels, got {channels}"
            )));
        }
        let a = channels.div_ceil(2);
        Ok(CouplingSplit {
            transformed: 0..a,
            conditioning: a..channels,
        })
    }
}

/// Reverses frame order of `x: [T × C]`. Volume preserving and an involution.
pub fn reverse_time(x: &Tensor) -> Tensor {
    let (t, c) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(x.numel());
    for r in (0..t).rev() {
        out.extend_from_slice(x.row_slice(r));
    }
    Tensor::new(x.shape().to_vec(), out).unwrap_or_else(|_| Tensor::zeros(&[t, c]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reverse_examples() {
        let x = Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(reverse_time(&x).data(), &[3.0, 2.0, 1.0]);
        assert_eq!(reverse_time(&reverse_time(&x)), x);
        let one = Tensor::matrix(1, 2, vec![4.0, 5.0]).unwrap();
        assert_eq!(reverse_time(&one), one);
    }

    #[test]
    fn split_halves() {
        let s = CouplingSplit::halves(5).unwrap();
        assert_eq!(s.transformed, 0..3);
        assert_eq!(s.conditioning, 3..5);
        assert!(CouplingSplit::halves(1).is_err());
    }
}
