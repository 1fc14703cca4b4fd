use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dcore::{CustomOp, Tensor};
use crate::error::{Error, Result};

/// Smallest admissible `|det W|`.
pub const SINGULAR_DET: f64 = 1e-12;

fn to_matrix(w: &Tensor) -> Result<DMatrix<f64>> {
    let n = w.rows();
    if w.cols() != n {
        return Err(Error::dim("invconv", format!("weight {:?} is not square", w.shape())));
    }
    Ok(DMatrix::from_row_slice(n, n, w.data()))
}

fn from_matrix(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Tensor::matrix(r, c, data).expect("shape")
}

/// Channel-mixing `1×1` convolution: `z[t] = W · x[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvConvParams {
    pub weight: Tensor,
}

impl InvConvParams {
    pub fn new(weight: Tensor) -> Result<Self> {
        to_matrix(&weight)?;
        Ok(InvConvParams { weight })
    }

    /// Random orthogonal matrix (`|det| = 1`).
    pub fn random_orthogonal<R: Rng>(channels: usize, rng: &mut R) -> Self {
        InvConvParams {
            weight: random_orthogonal(channels, rng),
        }
    }

    pub fn log_abs_det(&self) -> Result<f64> {
        log_abs_det(&self.weight)
    }

    /// Returns `(x Wᵀ, T · ln|det W|)` for `x: [T × C]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, f64)> {
        let lad = self.log_abs_det()?;
        let w = to_matrix(&self.weight)?;
        if x.cols() != w.nrows() {
            return Err(Error::dim("invconv", "channel count differs from weight"));
        }
        let z = apply_rows(x, &w);
        Ok((z, x.rows() as f64 * lad))
    }

    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        let inv = inverse(&self.weight)?;
        if z.cols() != inv.rows() {
            return Err(Error::dim("invconv", "channel count differs from weight"));
        }
        Ok(apply_rows(z, &to_matrix(&inv)?))
    }
}

fn apply_rows(x: &Tensor, w: &DMatrix<f64>) -> Tensor {
    let c = w.nrows();
    let mut out = vec![0.0; x.numel()];
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        for i in 0..c {
            out[r * c + i] = (0..c).map(|j| w[(i, j)] * row[j]).sum();
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape")
}

pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Tensor {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    // sign fix makes the draw Haar-distributed
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    from_matrix(&q)
}

pub fn log_abs_det(w: &Tensor) -> Result<f64> {
    let det = to_matrix(w)?.lu().determinant();
    if !(det.abs() > SINGULAR_DET) {
        return Err(Error::Singular(det.abs()));
    }
    Ok(det.abs().ln())
}

pub fn inverse(w: &Tensor) -> Result<Tensor> {
    let m = to_matrix(w)?;
    let det = m.clone().lu().determinant();
    if !(det.abs() > SINGULAR_DET) {
        return Err(Error::Singular(det.abs()));
    }
    let inv = m.try_inverse().ok_or(Error::Singular(det.abs()))?;
    Ok(from_matrix(&inv))
}

/// Tape operation `W ↦ ln|det W|` with gradient `W⁻ᵀ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogAbsDetOp;

impl CustomOp for LogAbsDetOp {
    fn name(&self) -> &'static str {
        "log_abs_det"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(Tensor::scalar(log_abs_det(inputs[0])?))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let g = grad.data()[0];
        let inv_t = inverse(inputs[0])?.transpose();
        Ok(vec![Some(inv_t.map(|v| v * g))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight() {
        let p = InvConvParams::new(Tensor::eye(3)).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (z, ld) = p.forward(&x).unwrap();
        assert_eq!(z, x);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn swap_weight_is_volume_preserving() {
        let p = InvConvParams::new(Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()).unwrap();
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (z, ld) = p.forward(&x).unwrap();
        assert_eq!(z.data(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(ld, 0.0);
        assert_eq!(p.inverse(&z).unwrap(), x);
    }

    #[test]
    fn scaled_identity_logdet() {
        let p = InvConvParams::new(Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap()).unwrap();
        let (_, ld) = p.forward(&Tensor::zeros(&[3, 2])).unwrap();
        assert!((ld - 3.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn singular_weight_is_rejected() {
        let p = InvConvParams::new(Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap()).unwrap();
        assert!(matches!(p.forward(&Tensor::zeros(&[1, 2])), Err(Error::Singular(_))));
        assert!(matches!(p.inverse(&Tensor::zeros(&[1, 2])), Err(Error::Singular(_))));
    }

    #[test]
    fn orthogonal_init_has_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..8 {
            let p = InvConvParams::random_orthogonal(n, &mut rng);
            assert!(p.log_abs_det().unwrap().abs() < 1e-12);
        }
    }
}
