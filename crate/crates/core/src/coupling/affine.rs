use crate::dcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Diagonal affine map `y = D ⊙ x + β` with positive `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParams {
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineParams {
    pub fn new(scale: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if scale.len() != bias.len() {
            return Err(Error::dim("affine", "scale and bias lengths differ"));
        }
        if let Some(d) = scale.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::Parameterization(format!(
                "affine scale must be positive and finite, got {d}"
            )));
        }
        Ok(AffineParams { scale, bias })
    }

    pub fn identity(n: usize) -> Self {
        AffineParams {
            scale: vec![1.0; n],
            bias: vec![0.0; n],
        }
    }

    fn index(&self, x: &Tensor, flat: usize) -> Result<usize> {
        let n = self.scale.len();
        if n == x.numel() {
            Ok(flat)
        } else if n == x.cols() {
            Ok(flat % n)
        } else {
            Err(Error::dim(
                "affine",
                format!("{} parameters for input of shape {:?}", n, x.shape()),
            ))
        }
    }

    /// Returns `(D ⊙ x + β, Σ ln D)` summed over every transformed element.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, f64)> {
        let mut y = x.clone();
        let mut logdet = 0.0;
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            let k = self.index(x, i)?;
            *v = self.scale[k] * *v + self.bias[k];
            logdet += self.scale[k].ln();
        }
        Ok((y, logdet))
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        let mut x = y.clone();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            let k = self.index(y, i)?;
            *v = (*v - self.bias[k]) / self.scale[k];
        }
        Ok(x)
    }
}

/// Affine transform driven by predictor output `raw: [R × 2D]`
/// (`D` log-scales then `D` biases). Returns `(y, per-element log|dy/dx|)`.
pub fn affine_forward_tape(tape: &mut Tape, x: Var, raw: Var) -> Result<(Var, Var)> {
    let d = tape.cols(x);
    if tape.cols(raw) != 2 * d || tape.rows(raw) != tape.rows(x) {
        return Err(Error::dim(
            "affine",
            format!("x {:?} needs raw params [R×{}], got {:?}", tape.shape(x), 2 * d, tape.shape(raw)),
        ));
    }
    let log_scale = tape.slice_cols(raw, 0, d)?;
    let bias = tape.slice_cols(raw, d, d)?;
    let scale = tape.exp(log_scale)?;
    let scaled = tape.mul(scale, x)?;
    let y = tape.add(scaled, bias)?;
    Ok((y, log_scale))
}

/// Inverse of [`affine_forward_tape`] for plain values.
pub fn affine_inverse_rows(y: &Tensor, raw: &Tensor) -> Result<Tensor> {
    let d = y.cols();
    if raw.cols() != 2 * d || raw.rows() != y.rows() {
        return Err(Error::dim("affine_inverse", "raw parameter shape mismatch"));
    }
    let mut x = y.clone();
    for r in 0..y.rows() {
        let p = raw.row_slice(r);
        for c in 0..d {
            let v = &mut x.data_mut()[r * d + c];
            *v = (*v - p[d + c]) * (-p[c]).exp();
        }
    }
    if !x.is_finite() {
        return Err(Error::Numeric {
            op: "affine_inverse".into(),
        });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_params() {
        let p = AffineParams::identity(3);
        let x = Tensor::row(&[1.0, -2.0, 0.5]);
        let (y, ld) = p.forward(&x).unwrap();
        assert_eq!(y, x);
        assert_eq!(ld, 0.0);
        assert_eq!(p.inverse(&x).unwrap(), x);
    }

    #[test]
    fn forced_arithmetic() {
        let p = AffineParams::new(vec![3.0], vec![1.0]).unwrap();
        let (y, ld) = p.forward(&Tensor::row(&[2.0])).unwrap();
        assert_eq!(y.data(), &[7.0]);
        assert_eq!(ld, 3f64.ln());
        assert_eq!(p.inverse(&Tensor::row(&[7.0])).unwrap().data(), &[2.0]);
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        assert!(matches!(
            AffineParams::new(vec![1.0, 0.0], vec![0.0, 0.0]),
            Err(Error::Parameterization(_))
        ));
        assert!(AffineParams::new(vec![-1.0], vec![0.0]).is_err());
    }
}
