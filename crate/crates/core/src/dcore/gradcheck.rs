use crate::error::{Error, Result};

/// One evaluation of a scalar function for finite differencing.
#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub value: f64,
    /// Discrete-branch fingerprint (see `Tape::branch_signature`).
    pub signature: u64,
}

impl From<f64> for Probe {
    fn from(value: f64) -> Self {
        Probe {
            value,
            signature: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink or branch.
    pub skipped: usize,
}

/// Relative error `|a−n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares `analytic` against central differences of `f` at `params`.
///
/// `indices` restricts the comparison to a subset of coordinates (all when
/// `None`). Perturbations that change the branch signature are skipped.
pub fn grad_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    indices: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<Probe>,
{
    if params.len() != analytic.len() {
        return Err(Error::dim("grad_check", "gradient length differs from parameters"));
    }
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let base = f(params)?;
    let mut x = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
    };
    for &i in idx {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x)?;
        x[i] = orig - eps;
        let minus = f(&x)?;
        x[i] = orig;
        if !plus.value.is_finite() || !minus.value.is_finite() {
            return Err(Error::Numeric {
                op: format!("grad_check probe of coordinate {i}"),
            });
        }
        if plus.signature != base.signature || minus.signature != base.signature {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = err;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let a = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| -> Result<Probe> {
            Ok((0.5 * x.iter().zip(&a).map(|(v, w)| w * v * v).sum::<f64>() + x[0]).into())
        };
        let x = [0.3, -1.1, 2.0];
        let grad: Vec<f64> = x
            .iter()
            .zip(&a)
            .enumerate()
            .map(|(i, (v, w))| w * v + if i == 0 { 1.0 } else { 0.0 })
            .collect();
        let r = grad_check(f, &x, &grad, 1e-6, None).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-8, "{}", r.max_rel_err);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let f = |x: &[f64]| -> Result<Probe> { Ok((x[0] * x[0]).into()) };
        let r = grad_check(f, &[1.0], &[3.0], 1e-6, None).unwrap();
        assert!(r.max_rel_err > 0.3);
        assert_eq!(r.worst_index, Some(0));
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let f = |x: &[f64]| -> Result<Probe> { Ok((1.0 / (x[0] - 1e-7)).ln().into()) };
        assert!(grad_check(f, &[0.0], &[0.0], 1e-6, None).is_err());
    }
}
