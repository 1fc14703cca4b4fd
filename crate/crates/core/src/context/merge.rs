use rand::Rng;

use crate::dcore::{sigmoid, Activation, Dense, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Plain-value merge parameters, one entry per context channel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoicedMergeParams {
    pub s_voiced: Vec<f64>,
    pub b_voiced: Vec<f64>,
    pub s_unvoiced: Vec<f64>,
    pub b_unvoiced: Vec<f64>,
}

impl VoicedMergeParams {
    pub fn zeros(channels: usize) -> Self {
        VoicedMergeParams {
            s_voiced: vec![0.0; channels],
            b_voiced: vec![0.0; channels],
            s_unvoiced: vec![0.0; channels],
            b_unvoiced: vec![0.0; channels],
        }
    }
}

fn check_mask(op: &'static str, rows: usize, voiced: &[bool]) -> Result<()> {
    if voiced.len() != rows {
        return Err(Error::dim(op, format!("mask has {} frames, context has {rows}", voiced.len())));
    }
    Ok(())
}

/// Row `t` becomes `α ⊙ phi[t] + 0.01·β` with `α`, `β` drawn from the voiced
/// or unvoiced parameter set according to `voiced[t]`.
pub fn voiced_merge(phi: &Tensor, voiced: &[bool], p: &VoicedMergeParams) -> Result<Tensor> {
    check_mask("voiced_merge", phi.rows(), voiced)?;
    let c = phi.cols();
    for v in [&p.s_voiced, &p.b_voiced, &p.s_unvoiced, &p.b_unvoiced] {
        if v.len() != c {
            return Err(Error::dim("voiced_merge", format!("parameter length {} vs {c} channels", v.len())));
        }
    }
    let mut out = phi.clone();
    for (t, &is_v) in voiced.iter().enumerate() {
        let (s, b) = if is_v { (&p.s_voiced, &p.b_voiced) } else { (&p.s_unvoiced, &p.b_unvoiced) };
        for k in 0..c {
            let v = &mut out.data_mut()[t * c + k];
            *v = sigmoid(s[k]) * *v + 0.01 * b[k].tanh();
        }
    }
    Ok(out)
}

/// Trainable voiced-aware merge. Parameters are `[1 × C]` rows.
#[derive(Debug, Clone)]
pub struct VoicedMerge {
    pub s_voiced: ParamId,
    pub b_voiced: ParamId,
    pub s_unvoiced: ParamId,
    pub b_unvoiced: ParamId,
}

impl VoicedMerge {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let mut add = |n: &str| store.add(format!("{name}.{n}"), Tensor::zeros(&[1, channels]));
        VoicedMerge {
            s_voiced: add("s_voiced"),
            b_voiced: add("b_voiced"),
            s_unvoiced: add("s_unvoiced"),
            b_unvoiced: add("b_unvoiced"),
        }
    }

    pub fn params(&self, store: &ParamStore) -> VoicedMergeParams {
        let v = |id| store.value(id).data().to_vec();
        VoicedMergeParams {
            s_voiced: v(self.s_voiced),
            b_voiced: v(self.b_voiced),
            s_unvoiced: v(self.s_unvoiced),
            b_unvoiced: v(self.b_unvoiced),
        }
    }

    /// `α = sigmoid(M·[s_v; s_u])`, `β = tanh(M·[b_v; b_u])` with the
    /// constant selector `M = [V, 1 − V]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, phi: Var, voiced: &[bool]) -> Result<Var> {
        check_mask("voiced_merge", tape.rows(phi), voiced)?;
        let sel: Vec<f64> = voiced
            .iter()
            .flat_map(|&v| if v { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        let m = tape.constant(Tensor::matrix(voiced.len(), 2, sel)?)?;
        let sv = tape.param(store, self.s_voiced)?;
        let su = tape.param(store, self.s_unvoiced)?;
        let bv = tape.param(store, self.b_voiced)?;
        let bu = tape.param(store, self.b_unvoiced)?;
        let s = tape.concat_rows(&[sv, su])?;
        let b = tape.concat_rows(&[bv, bu])?;
        let a_pre = tape.matmul(m, s)?;
        let b_pre = tape.matmul(m, b)?;
        let alpha = tape.sigmoid(a_pre)?;
        let beta = tape.tanh(b_pre)?;
        let scaled = tape.mul(alpha, phi)?;
        let shift = tape.scale(beta, 0.01)?;
        tape.add(scaled, shift)
    }
}

/// Per-frame voiced/unvoiced classifier: two dense layers over context rows.
#[derive(Debug, Clone)]
pub struct VoicedClassifier {
    pub hidden: Dense,
    pub out: Dense,
}

impl VoicedClassifier {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, channels: usize, width: usize, rng: &mut R) -> Self {
        VoicedClassifier {
            hidden: Dense::new(store, &format!("{name}.hidden"), channels, width, Activation::Tanh, rng),
            out: Dense::new(store, &format!("{name}.out"), width, 1, Activation::Identity, rng),
        }
    }

    /// Logits `[T × 1]`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, phi: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, phi)?;
        self.out.forward(tape, store, h)
    }

    /// Mean binary cross-entropy against `target`, from logits.
    pub fn bce(&self, tape: &mut Tape, store: &ParamStore, phi: Var, target: &[bool]) -> Result<Var> {
        check_mask("voiced_bce", tape.rows(phi), target)?;
        let l = self.logits(tape, store, phi)?;
        let y: Vec<f64> = target.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let y = tape.constant(Tensor::matrix(target.len(), 1, y)?)?;
        let sp = tape.softplus(l)?;
        let yl = tape.mul(y, l)?;
        let per = tape.sub(sp, yl)?;
        tape.mean(per)
    }

    pub fn probabilities(&self, store: &ParamStore, phi: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(phi.clone())?;
        let l = self.logits(&mut tape, store, x)?;
        Ok(tape.value(l).data().iter().map(|v| sigmoid(*v)).collect())
    }

    pub fn predict_voiced(&self, store: &ParamStore, phi: &Tensor) -> Result<Vec<bool>> {
        Ok(threshold_voiced(&self.probabilities(store, phi)?))
    }
}

/// `p ≥ 0.5` is voiced.
pub fn threshold_voiced(probabilities: &[f64]) -> Vec<bool> {
    probabilities.iter().map(|p| *p >= 0.5).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_ties_are_voiced() {
        assert_eq!(threshold_voiced(&[0.6, 0.4, 0.5]), vec![true, false, true]);
    }

    #[test]
    fn zero_parameters_halve_the_context() {
        let phi = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let out = voiced_merge(&phi, &[true, false], &VoicedMergeParams::zeros(3)).unwrap();
        assert_eq!(out, phi.map(|v| 0.5 * v));
    }

    #[test]
    fn zero_classifier_predicts_all_voiced() {
        let mut store = ParamStore::new();
        let clf = VoicedClassifier {
            hidden: Dense::zeros(&mut store, "h", 3, 4, Activation::Tanh),
            out: Dense::zeros(&mut store, "o", 4, 1, Activation::Identity),
        };
        let phi = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 9.0]).unwrap();
        assert_eq!(clf.probabilities(&store, &phi).unwrap(), vec![0.5, 0.5]);
        assert_eq!(clf.predict_voiced(&store, &phi).unwrap(), vec![true, true]);
    }

    #[test]
    fn tape_merge_matches_value_merge() {
        let mut store = ParamStore::new();
        let m = VoicedMerge::new(&mut store, "m", 2);
        for (i, id) in [m.s_voiced, m.b_voiced, m.s_unvoiced, m.b_unvoiced].into_iter().enumerate() {
            *store.value_mut(id) = Tensor::matrix(1, 2, vec![0.3 * i as f64 - 0.4, 1.1 - i as f64]).unwrap();
        }
        let phi = Tensor::matrix(3, 2, vec![1.0, 2.0, -3.0, 0.5, 0.0, 7.0]).unwrap();
        let mask = [true, false, true];
        let mut tape = Tape::new();
        let x = tape.constant(phi.clone()).unwrap();
        let y = m.forward(&mut tape, &store, x, &mask).unwrap();
        let want = voiced_merge(&phi, &mask, &m.params(&store)).unwrap();
        assert!(tape.value(y).max_abs_diff(&want) < 1e-15);
    }
}
