use std::collections::HashMap;

use rand::Rng;

use super::phoneme::PhonemeSeq;
use crate::dcore::{Activation, CustomOp, Dense, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Bias values per phoneme id from raw head outputs: `−relu(h)`.
pub fn bias_from_head(head: &[f64]) -> Vec<f64> {
    head.iter().map(|h| -h.max(0.0)).collect()
}

/// Adds `−relu(head[id])` to every unvoiced frame of the phoneme `id`.
/// `head` is indexed by phoneme id.
pub fn apply_unvoiced_bias(f0_log: &[f64], seq: &PhonemeSeq, voiced: &[bool], head: &[f64]) -> Result<Vec<f64>> {
    if f0_log.len() != voiced.len() || seq.frames() != f0_log.len() {
        return Err(Error::Contract(format!(
            "contour {} frames, mask {}, phonemes {}",
            f0_log.len(),
            voiced.len(),
            seq.frames()
        )));
    }
    seq.check_vocab(head.len())?;
    let bias = bias_from_head(head);
    Ok(f0_log
        .iter()
        .zip(voiced)
        .zip(seq.frame_ids())
        .map(|((&x, &v), id)| if v { x } else { x + bias[id] })
        .collect())
}

/// Regression head mapping each embedding row to one bias value.
#[derive(Debug, Clone)]
pub struct UnvoicedBias {
    pub head: Dense,
}

impl UnvoicedBias {
    /// The head's bias starts positive so the ReLU is active at init.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        let head = Dense::new(store, name, channels, 1, Activation::Identity, rng);
        store.value_mut(head.bias).data_mut()[0] = 0.3;
        UnvoicedBias { head }
    }

    /// `[V × 1]` non-positive biases from the embedding table `[V × C]`.
    pub fn table(&self, tape: &mut Tape, store: &ParamStore, embedding: Var) -> Result<Var> {
        let h = self.head.forward(tape, store, embedding)?;
        let r = tape.relu(h)?;
        tape.scale(r, -1.0)
    }
}

/// Fixed sparse linear map `y = S·b` from a column vector `b: [n × 1]` to an
/// output of shape `[rows × cols]`. Entries are `(output index, input
/// index, coefficient)` over flattened row-major positions.
#[derive(Debug, Clone, Default)]
pub struct ScatterOp {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl ScatterOp {
    pub fn new(rows: usize, cols: usize) -> Self {
        ScatterOp {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, out: usize, input: usize, coef: f64) {
        debug_assert!(out < self.rows * self.cols);
        self.entries.push((out, input, coef));
    }

    /// Merges duplicate `(out, input)` pairs.
    pub fn compact(&mut self) {
        let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
        for &(o, i, c) in &self.entries {
            *acc.entry((o, i)).or_insert(0.0) += c;
        }
        let mut e: Vec<_> = acc.into_iter().map(|((o, i), c)| (o, i, c)).collect();
        e.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        self.entries = e;
    }

    pub fn apply(&self, b: &[f64]) -> Result<Tensor> {
        let mut out = vec![0.0; self.rows * self.cols];
        for &(o, i, c) in &self.entries {
            let v = b.get(i).ok_or_else(|| {
                Error::dim("scatter", format!("input index {i} outside vector of length {}", b.len()))
            })?;
            out[o] += c * v;
        }
        Tensor::matrix(self.rows, self.cols, out)
    }
}

impl CustomOp for ScatterOp {
    fn name(&self) -> &'static str {
        "scatter"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.apply(inputs[0].data())
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let mut g = Tensor::zeros(inputs[0].shape());
        for &(o, i, c) in &self.entries {
            g.data_mut()[i] += c * grad.data()[o];
        }
        Ok(vec![Some(g)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_head_outputs() {
        assert_eq!(bias_from_head(&[0.3, -0.2]), vec![-0.3, -0.0]);
    }

    #[test]
    fn bias_only_touches_unvoiced_frames() {
        let seq = PhonemeSeq::new(vec![0, 1], vec![2, 2]).unwrap();
        let x = [1.0, 0.0, 0.0, 2.0];
        let out = apply_unvoiced_bias(&x, &seq, &[true, false, false, true], &[0.3, -0.2]).unwrap();
        assert_eq!(out, vec![1.0, -0.3, 0.0, 2.0]);
        let all = apply_unvoiced_bias(&x, &seq, &[true; 4], &[5.0, 5.0]).unwrap();
        assert_eq!(all, x.to_vec());
    }

    #[test]
    fn scatter_forward_and_adjoint() {
        let mut op = ScatterOp::new(2, 2);
        op.push(0, 1, 2.0);
        op.push(3, 0, -1.0);
        op.push(3, 0, 0.5);
        op.compact();
        assert_eq!(op.entries.len(), 2);
        let b = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        let y = op.forward(&[&b]).unwrap();
        assert_eq!(y.data(), &[8.0, 0.0, 0.0, -1.5]);
        let g = Tensor::matrix(2, 2, vec![1.0, 1.0, 1.0, 2.0]).unwrap();
        let gb = op.backward(&[&b], &y, &g).unwrap();
        assert_eq!(gb[0].as_ref().unwrap().data(), &[-1.0, 2.0]);
    }
}
