use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

/// Fully connected layer `y = act(x Wᵀ + b)` with `W: [out×in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    /// Weights uniform in ±sqrt(1/fan_in), zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / in_dim.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::matrix(out_dim, in_dim, w).expect("shape is consistent"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Dense {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    /// Zero weights and bias: the layer outputs `act(0)` until trained.
    pub fn zeros(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[out_dim, in_dim]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Dense {
            weight,
            bias,
            activation,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.cols(x) != self.in_dim {
            return Err(Error::dim(
                "dense",
                format!("input has {} columns, layer expects {}", tape.cols(x), self.in_dim),
            ));
        }
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        let xw = tape.matmul_nt(x, w)?;
        let pre = tape.add_row(xw, b)?;
        match self.activation {
            Activation::Identity => Ok(pre),
            Activation::Tanh => tape.tanh(pre),
            Activation::Sigmoid => tape.sigmoid(pre),
            Activation::Relu => tape.relu(pre),
        }
    }

    /// Applies the layer to plain values.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let y = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// Stack of dense layers applied in order.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(tape, store, x)?;
        }
        Ok(x)
    }
}

/// Long short-term memory cell with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    input_size: usize,
    hidden_size: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    /// Uniform ±sqrt(1/hidden) weights; forget-gate bias starts at 1.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / hidden_size as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let g = 4 * hidden_size;
        let w_ih = Tensor::matrix(g, input_size, uniform(g * input_size)).expect("shape");
        let w_hh = Tensor::matrix(g, hidden_size, uniform(g * hidden_size)).expect("shape");
        let mut b = vec![0.0; g];
        b[hidden_size..2 * hidden_size].fill(1.0);
        Self::from_tensors(
            store,
            name,
            w_ih,
            w_hh,
            Tensor::new(vec![g], b).expect("shape"),
        )
    }

    pub fn from_tensors(
        store: &mut ParamStore,
        name: &str,
        w_ih: Tensor,
        w_hh: Tensor,
        bias: Tensor,
    ) -> Self {
        let hidden_size = w_hh.cols();
        let input_size = w_ih.cols();
        assert_eq!(w_ih.rows(), 4 * hidden_size);
        assert_eq!(w_hh.rows(), 4 * hidden_size);
        assert_eq!(bias.numel(), 4 * hidden_size);
        LstmCell {
            w_ih: store.add(format!("{name}.w_ih"), w_ih),
            w_hh: store.add(format!("{name}.w_hh"), w_hh),
            bias: store.add(format!("{name}.bias"), bias),
            input_size,
            hidden_size,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    /// Zero state for a batch of `batch` sequences.
    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> Result<LstmState> {
        let h = tape.constant(Tensor::zeros(&[batch, self.hidden_size]))?;
        let c = tape.constant(Tensor::zeros(&[batch, self.hidden_size]))?;
        Ok(LstmState { h, c })
    }

    /// One recurrence step for `x: [batch × input]`.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        if tape.cols(x) != self.input_size {
            return Err(Error::dim(
                "lstm",
                format!("input has {} columns, cell expects {}", tape.cols(x), self.input_size),
            ));
        }
        let hs = self.hidden_size;
        let w_ih = tape.param(store, self.w_ih)?;
        let w_hh = tape.param(store, self.w_hh)?;
        let b = tape.param(store, self.bias)?;
        let xi = tape.matmul_nt(x, w_ih)?;
        let hh = tape.matmul_nt(state.h, w_hh)?;
        let sum = tape.add(xi, hh)?;
        let gates = tape.add_row(sum, b)?;
        let i = tape.slice_cols(gates, 0, hs)?;
        let f = tape.slice_cols(gates, hs, hs)?;
        let g = tape.slice_cols(gates, 2 * hs, hs)?;
        let o = tape.slice_cols(gates, 3 * hs, hs)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Runs the cell over per-timestep inputs and returns every hidden
    /// output. Output `t` depends only on inputs `0..=t`.
    pub fn scan(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
        init: LstmState,
    ) -> Result<Vec<Var>> {
        if inputs.is_empty() {
            return Err(Error::EmptySequence("recurrent scan over zero timesteps"));
        }
        let mut state = init;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(tape, store, x, state)?;
            out.push(state.h);
        }
        Ok(out)
    }
}

/// Value-level recurrent scan of a single sequence `inputs: [T×in]`
/// from initial states `h0`, `c0` (each `[hidden]`). Returns `[T×hidden]`.
pub fn recurrent_scan(
    cell: &LstmCell,
    store: &ParamStore,
    inputs: &Tensor,
    h0: &Tensor,
    c0: &Tensor,
) -> Result<Tensor> {
    let steps = inputs.rows();
    if steps == 0 || inputs.numel() == 0 {
        return Err(Error::EmptySequence("recurrent scan over zero timesteps"));
    }
    let hs = cell.hidden_size();
    if h0.numel() != hs || c0.numel() != hs {
        return Err(Error::dim("recurrent_scan", "initial state size differs from hidden size"));
    }
    let mut tape = Tape::new();
    let h = tape.constant(h0.reshape(vec![1, hs])?)?;
    let c = tape.constant(c0.reshape(vec![1, hs])?)?;
    let xs = tape.constant(inputs.reshape(vec![steps, inputs.cols()])?)?;
    let per_step: Vec<Var> = (0..steps)
        .map(|t| tape.slice_rows(xs, t, 1))
        .collect::<Result<_>>()?;
    let hidden = cell.scan(&mut tape, store, &per_step, LstmState { h, c })?;
    let stacked = tape.concat_rows(&hidden)?;
    Ok(tape.value(stacked).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_dense_passes_input_through() {
        let mut store = ParamStore::new();
        let layer = Dense::zeros(&mut store, "d", 2, 2, Activation::Identity);
        *store.value_mut(layer.weight) = Tensor::eye(2);
        let y = layer.apply(&store, &Tensor::row(&[1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_forced_arithmetic() {
        let mut store = ParamStore::new();
        let layer = Dense::zeros(&mut store, "d", 2, 2, Activation::Identity);
        *store.value_mut(layer.weight) = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        *store.value_mut(layer.bias) = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let y = layer.apply(&store, &Tensor::row(&[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 3.0]);
    }

    #[test]
    fn dense_rejects_wrong_width() {
        let mut store = ParamStore::new();
        let layer = Dense::zeros(&mut store, "d", 3, 2, Activation::Tanh);
        assert!(matches!(
            layer.apply(&store, &Tensor::row(&[1.0, 1.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_lstm_outputs_zero() {
        let mut store = ParamStore::new();
        let cell = LstmCell::from_tensors(
            &mut store,
            "l",
            Tensor::zeros(&[12, 2]),
            Tensor::zeros(&[12, 3]),
            Tensor::zeros(&[12]),
        );
        let xs = Tensor::matrix(4, 2, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0, 2.0, 2.0]).unwrap();
        let out = recurrent_scan(&cell, &store, &xs, &Tensor::zeros(&[3]), &Tensor::zeros(&[3]))
            .unwrap();
        assert_eq!(out.shape(), &[4, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_scan_is_an_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = LstmCell::new(&mut store, "l", 2, 3, &mut rng);
        let xs = Tensor::zeros(&[0, 2]);
        assert!(matches!(
            recurrent_scan(&cell, &store, &xs, &Tensor::zeros(&[3]), &Tensor::zeros(&[3])),
            Err(Error::EmptySequence(_))
        ));
    }

    #[test]
    fn single_step_scan_equals_cell_step() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = LstmCell::new(&mut store, "l", 2, 4, &mut rng);
        let x = Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap();
        let scanned =
            recurrent_scan(&cell, &store, &x, &Tensor::zeros(&[4]), &Tensor::zeros(&[4])).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x).unwrap();
        let s0 = cell.zero_state(&mut tape, 1).unwrap();
        let s1 = cell.step(&mut tape, &store, xv, s0).unwrap();
        assert_eq!(tape.value(s1.h).data(), scanned.data());
    }
}
