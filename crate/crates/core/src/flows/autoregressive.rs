use rand::Rng;

use crate::coupling::{affine_forward_tape, affine_inverse_rows, spline_inverse_rows, CouplingKind, SplineOp};
use crate::dcore::{Activation, Dense, LstmCell, LstmState, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One autoregressive step: two recurrent layers (the second also sees the
/// context), a dense projection and a zero-initialized output head.
#[derive(Debug, Clone)]
pub struct AgapStep {
    pub kind: CouplingKind,
    pub lstm1: LstmCell,
    pub lstm2: LstmCell,
    pub proj: Dense,
    pub head: Dense,
}

/// Sequences are laid out time-major: row `t·B + b` holds frame `t` of
/// sequence `b` in a batch of `B` equal-length sequences.
#[derive(Debug, Clone)]
pub struct AutoregressiveFlow {
    pub steps: Vec<AgapStep>,
    pub width: usize,
    pub context_width: usize,
    pub bound: f64,
    pub bins: usize,
}

struct Predictor {
    s1: LstmState,
    s2: LstmState,
}

/// Row permutation reversing time in a time-major batch.
pub fn reverse_index(len: usize, batch: usize) -> Vec<usize> {
    (0..len)
        .flat_map(|t| (0..batch).map(move |b| (len - 1 - t) * batch + b))
        .collect()
}

impl AutoregressiveFlow {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        context_width: usize,
        hidden: usize,
        couplings: &[CouplingKind],
        bound: f64,
        bins: usize,
        rng: &mut R,
    ) -> Self {
        let steps = couplings
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                let p = format!("{name}.step{i}");
                AgapStep {
                    kind,
                    lstm1: LstmCell::new(store, &format!("{p}.lstm1"), width, hidden, rng),
                    lstm2: LstmCell::new(store, &format!("{p}.lstm2"), hidden + context_width, hidden, rng),
                    proj: Dense::new(store, &format!("{p}.proj"), hidden, hidden, Activation::Tanh, rng),
                    head: Dense::zeros(store, &format!("{p}.head"), hidden, width * kind.params_per_dim(bins), Activation::Identity),
                }
            })
            .collect();
        AutoregressiveFlow {
            steps,
            width,
            context_width,
            bound,
            bins,
        }
    }

    fn start(&self, step: &AgapStep, tape: &mut Tape, batch: usize) -> Result<Predictor> {
        Ok(Predictor {
            s1: step.lstm1.zero_state(tape, batch)?,
            s2: step.lstm2.zero_state(tape, batch)?,
        })
    }

    /// Transform parameters for frame `t` from frame `t − 1` and context `t`.
    fn predict(
        &self,
        step: &AgapStep,
        tape: &mut Tape,
        store: &ParamStore,
        state: &mut Predictor,
        prev: Var,
        ctx_t: Var,
    ) -> Result<Var> {
        state.s1 = step.lstm1.step(tape, store, prev, state.s1)?;
        let inp = tape.concat_cols(&[state.s1.h, ctx_t])?;
        state.s2 = step.lstm2.step(tape, store, inp, state.s2)?;
        let h = step.proj.forward(tape, store, state.s2.h)?;
        step.head.forward(tape, store, h)
    }

    fn check(&self, rows: usize, cols: usize, ctx: &[usize], batch: usize) -> Result<usize> {
        if batch == 0 || rows == 0 || rows % batch != 0 {
            return Err(Error::EmptySequence("autoregressive flow needs at least one frame per sequence"));
        }
        if cols != self.width || ctx != [rows, self.context_width] {
            return Err(Error::Contract(format!(
                "data [{rows}×{cols}] and context {ctx:?} do not match width {} with context {}",
                self.width, self.context_width
            )));
        }
        Ok(rows / batch)
    }

    fn transform(&self, kind: CouplingKind, tape: &mut Tape, x: Var, raw: Var) -> Result<(Var, Var)> {
        match kind {
            CouplingKind::Affine => affine_forward_tape(tape, x, raw),
            CouplingKind::Spline => {
                let d = self.width;
                let op = SplineOp { bound: self.bound, bins: self.bins };
                let out = tape.custom(Box::new(op), &[x, raw])?;
                Ok((tape.slice_cols(out, 0, d)?, tape.slice_cols(out, d, d)?))
            }
        }
    }

    /// Data → latent for `batch` sequences in time-major layout.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: Var, batch: usize) -> Result<(Var, Var)> {
        let len = self.check(tape.rows(x), tape.cols(x), tape.shape(ctx), batch)?;
        let rev = reverse_index(len, batch);
        let mut h = x;
        let mut total: Option<Var> = None;
        for (k, step) in self.steps.iter().enumerate() {
            let reversed = k % 2 == 1;
            let (inp, c) = if reversed {
                (tape.gather_rows(h, &rev)?, tape.gather_rows(ctx, &rev)?)
            } else {
                (h, ctx)
            };
            let mut state = self.start(step, tape, batch)?;
            let mut prev = tape.constant(Tensor::zeros(&[batch, self.width]))?;
            let mut raws = Vec::with_capacity(len);
            for t in 0..len {
                let ct = tape.slice_rows(c, t * batch, batch)?;
                raws.push(self.predict(step, tape, store, &mut state, prev, ct)?);
                prev = tape.slice_rows(inp, t * batch, batch)?;
            }
            let raw = tape.concat_rows(&raws)?;
            let (y, ld) = self.transform(step.kind, tape, inp, raw)?;
            let s = tape.sum(ld)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
            h = if reversed { tape.gather_rows(y, &rev)? } else { y };
        }
        Ok((h, total.expect("at least one step")))
    }

    /// Latent → data, generating frames sequentially within each step.
    pub fn inverse(&self, store: &ParamStore, z: &Tensor, ctx: &Tensor, batch: usize) -> Result<Tensor> {
        let len = self.check(z.rows(), z.cols(), ctx.shape(), batch)?;
        let rev = reverse_index(len, batch);
        let permute = |m: &Tensor| -> Result<Tensor> {
            let mut tape = Tape::new();
            let v = tape.constant(m.clone())?;
            let g = tape.gather_rows(v, &rev)?;
            Ok(tape.value(g).clone())
        };
        let mut y = z.clone();
        for (k, step) in self.steps.iter().enumerate().rev() {
            let reversed = k % 2 == 1;
            let (out, c) = if reversed { (permute(&y)?, permute(ctx)?) } else { (y, ctx.clone()) };
            let mut tape = Tape::new();
            let cv = tape.constant(c)?;
            let mut state = self.start(step, &mut tape, batch)?;
            let mut prev = tape.constant(Tensor::zeros(&[batch, self.width]))?;
            let mut data = Vec::with_capacity(out.numel());
            for t in 0..len {
                let ct = tape.slice_rows(cv, t * batch, batch)?;
                let raw = self.predict(step, &mut tape, store, &mut state, prev, ct)?;
                let zt = Tensor::matrix(batch, self.width, out.data()[t * batch * self.width..(t + 1) * batch * self.width].to_vec())?;
                let raw_val = tape.value(raw);
                let xt = match step.kind {
                    CouplingKind::Affine => affine_inverse_rows(&zt, raw_val),
                    CouplingKind::Spline => spline_inverse_rows(
                        SplineOp { bound: self.bound, bins: self.bins },
                        &zt,
                        raw_val,
                    ),
                }
                .map_err(|e| match e {
                    Error::Numeric { op } => Error::Numeric { op: format!("{op} at frame {t}") },
                    other => other,
                })?;
                data.extend_from_slice(xt.data());
                prev = tape.constant(xt)?;
            }
            let x = Tensor::matrix(len * batch, self.width, data)?;
            y = if reversed { permute(&x)? } else { x };
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reverse_index_is_an_involution() {
        let r = reverse_index(3, 2);
        assert_eq!(r, vec![4, 5, 2, 3, 0, 1]);
        let rr: Vec<usize> = r.iter().map(|&i| r[i]).collect();
        assert_eq!(rr, (0..6).collect::<Vec<_>>());
    }
}
