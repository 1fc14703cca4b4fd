use rand::Rng;

use crate::coupling::{
    affine_forward_tape, affine_inverse_rows, invert_matrix, random_orthogonal, spline_inverse_rows,
    CouplingKind, CouplingSplit, LogAbsDetOp, SplineOp,
};
use crate::dcore::{Activation, Dense, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One (invertible 1×1 convolution, coupling) step.
#[derive(Debug, Clone)]
pub struct BgapStep {
    pub invconv: ParamId,
    pub kind: CouplingKind,
    pub hidden: Dense,
    /// Zero-initialized so a fresh coupling is the identity.
    pub head: Dense,
}

/// Glow-style flow with per-row (per grouped frame) predictors. Step 0 is
/// nearest the data.
#[derive(Debug, Clone)]
pub struct BipartiteFlow {
    pub steps: Vec<BgapStep>,
    pub width: usize,
    pub context_width: usize,
    pub split: CouplingSplit,
    pub bound: f64,
    pub bins: usize,
}

impl BipartiteFlow {
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
    ) -> Result<Self> {
        let split = CouplingSplit::halves(width)?;
        let a = split.transformed.len();
        let b = split.conditioning.len();
        let steps = couplings
            .iter()
            .enumerate()
            .map(|(i, &kind)| {
                let p = format!("{name}.step{i}");
                BgapStep {
                    invconv: store.add(format!("{p}.invconv"), random_orthogonal(width, rng)),
                    kind,
                    hidden: Dense::new(store, &format!("{p}.hidden"), b + context_width, hidden, Activation::Tanh, rng),
                    head: Dense::zeros(store, &format!("{p}.head"), hidden, a * kind.params_per_dim(bins), Activation::Identity),
                }
            })
            .collect();
        Ok(BipartiteFlow {
            steps,
            width,
            context_width,
            split,
            bound,
            bins,
        })
    }

    fn predictor(&self, step: &BgapStep, tape: &mut Tape, store: &ParamStore, xb: Var, ctx: Var) -> Result<Var> {
        let inp = tape.concat_cols(&[xb, ctx])?;
        let h = step.hidden.forward(tape, store, inp)?;
        step.head.forward(tape, store, h)
    }

    fn check(&self, tape: &Tape, x: Var, ctx: Var) -> Result<()> {
        if tape.cols(x) != self.width || tape.cols(ctx) != self.context_width || tape.rows(x) != tape.rows(ctx) {
            return Err(Error::Contract(format!(
                "data {:?} and context {:?} do not match a flow of width {} with context {}",
                tape.shape(x),
                tape.shape(ctx),
                self.width,
                self.context_width
            )));
        }
        Ok(())
    }

    /// Data → latent. Returns `(z, total log-determinant)`; the log-det is a
    /// scalar over all rows.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, ctx: Var) -> Result<(Var, Var)> {
        self.check(tape, x, ctx)?;
        let rows = tape.rows(x) as f64;
        let a = self.split.transformed.len();
        let b = self.split.conditioning.len();
        let mut h = x;
        let mut terms = Vec::new();
        for step in &self.steps {
            let w = tape.param(store, step.invconv)?;
            h = tape.matmul_nt(h, w)?;
            let lad = tape.custom(Box::new(LogAbsDetOp), &[w])?;
            terms.push(tape.scale(lad, rows)?);

            let xa = tape.slice_cols(h, 0, a)?;
            let xb = tape.slice_cols(h, a, b)?;
            let raw = self.predictor(step, tape, store, xb, ctx)?;
            let (ya, ld) = match step.kind {
                CouplingKind::Affine => affine_forward_tape(tape, xa, raw)?,
                CouplingKind::Spline => {
                    let op = SplineOp { bound: self.bound, bins: self.bins };
                    let out = tape.custom(Box::new(op), &[xa, raw])?;
                    (tape.slice_cols(out, 0, a)?, tape.slice_cols(out, a, a)?)
                }
            };
            terms.push(tape.sum(ld)?);
            h = tape.concat_cols(&[ya, xb])?;
        }
        let mut total = terms[0];
        for t in &terms[1..] {
            total = tape.add(total, *t)?;
        }
        Ok((h, total))
    }

    /// Latent → data for plain values.
    pub fn inverse(&self, store: &ParamStore, z: &Tensor, ctx: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone())?;
        let cv = tape.constant(ctx.clone())?;
        self.check(&tape, zv, cv)?;
        let a = self.split.transformed.len();
        let b = self.split.conditioning.len();
        let mut y = z.clone();
        for step in self.steps.iter().rev() {
            let mut tape = Tape::new();
            let yv = tape.constant(y)?;
            let c = tape.constant(ctx.clone())?;
            let ya = tape.slice_cols(yv, 0, a)?;
            let xb = tape.slice_cols(yv, a, b)?;
            let raw = self.predictor(step, &mut tape, store, xb, c)?;
            let ya_val = tape.value(ya).clone();
            let raw_val = tape.value(raw).clone();
            let xa = match step.kind {
                CouplingKind::Affine => affine_inverse_rows(&ya_val, &raw_val)?,
                CouplingKind::Spline => spline_inverse_rows(
                    SplineOp { bound: self.bound, bins: self.bins },
                    &ya_val,
                    &raw_val,
                )?,
            };
            let xa = tape.constant(xa)?;
            let h = tape.concat_cols(&[xa, xb])?;
            let winv = tape.constant(invert_matrix(store.value(step.invconv))?)?;
            let x = tape.matmul_nt(h, winv)?;
            y = tape.value(x).clone();
        }
        Ok(y)
    }
}
