use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::autoregressive::AutoregressiveFlow;
use super::bipartite::BipartiteFlow;
use super::config::{ModelConfig, ModelKind};
use super::pipeline::Example;
use crate::context::{PhonemeSeq, ScatterOp, UnvoicedBias, VoicedClassifier, VoicedMerge};
use crate::dcore::{Activation, Dense, ParamCheckpoint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::prep::{group_frame_index, ungroup, Filler, GroupLayout, ModelInputTensor};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Rows of grouped data with their frame-slot alignment.
///
/// With `sequences == 1` rows may come from any number of utterances
/// (bipartite models treat rows independently). With `sequences == B > 1`
/// the rows are `B` equal-length sequences in time-major order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub slot_ids: Vec<usize>,
    pub slot_voiced: Vec<bool>,
    pub bias: ScatterOp,
    pub sequences: usize,
}

impl Batch {
    /// Concatenates whole examples row-wise.
    pub fn stack(examples: &[&Example]) -> Result<Batch> {
        let first = examples
            .first()
            .ok_or(Error::EmptySequence("batch without examples"))?;
        let w = first.x.cols();
        let rows: usize = examples.iter().map(|e| e.groups()).sum();
        let mut x = Vec::with_capacity(rows * w);
        let mut bias = ScatterOp::new(rows, w);
        let (mut slot_ids, mut slot_voiced) = (Vec::new(), Vec::new());
        let mut offset = 0;
        for e in examples {
            if e.x.cols() != w {
                return Err(Error::dim("batch", "examples differ in width"));
            }
            x.extend_from_slice(e.x.data());
            slot_ids.extend_from_slice(&e.slot_ids);
            slot_voiced.extend_from_slice(&e.slot_voiced);
            for &(o, i, c) in &e.bias.entries {
                bias.push(o + offset * w, i, c);
            }
            offset += e.groups();
        }
        Ok(Batch {
            x: Tensor::matrix(rows, w, x)?,
            slot_ids,
            slot_voiced,
            bias,
            sequences: 1,
        })
    }

    /// Equal-length windows `[start, start + len)` (in groups) of several
    /// examples, interleaved time-major.
    pub fn crops(windows: &[(&Example, usize)], len: usize) -> Result<Batch> {
        let b = windows.len();
        let (first, _) = windows
            .first()
            .ok_or(Error::EmptySequence("batch without examples"))?;
        if len == 0 {
            return Err(Error::EmptySequence("zero-length crop"));
        }
        let w = first.x.cols();
        let n = first.layout.group_size;
        let mut x = vec![0.0; len * b * w];
        let mut slot_ids = vec![0; len * b * n];
        let mut slot_voiced = vec![false; len * b * n];
        let mut bias = ScatterOp::new(len * b, w);
        for (j, &(e, start)) in windows.iter().enumerate() {
            if start + len > e.groups() || e.x.cols() != w {
                return Err(Error::Contract(format!(
                    "crop [{start}, {}) outside an example of {} groups",
                    start + len,
                    e.groups()
                )));
            }
            for t in 0..len {
                let dst = t * b + j;
                x[dst * w..(dst + 1) * w].copy_from_slice(e.x.row_slice(start + t));
                let src_slots = (start + t) * n..(start + t + 1) * n;
                slot_ids[dst * n..(dst + 1) * n].copy_from_slice(&e.slot_ids[src_slots.clone()]);
                slot_voiced[dst * n..(dst + 1) * n].copy_from_slice(&e.slot_voiced[src_slots]);
            }
            for &(o, i, c) in &e.bias.entries {
                let (r, col) = (o / w, o % w);
                if (start..start + len).contains(&r) {
                    bias.push(((r - start) * b + j) * w + col, i, c);
                }
            }
        }
        Ok(Batch {
            x: Tensor::matrix(len * b, w, x)?,
            slot_ids,
            slot_voiced,
            bias,
            sequences: b,
        })
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn elements(&self) -> usize {
        self.x.numel()
    }
}

/// Trainable text conditioning shared by both flow kinds.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub embedding: ParamId,
    pub merge: VoicedMerge,
    pub classifier: VoicedClassifier,
    pub bias: Option<UnvoicedBias>,
    pub projector: Dense,
}

#[derive(Debug, Clone)]
pub enum FlowNet {
    Bgap(BipartiteFlow),
    Agap(AutoregressiveFlow),
}

/// Tape handles produced by [`ProsodyModel::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub x: Var,
    pub z: Var,
    pub logdet: Var,
    /// Per-element negative log-likelihood.
    pub nll: Var,
    pub bce: Var,
}

/// Plain-value summary of a forward pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub z: Tensor,
    pub logdet: f64,
    pub nll: f64,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// Ungrouped frames `[T × F]`.
    pub frames: Tensor,
    /// Classifier decision per frame, used to build the context.
    pub voiced: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ProsodyModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub context: ContextEncoder,
    pub flow: FlowNet,
}

impl ProsodyModel {
    /// Fresh model; the flow starts at the identity up to its random
    /// orthogonal 1×1 convolutions.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.context_channels;
        let n = config.preproc.group_size;
        let emb: Vec<f64> = (0..config.vocab_size * c)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let embedding = store.add("context.embedding", Tensor::matrix(config.vocab_size, c, emb)?);
        let context = ContextEncoder {
            embedding,
            merge: VoicedMerge::new(&mut store, "context.merge", c),
            classifier: VoicedClassifier::new(&mut store, "context.classifier", c, config.classifier_hidden, &mut rng),
            bias: (config.preproc.filler == Filler::UnvoicedBias)
                .then(|| UnvoicedBias::new(&mut store, "context.bias", c, &mut rng)),
            projector: Dense::new(&mut store, "context.projector", n * c, config.context_proj, Activation::Tanh, &mut rng),
        };
        let w = config.width();
        let flow = match config.kind {
            ModelKind::Bgap => FlowNet::Bgap(BipartiteFlow::new(
                &mut store,
                "bgap",
                w,
                config.context_proj,
                config.hidden,
                &config.couplings,
                config.bound,
                config.bins,
                &mut rng,
            )?),
            ModelKind::Agap => FlowNet::Agap(AutoregressiveFlow::new(
                &mut store,
                "agap",
                w,
                config.context_proj,
                config.hidden,
                &config.couplings,
                config.bound,
                config.bins,
                &mut rng,
            )),
        };
        Ok(ProsodyModel {
            config,
            store,
            context,
            flow,
        })
    }

    /// Rebuilds the structure from `config` and loads parameters.
    pub fn from_checkpoint(config: ModelConfig, ckpt: &ParamCheckpoint) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.store.load_checkpoint(ckpt)?;
        Ok(m)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n = self.config.preproc.group_size;
        if batch.x.cols() != self.config.width()
            || batch.slot_ids.len() != batch.rows() * n
            || batch.slot_voiced.len() != batch.rows() * n
        {
            return Err(Error::Contract(format!(
                "batch {:?} with {} slots does not fit a model of width {} and group size {n}",
                batch.x.shape(),
                batch.slot_ids.len(),
                self.config.width()
            )));
        }
        if let Some(&id) = batch.slot_ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Vocabulary {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Grouped, projected context `[R × P]` and the raw per-slot context.
    fn context_tape(&self, tape: &mut Tape, slot_ids: &[usize], slot_voiced: &[bool], rows: usize) -> Result<(Var, Var)> {
        let store = &self.store;
        let emb = tape.param(store, self.context.embedding)?;
        let phi = tape.gather_rows(emb, slot_ids)?;
        let merged = if self.config.voiced_context {
            self.context.merge.forward(tape, store, phi, slot_voiced)?
        } else {
            phi
        };
        let width = self.config.preproc.group_size * self.config.context_channels;
        let grouped = tape.reshape(merged, vec![rows, width])?;
        Ok((self.context.projector.forward(tape, store, grouped)?, phi))
    }

    fn data_tape(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        let x = tape.constant(batch.x.clone())?;
        match &self.context.bias {
            Some(bias) if !batch.bias.entries.is_empty() => {
                let emb = tape.param(&self.store, self.context.embedding)?;
                let table = bias.table(tape, &self.store, emb)?;
                let shift = tape.custom(Box::new(batch.bias.clone()), &[table])?;
                tape.add(x, shift)
            }
            _ => Ok(x),
        }
    }

    fn flow_tape(&self, tape: &mut Tape, x: Var, ctx: Var, sequences: usize) -> Result<(Var, Var)> {
        match &self.flow {
            FlowNet::Bgap(f) => f.forward(tape, &self.store, x, ctx),
            FlowNet::Agap(f) => f.forward(tape, &self.store, x, ctx, sequences),
        }
    }

    /// Records the full training graph for `batch` on `tape`.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<ForwardVars> {
        self.check_batch(batch)?;
        let (ctx, phi) = self.context_tape(tape, &batch.slot_ids, &batch.slot_voiced, batch.rows())?;
        let x = self.data_tape(tape, batch)?;
        let (z, logdet) = self.flow_tape(tape, x, ctx, batch.sequences)?;
        let sq = tape.square(z)?;
        let ss = tape.sum(sq)?;
        let half = tape.scale(ss, 0.5)?;
        let diff = tape.sub(half, logdet)?;
        let per = tape.scale(diff, 1.0 / batch.elements() as f64)?;
        let nll = tape.shift(per, HALF_LN_2PI)?;
        let bce = self.context.classifier.bce(tape, &self.store, phi, &batch.slot_voiced)?;
        Ok(ForwardVars {
            x,
            z,
            logdet,
            nll,
            bce,
        })
    }

    pub fn encode(&self, batch: &Batch) -> Result<Encoded> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, batch)?;
        Ok(Encoded {
            z: tape.value(f.z).clone(),
            logdet: tape.value(f.logdet).item()?,
            nll: tape.value(f.nll).item()?,
        })
    }

    /// Projected context values for a batch.
    pub fn context_values(&self, batch: &Batch) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let (ctx, _) = self.context_tape(&mut tape, &batch.slot_ids, &batch.slot_voiced, batch.rows())?;
        Ok(tape.value(ctx).clone())
    }

    /// Model data for a batch, learned unvoiced bias included.
    pub fn data_values(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = self.data_tape(&mut tape, batch)?;
        Ok(tape.value(x).clone())
    }

    /// Flow only: data → `(z, logdet)` given projected context.
    pub fn flow_forward(&self, x: &Tensor, ctx: &Tensor, sequences: usize) -> Result<(Tensor, f64)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let cv = tape.constant(ctx.clone())?;
        let (z, ld) = self.flow_tape(&mut tape, xv, cv, sequences)?;
        Ok((tape.value(z).clone(), tape.value(ld).item()?))
    }

    /// Flow only: latent → data given projected context.
    pub fn flow_inverse(&self, z: &Tensor, ctx: &Tensor, sequences: usize) -> Result<Tensor> {
        match &self.flow {
            FlowNet::Bgap(f) => f.inverse(&self.store, z, ctx),
            FlowNet::Agap(f) => f.inverse(&self.store, z, ctx, sequences),
        }
    }

    /// Embedding rows per frame, `[T × C]`.
    pub fn phi(&self, seq: &PhonemeSeq) -> Result<Tensor> {
        seq.validate()?;
        seq.check_vocab(self.config.vocab_size)?;
        crate::context::build_phi_text(seq, self.store.value(self.context.embedding)).map(|c| c.phi)
    }

    pub fn predict_voiced(&self, seq: &PhonemeSeq) -> Result<Vec<bool>> {
        self.context.classifier.predict_voiced(&self.store, &self.phi(seq)?)
    }

    /// Draws `z ~ N(0, σ²I)` and maps it to data for the utterance `seq`,
    /// conditioning on the classifier's voicing decisions.
    pub fn sample<R: Rng>(&self, seq: &PhonemeSeq, sigma: f64, rng: &mut R) -> Result<SampleOutput> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("sampling sigma must be ≥ 0, got {sigma}")));
        }
        let voiced = self.predict_voiced(seq)?;
        let t = voiced.len();
        let n = self.config.preproc.group_size;
        let index = group_frame_index(t, n);
        let ids = seq.frame_ids();
        let slot_ids: Vec<usize> = index.iter().map(|&i| ids[i]).collect();
        let slot_voiced: Vec<bool> = index.iter().map(|&i| voiced[i]).collect();
        let rows = t.div_ceil(n);
        let mut tape = Tape::new();
        let (ctx, _) = self.context_tape(&mut tape, &slot_ids, &slot_voiced, rows)?;
        let ctx = tape.value(ctx).clone();
        let w = self.config.width();
        let z: Vec<f64> = (0..rows * w)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let x = self.flow_inverse(&Tensor::matrix(rows, w, z)?, &ctx, 1)?;
        let frames = ungroup(&ModelInputTensor {
            values: x,
            layout: GroupLayout {
                group_size: n,
                frame_channels: self.config.frame_channels(),
                original_length: t,
            },
        })?;
        Ok(SampleOutput { frames, voiced })
    }

    /// Current non-positive bias per phoneme id, if the model learns one.
    pub fn unvoiced_bias(&self) -> Result<Option<Vec<f64>>> {
        let Some(bias) = &self.context.bias else {
            return Ok(None);
        };
        let mut tape = Tape::new();
        let emb = tape.param(&self.store, self.context.embedding)?;
        let table = bias.table(&mut tape, &self.store, emb)?;
        Ok(Some(tape.value(table).data().to_vec()))
    }
}
