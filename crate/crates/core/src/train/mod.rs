//! Maximum-likelihood training with the prior-convergence monitor,
//! checkpointing and exact resume.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dcore::{Adam, ParamCheckpoint, Tape, Tensor};
use crate::error::{Error, Result};
use crate::flows::{Batch, Example, ModelConfig, ModelKind, ProsodyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub nll: f64,
    pub voiced_bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            nll: 1.0,
            voiced_bce: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    /// Utterances (bipartite) or crops (autoregressive) per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub monitor_window: usize,
    /// Autoregressive crop length in groups.
    pub crop_len: usize,
    pub clip_norm: f64,
    /// Checkpoint period in steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
            weights: LossWeights::default(),
            monitor_window: 500,
            crop_len: 32,
            clip_norm: 10.0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.monitor_window == 0 || self.crop_len == 0 {
            return Err(Error::Config("steps, batch_size, monitor_window and crop_len must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate and clip_norm must be positive".into()));
        }
        if !(self.weights.nll >= 0.0) || !(self.weights.voiced_bce >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// `½·mean(z²)`: 0.5 when `z` is standard normal.
pub fn monitor_value(z: &Tensor) -> f64 {
    0.5 * z.data().iter().map(|v| v * v).sum::<f64>() / z.numel().max(1) as f64
}

/// Rolling window of monitor values.
#[derive(Debug, Clone)]
pub struct PriorMonitor {
    window: usize,
    values: VecDeque<f64>,
}

impl PriorMonitor {
    pub fn new(window: usize) -> Self {
        PriorMonitor {
            window: window.max(1),
            values: VecDeque::new(),
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.window {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.values.is_empty()).then(|| self.values.iter().sum::<f64>() / self.values.len() as f64)
    }

    /// `|mean − 0.5|` over the window.
    pub fn deviation(&self) -> Option<f64> {
        self.mean().map(|m| (m - 0.5).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub monitor: f64,
}

pub const HISTORY_HEADER: &str = "step,loss,monitor";

pub fn history_csv(records: &[StepRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in records {
        writeln!(s, "{},{},{}", r.step, r.loss, r.monitor).expect("writing to a string");
    }
    s
}

pub fn parse_history(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HISTORY_HEADER => {}
        _ => return Err(Error::Format(format!("history must start with `{HISTORY_HEADER}`"))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::Format(format!("history line {}: `{l}`", i + 1));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(StepRecord {
                step: f[0].trim().parse().map_err(|_| bad())?,
                loss: f[1].trim().parse().map_err(|_| bad())?,
                monitor: f[2].trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParamCheckpoint,
    pub optimizer: Adam,
    /// Lowest mean loss over a checkpoint window so far.
    #[serde(default)]
    pub best_loss: Option<f64>,
}

impl TrainState {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("train state serializes");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

pub struct Trainer {
    pub model: ProsodyModel,
    pub optimizer: Adam,
    pub config: TrainConfig,
    /// Steps completed so far.
    pub step: u64,
    pub monitor: PriorMonitor,
    pub best_loss: Option<f64>,
}

impl Trainer {
    pub fn new(model: ProsodyModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(&model.store, config.learning_rate);
        let monitor = PriorMonitor::new(config.monitor_window);
        Ok(Trainer {
            model,
            optimizer,
            config,
            step: 0,
            monitor,
            best_loss: None,
        })
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            step: self.step,
            model: self.model.config.clone(),
            train: self.config.clone(),
            params: self.model.store.to_checkpoint(),
            optimizer: self.optimizer.clone(),
            best_loss: self.best_loss,
        }
    }

    pub fn from_state(state: TrainState) -> Result<Self> {
        let model = ProsodyModel::from_checkpoint(state.model, &state.params)?;
        let mut t = Trainer::new(model, state.train)?;
        t.optimizer = state.optimizer;
        t.step = state.step;
        t.best_loss = state.best_loss;
        Ok(t)
    }

    /// Batch for step `step`; depends only on the seed and the step index.
    pub fn make_batch(&self, corpus: &[Example], step: u64) -> Result<Batch> {
        if corpus.is_empty() {
            return Err(Error::Config("empty training corpus".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        let b = self.config.batch_size;
        match self.model.config.kind {
            ModelKind::Bgap => {
                let picks: Vec<&Example> = (0..b).map(|_| &corpus[rng.random_range(0..corpus.len())]).collect();
                Batch::stack(&picks)
            }
            ModelKind::Agap => {
                let len = self.config.crop_len;
                let eligible: Vec<&Example> = corpus.iter().filter(|e| e.groups() >= len).collect();
                if eligible.is_empty() {
                    return Err(Error::Config(format!("no utterance has at least {len} groups for cropping")));
                }
                let windows: Vec<(&Example, usize)> = (0..b)
                    .map(|_| {
                        let e = eligible[rng.random_range(0..eligible.len())];
                        (e, rng.random_range(0..=e.groups() - len))
                    })
                    .collect();
                Batch::crops(&windows, len)
            }
        }
    }

    /// One optimizer update. The monitor is measured before the update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let step = self.step;
        let wrap = |e: Error| match e {
            Error::Numeric { op } => Error::Numeric {
                op: format!("training step {step}: {op}"),
            },
            other => other,
        };
        let mut tape = Tape::new();
        let f = self.model.forward(&mut tape, batch).map_err(wrap)?;
        let w = &self.config.weights;
        let a = tape.scale(f.nll, w.nll).map_err(wrap)?;
        let b = tape.scale(f.bce, w.voiced_bce).map_err(wrap)?;
        let loss = tape.add(a, b).map_err(wrap)?;
        let loss_value = tape.value(loss).item()?;
        let monitor = monitor_value(tape.value(f.z));
        let grads = tape.backward(loss).map_err(wrap)?;
        let store = &mut self.model.store;
        store.zero_grads();
        store.accumulate(&grads);
        let norm = store.global_grad_norm();
        if !norm.is_finite() {
            return Err(wrap(Error::Numeric { op: "gradient norm".into() }));
        }
        if norm > self.config.clip_norm {
            store.scale_grads(self.config.clip_norm / norm);
        }
        self.optimizer.step(store).map_err(wrap)?;
        self.step += 1;
        self.monitor.push(monitor);
        Ok(StepRecord {
            step,
            loss: loss_value,
            monitor,
        })
    }
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }
    pub fn history(&self) -> PathBuf {
        self.dir.join("history.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }
    pub fn final_params(&self) -> PathBuf {
        self.dir.join("params.json")
    }
    /// Parameters at the end of the checkpoint window with the lowest mean loss.
    pub fn best_params(&self) -> PathBuf {
        self.dir.join("best_params.json")
    }
    pub fn model_config(&self) -> PathBuf {
        self.dir.join("model.json")
    }
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Runs `trainer` until `config.steps`. With `paths`, history rows are
/// appended at every checkpoint together with the state, so a resumed run
/// continues both consistently.
pub fn fit(trainer: &mut Trainer, corpus: &[Example], paths: Option<&RunPaths>) -> Result<Vec<StepRecord>> {
    if corpus.is_empty() {
        return Err(Error::Config("empty training corpus".into()));
    }
    if let Some(p) = paths {
        std::fs::create_dir_all(&p.dir).map_err(|e| Error::io(&p.dir, e))?;
        if trainer.step == 0 {
            std::fs::write(p.history(), format!("{HISTORY_HEADER}\n")).map_err(|e| Error::io(p.history(), e))?;
        }
        trainer.model.config.save(p.model_config())?;
    }
    let mut all = Vec::new();
    let mut pending = Vec::new();
    while trainer.step < trainer.config.steps {
        let batch = trainer.make_batch(corpus, trainer.step)?;
        let rec = trainer.train_step(&batch)?;
        all.push(rec);
        pending.push(rec);
        let every = trainer.config.checkpoint_every;
        let due = trainer.step == trainer.config.steps || (every > 0 && trainer.step % every == 0);
        if let (Some(p), true) = (paths, due) {
            let rows = history_csv(&pending);
            append(&p.history(), rows.split_once('\n').map_or("", |(_, r)| r))?;
            let window = pending.iter().map(|r| r.loss).sum::<f64>() / pending.len() as f64;
            if trainer.best_loss.is_none_or(|b| window < b) {
                trainer.best_loss = Some(window);
                trainer.model.store.to_checkpoint().save(p.best_params())?;
            }
            pending.clear();
            trainer.state().save(p.checkpoint())?;
        }
    }
    if let Some(p) = paths {
        trainer.model.store.to_checkpoint().save(p.final_params())?;
    }
    Ok(all)
}

/// Moments of all latent elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorStats {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Fourth standardized moment (3 for a normal).
    pub kurtosis: f64,
    pub count: usize,
}

pub fn posterior_stats(values: &[f64]) -> Result<PosteriorStats> {
    let n = values.len();
    if n == 0 {
        return Err(Error::EmptySequence("no latent values"));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / nf;
    let variance = m(2);
    if !(variance > 0.0) {
        return Err(Error::Degenerate("latent values have zero variance".into()));
    }
    Ok(PosteriorStats {
        mean,
        variance,
        skewness: m(3) / variance.powf(1.5),
        kurtosis: m(4) / (variance * variance),
        count: n,
    })
}

/// Encodes every example (whole utterances) and summarizes the latents.
pub fn monitor_eval(model: &ProsodyModel, corpus: &[Example]) -> Result<PosteriorStats> {
    let mut all = Vec::new();
    for e in corpus {
        let z = model.encode(&Batch::stack(&[e])?)?.z;
        all.extend_from_slice(z.data());
    }
    posterior_stats(&all)
}
