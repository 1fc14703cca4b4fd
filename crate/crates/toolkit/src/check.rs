//! Verification suites run by `pflow check` and the acceptance tests.

use std::time::Instant;

use pflow_core::coupling::{reverse_time, AffineParams, InvConvParams, SplineParams};
use pflow_core::dcore::{grad_check, Probe, Tape, Tensor};
use pflow_core::flows::{assemble, Batch, CouplingPreset, Example, ModelConfig, ModelKind, ProsodyModel};
use pflow_core::synthgen::{gen_corpus, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{ToolError, ToolResult};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    /// Largest observed error.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteTiming {
    pub suite: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub timings: Vec<SuiteTiming>,
}

impl CheckReport {
    pub fn suite_passed(&self, suite: &str) -> bool {
        self.checks.iter().filter(|c| c.suite == suite).all(|c| c.passed)
    }

    pub fn seconds(&self, suite: &str) -> f64 {
        self.timings.iter().find(|t| t.suite == suite).map_or(0.0, |t| t.seconds)
    }
}

/// Points where a fault can be injected into the checked quantities.
pub struct CheckHooks {
    /// Applied to every spline log-determinant before comparison.
    pub spline_logdet: Box<dyn Fn(f64) -> f64>,
}

impl Default for CheckHooks {
    fn default() -> Self {
        CheckHooks {
            spline_logdet: Box::new(|v| v),
        }
    }
}

pub const SUITE_INVERT: &str = "invertibility";
pub const SUITE_LOGDET: &str = "logdet";
pub const SUITE_GRAD: &str = "gradient";

fn result(suite: &str, name: &str, value: f64, tolerance: f64) -> CheckResult {
    CheckResult {
        suite: suite.into(),
        name: name.into(),
        value,
        tolerance,
        passed: value.is_finite() && value < tolerance,
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
        .expect("sized")
}

fn random_spline(rng: &mut ChaCha8Rng, n: usize, bins: usize, bound: f64) -> ToolResult<SplineParams> {
    Ok(SplineParams::new(
        bound,
        bins,
        (0..n * bins).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..n * (bins + 1)).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )?)
}

fn random_affine(rng: &mut ChaCha8Rng, n: usize) -> ToolResult<AffineParams> {
    Ok(AffineParams::new(
        (0..n).map(|_| rng.random_range(-1.5f64..1.5).exp()).collect(),
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )?)
}

fn random_invconv(rng: &mut ChaCha8Rng, n: usize) -> InvConvParams {
    loop {
        let q = InvConvParams::random_orthogonal(n, rng).weight;
        let w = q.zip_map(&uniform(rng, n, n, -0.3, 0.3), |a, b| a + b);
        if let Ok(p) = InvConvParams::new(w) {
            if p.log_abs_det().is_ok() {
                return p;
            }
        }
    }
}

/// Small-width model with every parameter perturbed away from its init.
pub fn random_model(base: ModelConfig, seed: u64) -> ToolResult<ProsodyModel> {
    let mut cfg = base;
    cfg.vocab_size = 16;
    cfg.context_channels = 4;
    cfg.context_proj = 4;
    cfg.hidden = 6;
    cfg.classifier_hidden = 4;
    let mut model = ProsodyModel::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let flat: Vec<f64> = model
        .store
        .flat_values()
        .into_iter()
        .map(|v| v + 0.2 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    model.store.set_flat_values(&flat)?;
    Ok(model)
}

fn small_corpus(cfg: &ModelConfig, seed: u64) -> ToolResult<Vec<Example>> {
    let synth = SynthConfig {
        seed,
        utterances: 4,
        min_frames: 24,
        max_frames: 40,
        vocab_size: cfg.vocab_size,
        ..SynthConfig::default()
    };
    gen_corpus(&synth)?
        .iter()
        .map(|(t, q)| assemble(t, q, cfg).map_err(ToolError::from))
        .collect()
}

fn model_round_trip(model: &ProsodyModel, x: &Tensor, seqs: usize, rng: &mut ChaCha8Rng) -> ToolResult<f64> {
    let ctx = normal(rng, x.rows(), model.config.context_proj, 0.5);
    let (z, _) = model.flow_forward(x, &ctx, seqs)?;
    let back = model.flow_inverse(&z, &ctx, seqs)?;
    let again = model.flow_forward(&back, &ctx, seqs)?.0;
    Ok(back.max_abs_diff(x).max(again.max_abs_diff(&z)))
}

pub fn invertibility_suite(seed: u64) -> ToolResult<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = SUITE_INVERT;
    let mut out = Vec::new();
    let x = uniform(&mut rng, 2500, 4, -4.0, 4.0);

    let a = random_affine(&mut rng, 4)?;
    let (y, _) = a.forward(&x)?;
    out.push(result(s, "affine layer, 1e4 values", a.inverse(&y)?.max_abs_diff(&x), 1e-9));

    let sp = random_spline(&mut rng, 4, 24, 3.0)?;
    let (y, _) = sp.forward(&x)?;
    out.push(result(s, "spline layer, 1e4 values", sp.inverse(&y)?.max_abs_diff(&x), 1e-9));

    let ic = random_invconv(&mut rng, 4);
    let (y, _) = ic.forward(&x)?;
    out.push(result(s, "invconv layer, 1e4 values", ic.inverse(&y)?.max_abs_diff(&x), 1e-9));

    let r = reverse_time(&reverse_time(&x));
    out.push(result(s, "time reversal, 1e4 values", r.max_abs_diff(&x), 1e-9));

    let bgap = random_model(ModelConfig::bgap(CouplingPreset::Hybrid), seed + 1)?;
    let xb = normal(&mut rng, 2500, 4, 1.0);
    out.push(result(s, "full bipartite model, 1e4 values", model_round_trip(&bgap, &xb, 1, &mut rng)?, 1e-5));

    let agap = random_model(ModelConfig::agap(CouplingPreset::Spline), seed + 2)?;
    out.push(result(s, "full autoregressive model, 1e4 values", model_round_trip(&agap, &xb, 10, &mut rng)?, 1e-5));
    Ok(out)
}

/// `|det|` of the central-difference Jacobian of `f` at `x`.
pub fn numeric_abs_det(f: &dyn Fn(&[f64]) -> ToolResult<Vec<f64>>, x: &[f64]) -> ToolResult<f64> {
    let n = x.len();
    let h = 1e-6;
    let mut jac = nalgebra::DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac.determinant().abs())
}

fn det_rel_err(logdet: f64, det: f64) -> f64 {
    (logdet.exp() - det).abs() / det
}

pub fn logdet_suite(seed: u64, hooks: &CheckHooks) -> ToolResult<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = SUITE_LOGDET;
    let (mut spline, mut affine, mut conv) = (0f64, 0f64, 0f64);
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.9..2.9)).collect();

        let p = random_spline(&mut rng, n, 24, 3.0)?;
        let f = |v: &[f64]| Ok(p.forward(&Tensor::row(v))?.0.into_data());
        let ld = (hooks.spline_logdet)(p.forward(&Tensor::row(&x))?.1);
        spline = spline.max(det_rel_err(ld, numeric_abs_det(&f, &x)?));

        let a = random_affine(&mut rng, n)?;
        let f = |v: &[f64]| Ok(a.forward(&Tensor::row(v))?.0.into_data());
        affine = affine.max(det_rel_err(a.forward(&Tensor::row(&x))?.1, numeric_abs_det(&f, &x)?));

        let c = random_invconv(&mut rng, n);
        let f = |v: &[f64]| Ok(c.forward(&Tensor::row(v))?.0.into_data());
        conv = conv.max(det_rel_err(c.forward(&Tensor::row(&x))?.1, numeric_abs_det(&f, &x)?));
    }
    Ok(vec![
        result(s, "spline, 100 parameterizations, dims ≤ 8", spline, 1e-4),
        result(s, "affine, 100 parameterizations, dims ≤ 8", affine, 1e-6),
        result(s, "invconv, 100 parameterizations, dims ≤ 8", conv, 1e-6),
    ])
}

/// Max relative error of the NLL gradient over `coords` random parameters.
pub fn nll_gradient_error(model: &ProsodyModel, batch: &Batch, coords: usize, seed: u64) -> ToolResult<f64> {
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, batch)?;
    let grads = tape.backward(f.nll)?;
    let mut m = model.clone();
    m.store.zero_grads();
    m.store.accumulate(&grads);
    let analytic = m.store.flat_grads();
    let params = m.store.flat_values();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // with a step of 1e-6 the central difference carries ~1e-10 of rounding
    // noise, so near-zero gradients are compared against noise alone
    let live: Vec<usize> = (0..params.len()).filter(|&i| analytic[i].abs() > 1e-5).collect();
    if live.is_empty() {
        return Err(ToolError::Verification("all NLL gradients vanish".into()));
    }
    let idx: Vec<usize> = (0..coords).map(|_| live[rng.random_range(0..live.len())]).collect();
    let eval = |p: &[f64]| -> pflow_core::Result<Probe> {
        m.store.set_flat_values(p)?;
        let mut tape = Tape::new();
        let f = m.forward(&mut tape, batch)?;
        Ok(Probe {
            value: tape.value(f.nll).item()?,
            signature: tape.branch_signature(),
        })
    };
    Ok(grad_check(eval, &params, &analytic, 1e-6, Some(&idx))?.max_rel_err)
}

pub fn gradient_suite(seed: u64) -> ToolResult<Vec<CheckResult>> {
    let s = SUITE_GRAD;
    let cases = [
        ("bipartite affine NLL", ModelConfig::bgap(CouplingPreset::Affine)),
        ("bipartite hybrid spline NLL", ModelConfig::bgap(CouplingPreset::Hybrid)),
        ("autoregressive affine NLL", ModelConfig::agap(CouplingPreset::Affine)),
        ("autoregressive spline NLL", ModelConfig::agap(CouplingPreset::Spline)),
    ];
    let mut out = Vec::new();
    for (i, (name, cfg)) in cases.into_iter().enumerate() {
        let model = random_model(cfg, seed + 10 + i as u64)?;
        let ex = small_corpus(&model.config, seed + i as u64)?;
        let batch = match model.config.kind {
            ModelKind::Bgap => Batch::stack(&[&ex[0], &ex[1]])?,
            ModelKind::Agap => Batch::crops(&[(&ex[0], 0), (&ex[1], 2)], 8)?,
        };
        out.push(result(s, name, nll_gradient_error(&model, &batch, 200, seed + i as u64)?, 1e-4));
    }
    Ok(out)
}

pub fn run_checks(seed: u64, hooks: &CheckHooks) -> ToolResult<CheckReport> {
    let mut checks = Vec::new();
    let mut timings = Vec::new();
    let mut timed = |suite: &str, f: &mut dyn FnMut() -> ToolResult<Vec<CheckResult>>| -> ToolResult<()> {
        let t0 = Instant::now();
        checks.extend(f()?);
        timings.push(SuiteTiming {
            suite: suite.into(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        Ok(())
    };
    timed(SUITE_INVERT, &mut || invertibility_suite(seed))?;
    timed(SUITE_LOGDET, &mut || logdet_suite(seed, hooks))?;
    timed(SUITE_GRAD, &mut || gradient_suite(seed))?;
    Ok(CheckReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        timings,
    })
}
