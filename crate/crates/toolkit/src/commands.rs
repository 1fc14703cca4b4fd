use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use pflow_core::dcore::ParamCheckpoint;
use pflow_core::eval::{compare_tracks, decode_sample, evaluate, MetricReport, Moments};
use pflow_core::flows::{assemble, Example, Feature, ModelConfig, ProsodyModel};
use pflow_core::prep::SequenceTrack;
use pflow_core::synthgen::{gen_corpus, SynthConfig};
use pflow_core::train::{fit, LossWeights, PriorMonitor, RunPaths, StepRecord, TrainConfig, TrainState, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{EvalArgs, GenArgs, ParamsArg, PrepArgs, SampleArgs, TrainArgs};
use crate::corpus::{self, corpus_files, load_corpus, track_path, Utterance};
use crate::error::{ToolError, ToolResult};
use crate::manifest::{prepare_output, RunManifest};

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize")
}

fn write(path: &Path, text: &str) -> ToolResult<()> {
    std::fs::write(path, text).map_err(|e| ToolError::io(path, e))
}

fn mkdir(path: &Path) -> ToolResult<()> {
    std::fs::create_dir_all(path).map_err(|e| ToolError::io(path, e))
}

pub fn cmd_gen(args: &GenArgs) -> ToolResult<usize> {
    let synth = SynthConfig {
        seed: args.seed,
        utterances: args.utterances,
        min_frames: args.min_frames,
        max_frames: args.max_frames,
        vocab_size: args.vocab_size,
        boundary_jitter: args.boundary_jitter,
        ..SynthConfig::default()
    };
    let corpus = gen_corpus(&synth)?;
    prepare_output(&args.out, args.force)?;
    mkdir(&args.out.join(corpus::TRACKS))?;
    mkdir(&args.out.join(corpus::PHONEMES))?;
    for (i, (track, seq)) in corpus.iter().enumerate() {
        let id = corpus::utterance_id(i);
        track.save(track_path(&args.out, &id))?;
        seq.save(corpus::phoneme_path(&args.out, &id))?;
    }
    let mut m = RunManifest::new("gen", args.seed, to_value(&synth));
    m.add_artifacts(&args.out)?;
    m.write(&args.out)?;
    Ok(corpus.len())
}

fn corpus_vocab(utts: &[Utterance]) -> usize {
    utts.iter().flat_map(|u| u.phonemes.ids.iter()).max().map_or(1, |m| m + 1)
}

fn examples(utts: &[Utterance], cfg: &ModelConfig) -> ToolResult<Vec<Example>> {
    utts.iter()
        .map(|u| {
            let track = u.track.as_ref().expect("corpus loaded with tracks");
            assemble(track, &u.phonemes, cfg).map_err(|e| match e {
                pflow_core::Error::Io { .. } => e.into(),
                other => ToolError::Usage(format!("utterance {}: {other}", u.id)),
            })
        })
        .collect()
}

fn add_corpus_inputs(m: &mut RunManifest, dir: &Path, utts: &[Utterance]) -> ToolResult<()> {
    for p in corpus_files(dir, utts) {
        m.add_input(&p)?;
    }
    Ok(())
}

/// Per-utterance model inputs (grouped rows) plus a summary table.
pub fn cmd_prep(args: &PrepArgs) -> ToolResult<()> {
    let utts = load_corpus(&args.corpus, true)?;
    let cfg = args.model.to_config(corpus_vocab(&utts))?;
    let ex = examples(&utts, &cfg)?;
    prepare_output(&args.out, args.force)?;
    mkdir(&args.out.join("inputs"))?;
    let mut summary = String::from("id,frames,groups,width,voiced_fraction,min,max\n");
    for (u, e) in utts.iter().zip(&ex) {
        let mut s = String::from("row");
        for c in 0..e.x.cols() {
            let _ = write!(s, ",c{c}");
        }
        s.push('\n');
        for r in 0..e.x.rows() {
            let _ = write!(s, "{r}");
            for v in e.x.row_slice(r) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        write(&args.out.join("inputs").join(format!("{}.csv", u.id)), &s)?;
        let track = u.track.as_ref().expect("loaded with tracks");
        let lo = e.x.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = e.x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{lo},{hi}",
            u.id,
            track.len(),
            e.x.rows(),
            e.x.cols(),
            track.voiced_count() as f64 / track.len() as f64
        );
    }
    write(&args.out.join("summary.csv"), &summary)?;
    cfg.save(args.out.join("model.json"))?;
    let mut m = RunManifest::new("prep", 0, to_value(args));
    add_corpus_inputs(&mut m, &args.corpus, &utts)?;
    m.add_artifacts(&args.out)?;
    m.write(&args.out)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: Vec<StepRecord>,
    /// Mean monitor over the final window of this invocation.
    pub final_monitor: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn cmd_train(args: &TrainArgs) -> ToolResult<TrainSummary> {
    let warnings = args.model.warnings();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let utts = load_corpus(&args.corpus, true)?;
    let paths = RunPaths::new(&args.out);
    let mut trainer = if args.resume {
        let mut state = TrainState::load(paths.checkpoint())?;
        state.train.steps = args.steps;
        Trainer::from_state(state)?
    } else {
        let cfg = args.model.to_config(corpus_vocab(&utts))?;
        let train = TrainConfig {
            steps: args.steps,
            batch_size: args.batch_size,
            learning_rate: args.learning_rate,
            seed: args.seed,
            weights: LossWeights {
                nll: 1.0,
                voiced_bce: args.voiced_bce_weight,
            },
            crop_len: args.crop_len,
            checkpoint_every: args.checkpoint_every,
            ..TrainConfig::default()
        };
        prepare_output(&args.out, args.force)?;
        Trainer::new(ProsodyModel::new(cfg, args.seed)?, train)?
    };
    let ex = examples(&utts, &trainer.model.config)?;
    write(
        &args.out.join("train.json"),
        &serde_json::to_string_pretty(&trainer.config).expect("train config serializes"),
    )?;
    let history = fit(&mut trainer, &ex, Some(&paths))?;
    let mut window = PriorMonitor::new(trainer.config.monitor_window);
    history.iter().for_each(|r| window.push(r.monitor));

    let mut m = RunManifest::new("train", trainer.config.seed, to_value(args));
    add_corpus_inputs(&mut m, &args.corpus, &utts)?;
    m.add_artifacts(&args.out)?;
    m.write(&args.out)?;
    Ok(TrainSummary {
        history,
        final_monitor: window.mean(),
        warnings,
    })
}

pub fn load_run(dir: &Path, which: ParamsArg) -> ToolResult<ProsodyModel> {
    let paths = RunPaths::new(dir);
    let cfg = ModelConfig::load(paths.model_config())?;
    let params = match which {
        ParamsArg::Final => paths.final_params(),
        ParamsArg::Best => paths.best_params(),
    };
    let ckpt = ParamCheckpoint::load(&params)?;
    ProsodyModel::from_checkpoint(cfg, &ckpt).map_err(|e| match e {
        pflow_core::Error::Format(msg) => ToolError::Core(pflow_core::Error::Format(format!(
            "{} does not fit {}: {msg}",
            params.display(),
            paths.model_config().display()
        ))),
        other => other.into(),
    })
}

pub fn sample_name(id: &str, k: usize) -> String {
    format!("{id}_s{k:02}")
}

/// Writes `num_samples` tracks per utterance; returns the file count.
pub fn cmd_sample(args: &SampleArgs) -> ToolResult<usize> {
    let model = load_run(&args.run, args.params)?;
    let mut utts = load_corpus(&args.corpus, false)?;
    if let Some(n) = args.limit {
        utts.truncate(n);
    }
    if !(args.sigma >= 0.0) {
        return Err(ToolError::Usage(format!("--sigma must be ≥ 0, got {}", args.sigma)));
    }
    prepare_output(&args.out, args.force)?;
    let cfg = &model.config;
    let mut count = 0;
    for (i, u) in utts.iter().enumerate() {
        let t = u.phonemes.frames();
        let reference = u.track.as_ref().filter(|r| r.len() == t);
        let rate = reference.map_or(80.0, |r| r.frame_rate);
        for k in 0..args.num_samples {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            rng.set_stream((i * args.num_samples + k) as u64);
            let out = model.sample(&u.phonemes, args.sigma, &mut rng)?;
            let energy = reference.map(|r| r.energy.as_slice());
            let mut track = decode_sample(&out.frames, &out.voiced, cfg, energy, rate)?;
            if let (Feature::Energy, Some(r)) = (cfg.feature, reference) {
                track = SequenceTrack::new(r.f0_hz.clone(), r.voiced.clone(), track.energy, rate)?;
            }
            track.save(args.out.join(format!("{}.csv", sample_name(&u.id, k))))?;
            count += 1;
        }
    }
    let mut m = RunManifest::new("sample", args.seed, to_value(args));
    let paths = RunPaths::new(&args.run);
    m.add_input(&paths.model_config())?;
    m.add_input(&match args.params {
        ParamsArg::Final => paths.final_params(),
        ParamsArg::Best => paths.best_params(),
    })?;
    for p in corpus_files(&args.corpus, &utts) {
        m.add_input(&p)?;
    }
    m.add_artifacts(&args.out)?;
    m.write(&args.out)?;
    Ok(count)
}

/// Splits `<id>_s<k>` into `(id, k)`; a bare stem is sample 0.
pub fn parse_sample_name(stem: &str) -> (String, usize) {
    if let Some((id, k)) = stem.rsplit_once("_s") {
        if let Ok(k) = k.parse() {
            return (id.to_string(), k);
        }
    }
    (stem.to_string(), 0)
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: MetricReport,
}

fn moments_row(name: &str, m: Option<&Moments>) -> String {
    match m {
        Some(m) => format!("{name},{},{},{},{},{}\n", m.mu1, m.mu2, m.mu3, m.mu4, m.count),
        None => format!("{name},,,,,0\n"),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> ToolResult<EvalOutput> {
    let refs = load_corpus(&args.reference, true)?;
    let by_id: BTreeMap<&str, &SequenceTrack> = refs
        .iter()
        .map(|u| (u.id.as_str(), u.track.as_ref().expect("loaded with tracks")))
        .collect();
    if !args.samples.is_dir() {
        return Err(ToolError::io(&args.samples, "samples directory not found"));
    }
    let stems = corpus::track_stems(&args.samples)?;
    let mut unmatched = Vec::new();
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::new();
    let mut rows = Vec::new();
    for stem in &stems {
        let (id, k) = parse_sample_name(stem);
        let Some(reference) = by_id.get(id.as_str()) else {
            unmatched.push(stem.clone());
            continue;
        };
        let pred = SequenceTrack::load(args.samples.join(format!("{stem}.csv")))?;
        if pred.len() != reference.len() {
            return Err(ToolError::Usage(format!(
                "{stem}: {} frames, reference {id} has {}",
                pred.len(),
                reference.len()
            )));
        }
        seen.insert(id.clone());
        rows.push((id, k, compare_tracks(&pred, reference)?));
        pairs.push((stem.clone(), pred, (*reference).clone()));
    }
    let missing: Vec<&str> = by_id.keys().filter(|id| !seen.contains(**id)).copied().collect();
    if !unmatched.is_empty() || !missing.is_empty() {
        return Err(ToolError::Usage(format!(
            "ids do not align; samples without reference: [{}]; references without samples: [{}]",
            unmatched.join(", "),
            missing.join(", ")
        )));
    }
    let report = evaluate(&pairs)?;
    prepare_output(&args.out, args.force)?;
    write(
        &args.out.join("report.json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    let mut csv = String::from("utterance,sample,vde,vfe,enr\n");
    for (id, k, m) in &rows {
        let vfe = m.vfe.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(csv, "{id},{k},{},{vfe},{}", m.vde, m.enr);
    }
    write(&args.out.join("metrics.csv"), &csv)?;
    let mut table = String::from("source,mu1,mu2,mu3,mu4,count\n");
    table += &moments_row("reference", report.moments_reference.as_ref());
    table += &moments_row("samples", report.moments_predicted.as_ref());
    write(&args.out.join("moments.csv"), &table)?;

    let mut m = RunManifest::new("eval", 0, to_value(args));
    for u in &refs {
        m.add_input(&track_path(&args.reference, &u.id))?;
    }
    for stem in &stems {
        m.add_input(&args.samples.join(format!("{stem}.csv")))?;
    }
    m.add_artifacts(&args.out)?;
    m.write(&args.out)?;
    Ok(EvalOutput { report })
}
