//! Seeded synthetic corpus: F0, energy and voicing tracks with phoneme
//! alignments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::context::PhonemeSeq;
use crate::error::{Error, Result};
use crate::eval::{moments, voiced_midi, Moments};
use crate::prep::SequenceTrack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub utterances: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub voiced_run_mean: f64,
    pub unvoiced_run_mean: f64,
    pub phoneme_mean: f64,
    /// Per-utterance base F0 drawn log-uniformly from this range (Hz).
    pub f0_base_range: (f64, f64),
    /// Amplitude of the slow log-F0 drift.
    pub drift: f64,
    /// Standard deviation of the per-run log-F0 offset.
    pub run_offset: f64,
    pub vibrato_depth: f64,
    /// Vibrato frequency in cycles per frame.
    pub vibrato_rate: f64,
    pub f0_noise: f64,
    pub energy_ar: f64,
    pub energy_noise: f64,
    pub unvoiced_energy_gain: f64,
    pub vocab_size: usize,
    /// Ids `0..unvoiced_ids` are only used on unvoiced runs.
    pub unvoiced_ids: usize,
    /// Probability that an unvoiced-run phoneme takes a voiced-capable id,
    /// so those ids do not determine voicing on their own.
    pub shared_id_rate: f64,
    /// A voiced run's last phoneme may extend up to this many frames into
    /// the following unvoiced run.
    pub boundary_jitter: usize,
    pub frame_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            utterances: 200,
            min_frames: 150,
            max_frames: 300,
            voiced_run_mean: 25.0,
            unvoiced_run_mean: 8.0,
            phoneme_mean: 6.0,
            f0_base_range: (100.0, 250.0),
            drift: 0.08,
            run_offset: 0.05,
            vibrato_depth: 0.01,
            vibrato_rate: 0.07,
            f0_noise: 0.005,
            energy_ar: 0.9,
            energy_noise: 0.1,
            unvoiced_energy_gain: 0.3,
            vocab_size: 48,
            unvoiced_ids: 8,
            shared_id_rate: 0.3,
            boundary_jitter: 0,
            frame_rate: 80.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.utterances == 0 {
            return bad("utterance count must be positive");
        }
        if self.min_frames < 2 || self.max_frames < self.min_frames {
            return bad("frame range must satisfy 2 ≤ min ≤ max");
        }
        for (name, m) in [
            ("voiced_run_mean", self.voiced_run_mean),
            ("unvoiced_run_mean", self.unvoiced_run_mean),
            ("phoneme_mean", self.phoneme_mean),
        ] {
            if !(m >= 1.0) || !m.is_finite() {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        if self.voiced_run_mean > self.max_frames as f64 || self.unvoiced_run_mean > self.max_frames as f64 {
            return bad("run-length means exceed the maximum utterance length");
        }
        let (lo, hi) = self.f0_base_range;
        if !(lo >= 80.0 && hi <= 800.0 && lo <= hi) {
            return bad("f0 base range must lie within 80–800 Hz");
        }
        if !(0.0..1.0).contains(&self.energy_ar) {
            return bad("energy_ar must be in [0, 1)");
        }
        if self.unvoiced_ids == 0 || self.unvoiced_ids >= self.vocab_size {
            return bad("need 1 ≤ unvoiced_ids < vocab_size");
        }
        for (name, v) in [
            ("drift", self.drift),
            ("run_offset", self.run_offset),
            ("vibrato_depth", self.vibrato_depth),
            ("vibrato_rate", self.vibrato_rate),
            ("f0_noise", self.f0_noise),
            ("energy_noise", self.energy_noise),
            ("unvoiced_energy_gain", self.unvoiced_energy_gain),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.shared_id_rate) {
            return bad("shared_id_rate must be in [0, 1]");
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive");
        }
        Ok(())
    }

    /// Long-run voiced fraction implied by the run-length means.
    pub fn expected_voiced_fraction(&self) -> f64 {
        self.voiced_run_mean / (self.voiced_run_mean + self.unvoiced_run_mean)
    }
}

/// `1 + Geometric(1/mean)`: support `1, 2, ...` with the given mean.
fn run_length<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 1.0 {
        return 1;
    }
    let g = Geometric::new(1.0 / mean).expect("probability in (0, 1]");
    1 + g.sample(rng) as usize
}

pub fn gen_utterance(cfg: &SynthConfig, index: usize) -> Result<(SequenceTrack, PhonemeSeq)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let t = rng.random_range(cfg.min_frames..=cfg.max_frames);

    // runs of (voiced, length)
    let mut runs: Vec<(bool, usize)> = Vec::new();
    let mut voiced = rng.random_bool(cfg.expected_voiced_fraction());
    let mut total = 0;
    while total < t {
        let mean = if voiced { cfg.voiced_run_mean } else { cfg.unvoiced_run_mean };
        let len = run_length(&mut rng, mean).min(t - total);
        runs.push((voiced, len));
        total += len;
        voiced = !voiced;
    }
    // every utterance carries some voicing
    if runs.iter().all(|r| !r.0) {
        runs[0].0 = true;
    }

    // phonemes per run
    let mut ids = Vec::new();
    let mut durations = Vec::new();
    let mut run_first_phoneme = Vec::with_capacity(runs.len());
    for &(v, len) in &runs {
        run_first_phoneme.push(ids.len());
        let mut left = len;
        while left > 0 {
            let d = run_length(&mut rng, cfg.phoneme_mean).min(left);
            ids.push(if v || rng.random_bool(cfg.shared_id_rate) {
                rng.random_range(cfg.unvoiced_ids..cfg.vocab_size)
            } else {
                rng.random_range(0..cfg.unvoiced_ids)
            });
            durations.push(d);
            left -= d;
        }
    }
    if cfg.boundary_jitter > 0 {
        for r in 1..runs.len() {
            let (v_prev, v_cur) = (runs[r - 1].0, runs[r].0);
            let first = run_first_phoneme[r];
            if v_prev && !v_cur {
                let k = rng.random_range(0..=cfg.boundary_jitter).min(durations[first] - 1);
                durations[first - 1] += k;
                durations[first] -= k;
            }
        }
    }

    // F0
    let base = rng.random_range(cfg.f0_base_range.0.ln()..=cfg.f0_base_range.1.ln());
    let period = rng.random_range(80.0..200.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let vib_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, cfg.f0_noise.max(1e-300)).expect("valid normal");
    let offset = Normal::new(0.0, cfg.run_offset.max(1e-300)).expect("valid normal");
    let e_noise = Normal::new(0.0, cfg.energy_noise.max(1e-300)).expect("valid normal");
    let mut f0 = Vec::with_capacity(t);
    let mut energy = Vec::with_capacity(t);
    let mut ar = 0.0;
    let mut frame = 0;
    for &(v, len) in &runs {
        let run_off = if cfg.run_offset > 0.0 { offset.sample(&mut rng) } else { 0.0 };
        for _ in 0..len {
            let tf = frame as f64;
            let e_step = if cfg.energy_noise > 0.0 { e_noise.sample(&mut rng) } else { 0.0 };
            ar = cfg.energy_ar * ar + e_step;
            let gain = if v { 1.0 } else { cfg.unvoiced_energy_gain };
            energy.push(gain * ar.exp());
            if v {
                let n = if cfg.f0_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let lf = base
                    + cfg.drift * (std::f64::consts::TAU * tf / period + phase).sin()
                    + run_off
                    + cfg.vibrato_depth * (std::f64::consts::TAU * cfg.vibrato_rate * tf + vib_phase).sin()
                    + n;
                f0.push(lf.exp().clamp(80.0, 800.0));
            } else {
                f0.push(0.0);
            }
            frame += 1;
        }
    }
    let track = SequenceTrack::from_f0(f0, energy, cfg.frame_rate)?;
    Ok((track, PhonemeSeq::new(ids, durations)?))
}

/// All utterances; utterance `i` depends only on `(seed, i)`.
pub fn gen_corpus(cfg: &SynthConfig) -> Result<Vec<(SequenceTrack, PhonemeSeq)>> {
    cfg.validate()?;
    (0..cfg.utterances).map(|i| gen_utterance(cfg, i)).collect()
}

/// Moments of all voiced frames in midi.
pub fn gen_reference_moments(tracks: &[SequenceTrack]) -> Result<Moments> {
    if tracks.is_empty() {
        return Err(Error::EmptySequence("no tracks"));
    }
    let mut all = Vec::new();
    for t in tracks {
        all.extend(voiced_midi(t)?);
    }
    moments(&all)
}
