//! Metrics over tracks and the post-processing of sampled contours.

use serde::{Deserialize, Serialize};

use crate::dcore::Tensor;
use crate::error::{Error, Result};
use crate::flows::{AuxFeature, Feature, ModelConfig};
use crate::prep::{cwt_decode, descale_f0, Filler, SequenceTrack};

/// Default threshold on the scaled (`ln f0 / 6`) value below which a sampled
/// frame is unvoiced.
pub const VOICING_THRESHOLD: f64 = 0.3;

/// `12·log2(f/440) + 69`.
pub fn to_midi(f_hz: f64) -> Result<f64> {
    if !(f_hz > 0.0) || !f_hz.is_finite() {
        return Err(Error::Domain(format!("frequency must be positive, got {f_hz}")));
    }
    Ok(12.0 * (f_hz / 440.0).log2() + 69.0)
}

/// Mean, standard deviation, skewness and excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: f64,
    pub count: usize,
}

pub fn moments(samples: &[f64]) -> Result<Moments> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::Degenerate(format!("moments need at least 4 samples, got {n}")));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let central = |k: i32| samples.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / nf;
    let var = central(2);
    if !(var > 0.0) {
        return Err(Error::Degenerate("zero variance: skewness and kurtosis undefined".into()));
    }
    Ok(Moments {
        mu1: mean,
        mu2: var.sqrt(),
        mu3: central(3) / var.powf(1.5),
        mu4: central(4) / (var * var) - 3.0,
        count: n,
    })
}

/// Voiced frames of a track as midi notes.
pub fn voiced_midi(track: &SequenceTrack) -> Result<Vec<f64>> {
    track
        .f0_hz
        .iter()
        .zip(&track.voiced)
        .filter(|(_, v)| **v)
        .map(|(f, _)| to_midi(*f))
        .collect()
}

fn same_len(op: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{op}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// Mean absolute difference of two voicing masks.
pub fn vde(pred: &[bool], reference: &[bool]) -> Result<f64> {
    same_len("vde", pred.len(), reference.len())?;
    if pred.is_empty() {
        return Err(Error::EmptySequence("vde over zero frames"));
    }
    let wrong = pred.iter().zip(reference).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Mean squared midi difference over frames voiced in the reference and
/// given a positive F0 by the prediction. Returns `(value, frames used)`.
pub fn vfe(pred_f0: &[f64], ref_f0: &[f64], ref_mask: &[bool]) -> Result<(f64, usize)> {
    same_len("vfe", pred_f0.len(), ref_f0.len())?;
    same_len("vfe", ref_f0.len(), ref_mask.len())?;
    let mut acc = 0.0;
    let mut n = 0;
    for i in 0..ref_f0.len() {
        if ref_mask[i] && pred_f0[i] > 0.0 {
            let d = to_midi(pred_f0[i])? - to_midi(ref_f0[i])?;
            acc += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("no frames voiced in both tracks".into()));
    }
    Ok((acc / n as f64, n))
}

/// Full-length energy MSE.
pub fn enr(pred: &[f64], reference: &[f64]) -> Result<f64> {
    same_len("enr", pred.len(), reference.len())?;
    if pred.is_empty() {
        return Err(Error::EmptySequence("enr over zero frames"));
    }
    Ok(pred.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Frames at or below `threshold` (scaled domain) become unvoiced with
/// `f0 = 0`; the rest map back to Hz via `exp(divisor · v)`.
pub fn threshold_sampled_track(
    scaled: &[f64],
    energy: &[f64],
    divisor: f64,
    threshold: f64,
    frame_rate: f64,
) -> Result<SequenceTrack> {
    same_len("threshold", scaled.len(), energy.len())?;
    let f0: Vec<f64> = scaled
        .iter()
        .map(|&v| if v > threshold { descale_f0(v, divisor) } else { 0.0 })
        .collect();
    SequenceTrack::from_f0(f0, energy.to_vec(), frame_rate)
}

/// Turns sampled model frames `[T × F]` into a track.
///
/// F0 models with gap-marking fillers are thresholded; with interpolated or
/// wavelet features the classifier's `voiced` decision gives the mask.
/// Energy models produce an all-unvoiced track carrying the sampled energy.
pub fn decode_sample(
    frames: &Tensor,
    voiced: &[bool],
    cfg: &ModelConfig,
    reference_energy: Option<&[f64]>,
    frame_rate: f64,
) -> Result<SequenceTrack> {
    let t = frames.rows();
    same_len("decode_sample", t, voiced.len())?;
    let col = |c: usize| -> Vec<f64> { (0..t).map(|i| frames.get(i, c)).collect() };
    let energy = match reference_energy {
        Some(e) => {
            same_len("decode_sample", t, e.len())?;
            e.to_vec()
        }
        None => vec![0.0; t],
    };
    let div = cfg.preproc.f0_divisor;
    match (cfg.feature, cfg.aux, cfg.preproc.filler) {
        (Feature::Energy, _, _) => {
            let e: Vec<f64> = col(0).into_iter().map(|v| v.max(0.0)).collect();
            SequenceTrack::from_f0(vec![0.0; t], e, frame_rate)
        }
        (Feature::F0, AuxFeature::Diff, Filler::DistanceTransform | Filler::UnvoicedBias | Filler::None) => {
            threshold_sampled_track(&col(0), &energy, div, VOICING_THRESHOLD, frame_rate)
        }
        (Feature::F0, aux, _) => {
            let scaled = match aux {
                AuxFeature::Cwt => cwt_decode(frames)?,
                AuxFeature::Diff => col(0),
            };
            let f0 = scaled
                .iter()
                .zip(voiced)
                .map(|(&v, &is_v)| if is_v { descale_f0(v, div).clamp(1.0, 20_000.0) } else { 0.0 })
                .collect();
            SequenceTrack::from_f0(f0, energy, frame_rate)
        }
    }
}

/// Per-utterance metrics of a predicted track against its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub vde: f64,
    /// `None` when no frame is voiced in both tracks.
    pub vfe: Option<f64>,
    pub vfe_frames: usize,
    pub enr: f64,
}

pub fn compare_tracks(pred: &SequenceTrack, reference: &SequenceTrack) -> Result<UtteranceMetrics> {
    same_len("compare_tracks", pred.len(), reference.len())?;
    let (vfe_v, n) = match vfe(&pred.f0_hz, &reference.f0_hz, &reference.voiced) {
        Ok((v, n)) => (Some(v), n),
        Err(Error::Degenerate(_)) => (None, 0),
        Err(e) => return Err(e),
    };
    Ok(UtteranceMetrics {
        vde: vde(&pred.voiced, &reference.voiced)?,
        vfe: vfe_v,
        vfe_frames: n,
        enr: enr(&pred.energy, &reference.energy)?,
    })
}

/// Mean of a metric and its per-utterance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let mean = if values.is_empty() { f64::NAN } else { values.iter().sum::<f64>() / values.len() as f64 };
        MetricSummary { mean, values }
    }
}

/// Corpus-level report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub utterances: Vec<String>,
    pub vde: MetricSummary,
    pub vfe: MetricSummary,
    pub enr: MetricSummary,
    /// Frames contributing to VDE/ENR and VFE respectively.
    pub frames: usize,
    pub vfe_frames: usize,
    pub moments_reference: Option<Moments>,
    pub moments_predicted: Option<Moments>,
}

/// Metrics for aligned `(id, predicted, reference)` triples.
pub fn evaluate(pairs: &[(String, SequenceTrack, SequenceTrack)]) -> Result<MetricReport> {
    let mut ids = Vec::new();
    let (mut vdes, mut vfes, mut enrs) = (Vec::new(), Vec::new(), Vec::new());
    let (mut frames, mut vfe_frames) = (0, 0);
    let (mut ref_midi, mut pred_midi) = (Vec::new(), Vec::new());
    for (id, pred, reference) in pairs {
        let m = compare_tracks(pred, reference)?;
        ids.push(id.clone());
        vdes.push(m.vde);
        if let Some(v) = m.vfe {
            vfes.push(v);
        }
        enrs.push(m.enr);
        frames += pred.len();
        vfe_frames += m.vfe_frames;
        ref_midi.extend(voiced_midi(reference)?);
        pred_midi.extend(voiced_midi(pred)?);
    }
    Ok(MetricReport {
        utterances: ids,
        vde: MetricSummary::from_values(vdes),
        vfe: MetricSummary::from_values(vfes),
        enr: MetricSummary::from_values(enrs),
        frames,
        vfe_frames,
        moments_reference: moments(&ref_midi).ok(),
        moments_predicted: moments(&pred_midi).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midi_examples() {
        assert_eq!(to_midi(440.0).unwrap(), 69.0);
        assert_eq!(to_midi(880.0).unwrap(), 81.0);
        assert_eq!(to_midi(220.0).unwrap(), 57.0);
        assert!(matches!(to_midi(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn metric_examples() {
        assert_eq!(vde(&[true, true, false, false], &[true, false, false, true]).unwrap(), 0.5);
        assert_eq!(vde(&[true, false], &[false, true]).unwrap(), 1.0);
        let m = moments(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_eq!((m.mu1, m.mu2, m.mu3), (0.0, 1.0, 0.0));
        assert!(moments(&[2.0; 5]).is_err());
        assert_eq!(enr(&[1.5, 2.5], &[1.0, 2.0]).unwrap(), 0.25);
        let r = [220.0, 0.0, 330.0];
        let up: Vec<f64> = r.iter().map(|f| f * 2f64.powf(1.0 / 12.0)).collect();
        let (v, n) = vfe(&up, &r, &[true, false, true]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(n, 2);
    }

    #[test]
    fn thresholding() {
        let v = 220f64.ln() / 6.0;
        let t = threshold_sampled_track(&[0.0, v, -0.7], &[1.0; 3], 6.0, VOICING_THRESHOLD, 80.0).unwrap();
        assert_eq!(t.voiced, vec![false, true, false]);
        assert!((t.f0_hz[1] - 220.0).abs() < 1e-6);
    }
}
