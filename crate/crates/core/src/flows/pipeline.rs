use super::config::{AuxFeature, Feature, ModelConfig};
use crate::context::{PhonemeSeq, ScatterOp};
use crate::dcore::Tensor;
use crate::error::{Error, Result};
use crate::prep::{
    centered_diff_column, cwt_encode, group, group_frame_index, log_f0, scale_energy, scale_f0,
    Filler, GroupLayout, SequenceTrack,
};

/// One utterance ready for the model.
#[derive(Debug, Clone)]
pub struct Example {
    /// Grouped data without the learned unvoiced bias, `[G × W]`.
    pub x: Tensor,
    pub layout: GroupLayout,
    /// Phoneme id per grouped frame slot (`G·N`, padding repeats the last frame).
    pub slot_ids: Vec<usize>,
    /// Ground-truth voicing per grouped frame slot.
    pub slot_voiced: Vec<bool>,
    /// Where each phoneme's bias lands in `x` (input index = phoneme id).
    /// Empty unless the filler is the unvoiced bias.
    pub bias: ScatterOp,
}

impl Example {
    pub fn groups(&self) -> usize {
        self.x.rows()
    }
}

/// scale → filler → auxiliary features → grouping, plus the slot-level
/// alignment the model needs to build and group its context.
pub fn assemble(track: &SequenceTrack, seq: &PhonemeSeq, cfg: &ModelConfig) -> Result<Example> {
    cfg.validate()?;
    track.validate()?;
    seq.validate()?;
    seq.check_vocab(cfg.vocab_size)?;
    let t = track.len();
    if seq.frames() != t {
        return Err(Error::Contract(format!(
            "phoneme durations cover {} frames, track has {t}",
            seq.frames()
        )));
    }
    let n = cfg.preproc.group_size;
    let f = cfg.frame_channels();
    let frames: Vec<f64> = match (cfg.feature, cfg.aux) {
        (Feature::Energy, _) => {
            let (e, d) = scale_energy(track, &cfg.preproc)?;
            e.into_iter().zip(d).flat_map(|(a, b)| [a, b]).collect()
        }
        (Feature::F0, AuxFeature::Diff) => {
            let s = scale_f0(track, &cfg.preproc)?;
            s.main.into_iter().zip(s.diff).flat_map(|(a, b)| [a, b]).collect()
        }
        (Feature::F0, AuxFeature::Cwt) => {
            let scaled: Vec<f64> = log_f0(track)?
                .into_iter()
                .map(|v| v / cfg.preproc.f0_divisor)
                .collect();
            cwt_encode(&scaled, &track.voiced)?.into_data()
        }
    };
    let grouped = group(&Tensor::matrix(t, f, frames)?, n)?;
    let index = group_frame_index(t, n);
    let ids = seq.frame_ids();
    let slot_ids: Vec<usize> = index.iter().map(|&i| ids[i]).collect();
    let slot_voiced: Vec<bool> = index.iter().map(|&i| track.voiced[i]).collect();

    let width = grouped.layout.width();
    let mut bias = ScatterOp::new(grouped.values.rows(), width);
    if cfg.preproc.filler == Filler::UnvoicedBias {
        let mut slots_of = vec![Vec::new(); t];
        for (slot, &frame) in index.iter().enumerate() {
            slots_of[frame].push(slot);
        }
        let mut put = |frame: usize, channel: usize, id: usize, coef: f64| {
            for &slot in &slots_of[frame] {
                let out = (slot / n) * width + (slot % n) * f + channel;
                bias.push(out, id, coef);
            }
        };
        for src in (0..t).filter(|&i| !track.voiced[i]) {
            // the filler is unscaled; the diff sees the same shift
            put(src, 0, ids[src], 1.0);
            for (u, c) in centered_diff_column(t, cfg.preproc.diff_scale, src) {
                put(u, 1, ids[src], c);
            }
        }
        bias.compact();
    }
    Ok(Example {
        x: grouped.values,
        layout: grouped.layout,
        slot_ids,
        slot_voiced,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::apply_unvoiced_bias;
    use crate::flows::config::{CouplingPreset, ModelKind};
    use crate::prep::{centered_diff, ungroup, ModelInputTensor};

    fn sample() -> (SequenceTrack, PhonemeSeq) {
        let f0 = vec![200.0, 210.0, 0.0, 0.0, 0.0, 190.0, 180.0];
        let track = SequenceTrack::from_f0(f0, vec![1.0, 1.2, 0.3, 0.2, 0.4, 1.1, 1.0], 80.0).unwrap();
        let seq = PhonemeSeq::new(vec![5, 1, 7], vec![2, 3, 2]).unwrap();
        (track, seq)
    }

    #[test]
    fn channel_widths() {
        let (track, seq) = sample();
        let mut cfg = ModelConfig::bgap(CouplingPreset::Hybrid);
        assert_eq!(assemble(&track, &seq, &cfg).unwrap().x.cols(), 4);
        cfg.aux = AuxFeature::Cwt;
        assert_eq!(assemble(&track, &seq, &cfg).unwrap().x.cols(), 24);
        let e = ModelConfig::energy(ModelKind::Bgap, CouplingPreset::Hybrid);
        let ex = assemble(&track, &seq, &e).unwrap();
        assert_eq!(ex.x.cols(), 8);
        assert_eq!(ex.x.rows(), 2);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let (track, _) = sample();
        let seq = PhonemeSeq::new(vec![1], vec![3]).unwrap();
        let cfg = ModelConfig::bgap(CouplingPreset::Hybrid);
        assert!(matches!(assemble(&track, &seq, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn bias_scatter_matches_direct_construction() {
        let (track, seq) = sample();
        let cfg = ModelConfig::agap(CouplingPreset::Spline);
        let ex = assemble(&track, &seq, &cfg).unwrap();
        let mut head = vec![0.0; cfg.vocab_size];
        head[1] = 0.7;
        head[5] = 0.2;
        head[7] = -0.4;
        let per_id = crate::context::bias_from_head(&head);
        let shifted = ex.bias.apply(&per_id).unwrap();
        let with_bias = ModelInputTensor {
            values: Tensor::matrix(ex.x.rows(), ex.x.cols(), {
                ex.x.data().iter().zip(shifted.data()).map(|(a, b)| a + b).collect()
            })
            .unwrap(),
            layout: ex.layout.clone(),
        };
        let frames = ungroup(&with_bias).unwrap();
        let ln = log_f0(&track).unwrap();
        let biased = apply_unvoiced_bias(&ln, &seq, &track.voiced, &head).unwrap();
        let diff = centered_diff(&biased, cfg.preproc.diff_scale).unwrap();
        for i in 0..track.len() {
            let main = if track.voiced[i] { biased[i] / 6.0 } else { biased[i] };
            assert!((frames.get(i, 0) - main).abs() < 1e-12, "main {i}");
            assert!((frames.get(i, 1) - diff[i]).abs() < 1e-12, "diff {i}");
        }
        // padded slot of the last group mirrors the last frame
        assert_eq!(ex.x.row_slice(3)[0], ex.x.row_slice(3)[2]);
    }
}
