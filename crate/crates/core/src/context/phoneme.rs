use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dcore::Tensor;
use crate::error::{Error, Result};

/// Phoneme ids with per-phoneme durations in frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSeq {
    pub ids: Vec<usize>,
    pub durations: Vec<usize>,
}

impl PhonemeSeq {
    pub fn new(ids: Vec<usize>, durations: Vec<usize>) -> Result<Self> {
        let s = PhonemeSeq { ids, durations };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.durations.len() {
            return Err(Error::Data(format!(
                "{} phoneme ids but {} durations",
                self.ids.len(),
                self.durations.len()
            )));
        }
        if self.ids.is_empty() {
            return Err(Error::EmptySequence("phoneme sequence has no entries"));
        }
        if let Some(p) = self.durations.iter().position(|d| *d == 0) {
            return Err(Error::Data(format!("phoneme {p} has zero duration")));
        }
        Ok(())
    }

    pub fn check_vocab(&self, size: usize) -> Result<()> {
        match self.ids.iter().find(|id| **id >= size) {
            Some(&id) => Err(Error::Vocabulary { id, size }),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Σ durations.
    pub fn frames(&self) -> usize {
        self.durations.iter().sum()
    }

    /// Position in the sequence of the phoneme active at each frame.
    pub fn frame_positions(&self) -> Vec<usize> {
        self.durations
            .iter()
            .enumerate()
            .flat_map(|(p, &d)| std::iter::repeat_n(p, d))
            .collect()
    }

    /// Phoneme id active at each frame.
    pub fn frame_ids(&self) -> Vec<usize> {
        self.frame_positions().into_iter().map(|p| self.ids[p]).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("phoneme sequences always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: PhonemeSeq =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("phoneme file: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Text context: `phi` holds one row per frame (`[T × C]`, the transpose of
/// the channel-by-time layout) alongside the voiced mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningContext {
    pub phi: Tensor,
    pub voiced: Vec<bool>,
}

/// Replicates each phoneme's embedding row over its duration. The mask is
/// left all-unvoiced; callers fill it from a track or the classifier.
pub fn build_phi_text(seq: &PhonemeSeq, table: &Tensor) -> Result<ConditioningContext> {
    seq.validate()?;
    seq.check_vocab(table.rows())?;
    let c = table.cols();
    let ids = seq.frame_ids();
    let mut data = Vec::with_capacity(ids.len() * c);
    for id in &ids {
        data.extend_from_slice(table.row_slice(*id));
    }
    Ok(ConditioningContext {
        phi: Tensor::matrix(ids.len(), c, data)?,
        voiced: vec![false; ids.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replication_follows_durations() {
        let table = Tensor::matrix(3, 4, (0..12).map(f64::from).collect()).unwrap();
        let seq = PhonemeSeq::new(vec![1, 2], vec![2, 3]).unwrap();
        let ctx = build_phi_text(&seq, &table).unwrap();
        assert_eq!(ctx.phi.shape(), &[5, 4]);
        for t in 0..5 {
            let want = if t < 2 { table.row_slice(1) } else { table.row_slice(2) };
            assert_eq!(ctx.phi.row_slice(t), want);
        }
        let one = PhonemeSeq::new(vec![0], vec![1]).unwrap();
        assert_eq!(build_phi_text(&one, &table).unwrap().phi.data(), table.row_slice(0));
    }

    #[test]
    fn invalid_sequences() {
        assert!(matches!(PhonemeSeq::new(vec![1], vec![0]), Err(Error::Data(_))));
        let table = Tensor::zeros(&[3, 2]);
        let seq = PhonemeSeq::new(vec![5], vec![2]).unwrap();
        assert_eq!(
            build_phi_text(&seq, &table).unwrap_err(),
            Error::Vocabulary { id: 5, size: 3 }
        );
    }

    #[test]
    fn json_round_trip() {
        let seq = PhonemeSeq::new(vec![4, 1, 7], vec![3, 1, 9]).unwrap();
        let text = seq.to_json();
        assert_eq!(text, r#"{"ids":[4,1,7],"durations":[3,1,9]}"#);
        assert_eq!(PhonemeSeq::from_json(&text).unwrap(), seq);
        assert!(PhonemeSeq::from_json("{\"ids\":[1]}").is_err());
    }
}
