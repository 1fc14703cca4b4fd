use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Per-utterance prosody frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrack {
    /// Hz; zero on unvoiced frames.
    pub f0_hz: Vec<f64>,
    pub voiced: Vec<bool>,
    /// Linear-scale frame energy.
    pub energy: Vec<f64>,
    /// Frames per second.
    pub frame_rate: f64,
}

impl SequenceTrack {
    pub fn new(f0_hz: Vec<f64>, voiced: Vec<bool>, energy: Vec<f64>, frame_rate: f64) -> Result<Self> {
        let t = SequenceTrack {
            f0_hz,
            voiced,
            energy,
            frame_rate,
        };
        t.validate()?;
        Ok(t)
    }

    /// Builds a track whose voicing is implied by `f0 > 0`.
    pub fn from_f0(f0_hz: Vec<f64>, energy: Vec<f64>, frame_rate: f64) -> Result<Self> {
        let voiced = f0_hz.iter().map(|f| *f > 0.0).collect();
        Self::new(f0_hz, voiced, energy, frame_rate)
    }

    pub fn len(&self) -> usize {
        self.f0_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0_hz.is_empty()
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.iter().filter(|v| **v).count()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.f0_hz.len();
        if t == 0 {
            return Err(Error::EmptySequence("track has no frames"));
        }
        if self.voiced.len() != t || self.energy.len() != t {
            return Err(Error::Data(format!(
                "track columns differ in length: f0 {}, voiced {}, energy {}",
                t,
                self.voiced.len(),
                self.energy.len()
            )));
        }
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(Error::Data(format!("invalid frame rate {}", self.frame_rate)));
        }
        for i in 0..t {
            let f = self.f0_hz[i];
            if !f.is_finite() || !self.energy[i].is_finite() {
                return Err(Error::Data(format!("non-finite value at frame {i}")));
            }
            if (f > 0.0) != self.voiced[i] || f < 0.0 {
                return Err(Error::Data(format!(
                    "frame {i}: f0 {f} inconsistent with voiced={}",
                    self.voiced[i]
                )));
            }
        }
        Ok(())
    }

    /// Track file text: `frame_rate=<rate>`, a column header, then
    /// `t,f0_hz,voiced,energy` rows.
    pub fn to_file_string(&self) -> String {
        let mut out = String::with_capacity(32 * self.len());
        let _ = writeln!(out, "frame_rate={}", self.frame_rate);
        out.push_str("t,f0_hz,voiced,energy\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                i,
                self.f0_hz[i],
                u8::from(self.voiced[i]),
                self.energy[i]
            );
        }
        out
    }

    /// Strict parser for [`SequenceTrack::to_file_string`] output.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::Format(format!("line {}: {msg}", line + 1));

        let (n, first) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
        let rate = first
            .strip_prefix("frame_rate=")
            .ok_or_else(|| bad(n, "expected `frame_rate=<float>`"))?
            .trim()
            .parse::<f64>()
            .map_err(|e| bad(n, &e.to_string()))?;

        let mut f0 = Vec::new();
        let mut voiced = Vec::new();
        let mut energy = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            if n == 1 && line.trim() == "t,f0_hz,voiced,energy" {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(bad(n, &format!("expected 4 fields, got {}", fields.len())));
            }
            let t: usize = fields[0].parse().map_err(|_| bad(n, "frame index is not an integer"))?;
            if t != f0.len() {
                return Err(bad(n, &format!("frame index {t} out of sequence")));
            }
            let f: f64 = fields[1].parse().map_err(|_| bad(n, "f0_hz is not a number"))?;
            let v = match fields[2] {
                "0" => false,
                "1" => true,
                other => return Err(bad(n, &format!("voiced must be 0 or 1, got `{other}`"))),
            };
            let e: f64 = fields[3].parse().map_err(|_| bad(n, "energy is not a number"))?;
            f0.push(f);
            voiced.push(v);
            energy.push(e);
        }
        SequenceTrack::new(f0, voiced, energy, rate)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.as_ref().display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SequenceTrack {
        SequenceTrack::from_f0(vec![220.0, 0.0, 110.5], vec![0.5, 0.1, 1e-3], 86.1328125).unwrap()
    }

    #[test]
    fn file_round_trip() {
        let t = sample();
        assert_eq!(SequenceTrack::parse(&t.to_file_string()).unwrap(), t);
    }

    #[test]
    fn voicing_must_match_f0() {
        assert!(SequenceTrack::new(vec![100.0], vec![false], vec![1.0], 80.0).is_err());
        assert!(SequenceTrack::new(vec![0.0], vec![true], vec![1.0], 80.0).is_err());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = "frame_rate=80\nt,f0_hz,voiced,energy\n0,100,1,0.5\n1,abc,1,0.5\n";
        match SequenceTrack::parse(text) {
            Err(Error::Format(m)) => assert!(m.starts_with("line 4"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(SequenceTrack::parse("rate=80\n").is_err());
        assert!(SequenceTrack::parse("frame_rate=80\n0,100,2,0.5\n").is_err());
        assert!(SequenceTrack::parse("frame_rate=80\n1,100,1,0.5\n").is_err());
    }
}
