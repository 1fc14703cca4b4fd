use serde::{Deserialize, Serialize};

use super::track::SequenceTrack;
use crate::error::{Error, Result};

/// How unvoiced gaps in the log-F0 contour are filled before modeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filler {
    /// Negative log distance to the nearest voiced frame.
    DistanceTransform,
    /// Learned per-phoneme non-positive offset (added by the model).
    UnvoicedBias,
    LinearInterp,
    /// Unvoiced frames stay at zero.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocConfig {
    pub group_size: usize,
    /// Centered-difference divisor κ.
    pub diff_scale: f64,
    /// Voiced log-F0 values are divided by this.
    pub f0_divisor: f64,
    /// Multiplier on energy difference features.
    pub energy_diff_gain: f64,
    pub filler: Filler,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            group_size: 2,
            diff_scale: 2.0,
            f0_divisor: 6.0,
            energy_diff_gain: 10.0,
            filler: Filler::DistanceTransform,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::Config("group_size must be positive".into()));
        }
        for (name, v) in [
            ("diff_scale", self.diff_scale),
            ("f0_divisor", self.f0_divisor),
            ("energy_diff_gain", self.energy_diff_gain),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `d[t] = (x[t+1] − x[t−1]) / κ`; the end frames use the one-sided
/// difference scaled by `2/κ`.
pub fn centered_diff(x: &[f64], kappa: f64) -> Result<Vec<f64>> {
    let t = x.len();
    if t < 2 {
        return Err(Error::Data(format!(
            "centered difference needs at least 2 frames, got {t}"
        )));
    }
    let mut d = Vec::with_capacity(t);
    d.push(2.0 * (x[1] - x[0]) / kappa);
    for i in 1..t - 1 {
        d.push((x[i + 1] - x[i - 1]) / kappa);
    }
    d.push(2.0 * (x[t - 1] - x[t - 2]) / kappa);
    Ok(d)
}

/// Sparse form of [`centered_diff`]: for input frame `src`, every
/// `(output frame, coefficient)` it contributes to.
pub fn centered_diff_column(len: usize, kappa: f64, src: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(3);
    if len < 2 {
        return out;
    }
    let last = len - 1;
    let mut push = |u: usize, c: f64| {
        if let Some(e) = out.iter_mut().find(|(v, _)| *v == u) {
            e.1 += c;
        } else {
            out.push((u, c));
        }
    };
    // output 0 = 2(x1 − x0)/κ
    if src == 0 {
        push(0, -2.0 / kappa);
    }
    if src == 1 {
        push(0, 2.0 / kappa);
    }
    // output last = 2(x_last − x_{last−1})/κ
    if src == last {
        push(last, 2.0 / kappa);
    }
    if src + 1 == last {
        push(last, -2.0 / kappa);
    }
    // interior outputs u: (x_{u+1} − x_{u−1})/κ
    if src >= 2 && src - 1 < last {
        push(src - 1, 1.0 / kappa);
    }
    if src + 1 < last {
        push(src + 1, -1.0 / kappa);
    }
    out
}

/// Frames to the nearest voiced frame in either direction (0 on voiced frames).
pub fn distance_to_voiced(voiced: &[bool]) -> Result<Vec<usize>> {
    if !voiced.iter().any(|v| *v) {
        return Err(Error::Degenerate("no voiced frames".into()));
    }
    let t = voiced.len();
    let mut dist = vec![usize::MAX; t];
    let mut last: Option<usize> = None;
    for i in 0..t {
        if voiced[i] {
            last = Some(i);
        }
        if let Some(l) = last {
            dist[i] = i - l;
        }
    }
    last = None;
    for i in (0..t).rev() {
        if voiced[i] {
            last = Some(i);
        }
        if let Some(l) = last {
            dist[i] = dist[i].min(l - i);
        }
    }
    Ok(dist)
}

/// Voiced frames unchanged; unvoiced frame `t` becomes `−ln d(t)`.
pub fn distance_fill(f0_log: &[f64], voiced: &[bool]) -> Result<Vec<f64>> {
    if f0_log.len() != voiced.len() {
        return Err(Error::Contract("contour and mask lengths differ".into()));
    }
    let dist = distance_to_voiced(voiced)?;
    Ok(f0_log
        .iter()
        .zip(voiced)
        .zip(&dist)
        .map(|((&v, &is_v), &d)| if is_v { v } else { -(d as f64).ln() })
        .collect())
}

/// Interpolates unvoiced gaps linearly; leading/trailing gaps hold the
/// nearest voiced value.
pub fn linear_interp_fill(f0_log: &[f64], voiced: &[bool]) -> Result<Vec<f64>> {
    if f0_log.len() != voiced.len() {
        return Err(Error::Contract("contour and mask lengths differ".into()));
    }
    let idx: Vec<usize> = (0..voiced.len()).filter(|&i| voiced[i]).collect();
    if idx.is_empty() {
        return Err(Error::Degenerate("no voiced frames".into()));
    }
    let mut out = f0_log.to_vec();
    for (i, slot) in out.iter_mut().enumerate() {
        if voiced[i] {
            continue;
        }
        let right = idx.partition_point(|&v| v < i);
        *slot = match (right.checked_sub(1).map(|l| idx[l]), idx.get(right)) {
            (Some(l), Some(&r)) => {
                let a = (i - l) as f64 / (r - l) as f64;
                f0_log[l] * (1.0 - a) + f0_log[r] * a
            }
            (Some(l), None) => f0_log[l],
            (None, Some(&r)) => f0_log[r],
            (None, None) => unreachable!(),
        };
    }
    Ok(out)
}

/// Scaled F0 model channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledF0 {
    /// Voiced: `ln f0 / divisor`; unvoiced: filler value (unscaled).
    pub main: Vec<f64>,
    /// Centered difference of the filled natural-log contour.
    pub diff: Vec<f64>,
    /// The filled natural-log contour the diff was taken on.
    pub filled_log: Vec<f64>,
}

/// Natural-log contour, zero on unvoiced frames.
pub fn log_f0(track: &SequenceTrack) -> Result<Vec<f64>> {
    track
        .f0_hz
        .iter()
        .zip(&track.voiced)
        .enumerate()
        .map(|(i, (&f, &v))| {
            if !v {
                Ok(0.0)
            } else if f > 0.0 {
                Ok(f.ln())
            } else {
                Err(Error::Data(format!("voiced frame {i} has f0 {f}")))
            }
        })
        .collect()
}

pub fn scale_f0(track: &SequenceTrack, cfg: &PreprocConfig) -> Result<ScaledF0> {
    let ln = log_f0(track)?;
    let filled = match cfg.filler {
        Filler::DistanceTransform => distance_fill(&ln, &track.voiced)?,
        Filler::LinearInterp => linear_interp_fill(&ln, &track.voiced)?,
        Filler::UnvoicedBias | Filler::None => ln,
    };
    let diff = centered_diff(&filled, cfg.diff_scale)?;
    let main = filled
        .iter()
        .zip(&track.voiced)
        .map(|(&v, &is_v)| {
            if is_v || cfg.filler == Filler::LinearInterp {
                v / cfg.f0_divisor
            } else {
                v
            }
        })
        .collect();
    Ok(ScaledF0 {
        main,
        diff,
        filled_log: filled,
    })
}

/// Inverse of the voiced scaling: `exp(divisor · v)` Hz.
pub fn descale_f0(value: f64, divisor: f64) -> f64 {
    (divisor * value).exp()
}

/// Energy unchanged plus its centered difference times the gain.
pub fn scale_energy(track: &SequenceTrack, cfg: &PreprocConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(i) = track.energy.iter().position(|e| *e < 0.0 || !e.is_finite()) {
        return Err(Error::Data(format!(
            "energy at frame {i} is negative or non-finite: {}",
            track.energy[i]
        )));
    }
    let diff = centered_diff(&track.energy, cfg.diff_scale)?
        .into_iter()
        .map(|d| d * cfg.energy_diff_gain)
        .collect();
    Ok((track.energy.clone(), diff))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_difference() {
        let d = centered_diff(&[0.0, 1.0, 2.0, 3.0], 2.0).unwrap();
        assert_eq!(d, vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(centered_diff(&[4.0; 5], 2.0).unwrap(), vec![0.0; 5]);
        assert!(centered_diff(&[1.0], 2.0).is_err());
    }

    #[test]
    fn sparse_columns_reproduce_the_difference() {
        let x = [0.3, -1.0, 2.5, 4.0, 0.0, 1.5];
        for len in 2..=x.len() {
            let dense = centered_diff(&x[..len], 1.7).unwrap();
            let mut sparse = vec![0.0; len];
            for (src, xv) in x[..len].iter().enumerate() {
                for (u, c) in centered_diff_column(len, 1.7, src) {
                    sparse[u] += c * xv;
                }
            }
            for (a, b) in dense.iter().zip(&sparse) {
                assert!((a - b).abs() < 1e-12, "len {len}");
            }
        }
    }

    #[test]
    fn distance_fill_example() {
        let v = [true, false, false, false, true];
        let out = distance_fill(&[1.5, 0.0, 0.0, 0.0, 2.5], &v).unwrap();
        assert_eq!(out[0], 1.5);
        assert_eq!(out[1], 0.0);
        assert!((out[2] + 2f64.ln()).abs() < 1e-15);
        assert_eq!(out[3], 0.0);
        assert_eq!(out[4], 2.5);
        assert!(matches!(
            distance_fill(&[0.0, 0.0], &[false, false]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn interp_fill_examples() {
        let out = linear_interp_fill(&[2.0, 0.0, 4.0], &[true, false, true]).unwrap();
        assert_eq!(out, vec![2.0, 3.0, 4.0]);
        let out = linear_interp_fill(&[0.0, 5.0, 0.0], &[false, true, false]).unwrap();
        assert_eq!(out, vec![5.0, 5.0, 5.0]);
        let all = [1.0, 2.0];
        assert_eq!(linear_interp_fill(&all, &[true, true]).unwrap(), all.to_vec());
    }

    #[test]
    fn scale_f0_examples() {
        let t = SequenceTrack::from_f0(vec![220.0, 0.0, 220.0], vec![1.0; 3], 80.0).unwrap();
        let s = scale_f0(&t, &PreprocConfig::default()).unwrap();
        assert!((s.main[0] - 220f64.ln() / 6.0).abs() < 1e-15);
        assert!((s.main[0] - 0.898_938).abs() < 1e-6);
        assert_eq!(s.main[1], 0.0);
        assert!((descale_f0(s.main[2], 6.0) - 220.0).abs() < 1e-9);
    }

    #[test]
    fn energy_scaling() {
        let flat = SequenceTrack::from_f0(vec![0.0; 4], vec![2.0; 4], 80.0).unwrap();
        let (e, d) = scale_energy(&flat, &PreprocConfig::default()).unwrap();
        assert_eq!(e, vec![2.0; 4]);
        assert_eq!(d, vec![0.0; 4]);
        let ramp = SequenceTrack::from_f0(vec![0.0; 4], vec![0.0, 0.5, 1.0, 1.5], 80.0).unwrap();
        let (_, d) = scale_energy(&ramp, &PreprocConfig::default()).unwrap();
        for v in d {
            assert!((v - 5.0).abs() < 1e-12);
        }
        let neg = SequenceTrack::from_f0(vec![0.0; 2], vec![1.0, -0.1], 80.0).unwrap();
        assert!(matches!(
            scale_energy(&neg, &PreprocConfig::default()),
            Err(Error::Data(_))
        ));
    }
}
