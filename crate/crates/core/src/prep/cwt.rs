//! 12-channel wavelet representation of a log-F0 contour.
//!
//! Encoding: interpolate unvoiced gaps, standardize, take a Mexican-hat
//! continuous wavelet transform at 10 dyadic scales, then append the
//! pre-standardization mean and variance as constant channels. Decoding
//! sums the scale channels with fixed reconstruction weights and undoes
//! the standardization. The round trip is lossy.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::features::linear_interp_fill;
use crate::dcore::Tensor;
use crate::error::{Error, Result};

pub const CWT_SCALES: usize = 10;
pub const CWT_CHANNELS: usize = CWT_SCALES + 2;
/// Smallest scale in frames; scale `j` is `2^j` times this.
pub const BASE_SCALE: f64 = 1.0;

struct Bank {
    /// Symmetric kernels stored from lag 0 outwards.
    kernels: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn mexican_hat(u: f64) -> f64 {
    let norm = 2.0 / (3f64.sqrt() * std::f64::consts::PI.powf(0.25));
    norm * (1.0 - u * u) * (-0.5 * u * u).exp()
}

fn bank() -> &'static Bank {
    static BANK: OnceLock<Bank> = OnceLock::new();
    BANK.get_or_init(|| {
        let kernels: Vec<Vec<f64>> = (0..CWT_SCALES)
            .map(|j| {
                let s = BASE_SCALE * 2f64.powi(j as i32);
                let half = (6.0 * s).ceil() as usize;
                (0..=half).map(|n| mexican_hat(n as f64 / s) / s.sqrt()).collect()
            })
            .collect();
        let weights = reconstruction_weights(&kernels);
        Bank { kernels, weights }
    })
}

fn kernel_response(k: &[f64], omega: f64) -> f64 {
    k[0] + 2.0 * k[1..]
        .iter()
        .enumerate()
        .map(|(n, v)| v * (omega * (n + 1) as f64).cos())
        .sum::<f64>()
}

/// Least-squares weights making `Σ c_j K̂_j(ω) ≈ 1` over the frequencies
/// the scales cover.
fn reconstruction_weights(kernels: &[Vec<f64>]) -> Vec<f64> {
    let lo = (2.0 * std::f64::consts::PI / 1024.0).ln();
    let hi = (0.5 * std::f64::consts::PI).ln();
    let m = 400;
    let n = kernels.len();
    let a = DMatrix::from_fn(m, n, |i, j| {
        let w = (lo + (hi - lo) * i as f64 / (m - 1) as f64).exp();
        kernel_response(&kernels[j], w)
    });
    let b = DVector::from_element(m, 1.0);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    let sol = ata
        .lu()
        .solve(&atb)
        .expect("reconstruction system is well conditioned");
    sol.iter().copied().collect()
}

fn convolve(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let t = x.len() as isize;
    (0..t)
        .map(|i| {
            let mut acc = kernel[0] * x[i as usize];
            for (n, k) in kernel.iter().enumerate().skip(1) {
                let n = n as isize;
                if i - n >= 0 {
                    acc += k * x[(i - n) as usize];
                }
                if i + n < t {
                    acc += k * x[(i + n) as usize];
                }
            }
            acc
        })
        .collect()
}

/// `[T × 12]`: 10 wavelet channels, then mean and variance replicated in time.
pub fn cwt_encode(f0_log: &[f64], voiced: &[bool]) -> Result<Tensor> {
    if voiced.iter().filter(|v| **v).count() < 2 {
        return Err(Error::Degenerate("wavelet encoding needs at least 2 voiced frames".into()));
    }
    let filled = linear_interp_fill(f0_log, voiced)?;
    let t = filled.len();
    let mean = filled.iter().sum::<f64>() / t as f64;
    let var = filled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate("contour has zero variance after interpolation".into()));
    }
    let sd = var.sqrt();
    let standardized: Vec<f64> = filled.iter().map(|v| (v - mean) / sd).collect();
    let channels: Vec<Vec<f64>> = bank()
        .kernels
        .iter()
        .map(|k| convolve(&standardized, k))
        .collect();
    let mut data = Vec::with_capacity(t * CWT_CHANNELS);
    for i in 0..t {
        data.extend(channels.iter().map(|c| c[i]));
        data.push(mean);
        data.push(var);
    }
    Tensor::matrix(t, CWT_CHANNELS, data)
}

/// Reconstructs the contour from a `[T × 12]` wavelet representation.
pub fn cwt_decode(m: &Tensor) -> Result<Vec<f64>> {
    if m.cols() != CWT_CHANNELS {
        return Err(Error::Format(format!(
            "wavelet representation needs {CWT_CHANNELS} channels, got {:?}",
            m.shape()
        )));
    }
    let w = &bank().weights;
    (0..m.rows())
        .map(|i| {
            let row = m.row_slice(i);
            let (mean, var) = (row[CWT_SCALES], row[CWT_SCALES + 1]);
            if !(var > 0.0) {
                return Err(Error::Format(format!("non-positive variance {var} at frame {i}")));
            }
            let z: f64 = row[..CWT_SCALES].iter().zip(w).map(|(a, b)| a * b).sum();
            Ok(mean + z * var.sqrt())
        })
        .collect()
}
