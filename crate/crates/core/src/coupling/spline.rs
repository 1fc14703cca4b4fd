//! Monotone piecewise-quadratic spline on `[-B, B]`, identity outside.
//!
//! The map is the integral of a positive piecewise-linear density whose
//! vertex values and bin widths come from unconstrained raw parameters:
//!
//! * widths: `W = 2B (ε + (1 − Kε) softmax(raw_w))`
//! * vertices: `u = softplus(raw_h) + δ`, rescaled so the density
//!   integrates to `2B` over the interval. The endpoints are therefore
//!   fixed, and equal raw values give the identity map.

use crate::dcore::{softplus, sigmoid, CustomOp, Tensor};
use crate::error::{Error, Result};

/// Floor on each bin's share of the interval.
pub const MIN_BIN_FRACTION: f64 = 1e-3;
/// Added to every softplus vertex value.
pub const MIN_VERTEX: f64 = 1e-3;
/// Normalized bins narrower than this are rejected.
pub const DEGENERATE_WIDTH: f64 = 1e-6;

/// Raw parameter count per transformed element for `bins` bins.
pub fn raw_params_per_dim(bins: usize) -> usize {
    2 * bins + 1
}

/// Normalized knots of one spline.
#[derive(Debug, Clone)]
pub struct Bins {
    pub bound: f64,
    /// Softmax of the raw widths.
    probs: Vec<f64>,
    /// Positive vertex values before rescaling.
    unnorm: Vec<f64>,
    area: f64,
    pub widths: Vec<f64>,
    /// Density at each of the `K + 1` knots.
    pub heights: Vec<f64>,
    pub knots_x: Vec<f64>,
    pub knots_y: Vec<f64>,
}

impl Bins {
    pub fn new(raw_widths: &[f64], raw_heights: &[f64], bound: f64) -> Result<Self> {
        let k = raw_widths.len();
        if k == 0 || raw_heights.len() != k + 1 {
            return Err(Error::Parameterization(format!(
                "{} raw widths need {} raw heights, got {}",
                k,
                k + 1,
                raw_heights.len()
            )));
        }
        if !(bound > 0.0) {
            return Err(Error::Parameterization(format!("bound must be positive, got {bound}")));
        }
        let span = 2.0 * bound;
        let max = raw_widths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = raw_widths.iter().map(|w| (w - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let scale = 1.0 - k as f64 * MIN_BIN_FRACTION;
        let widths: Vec<f64> = probs
            .iter()
            .map(|p| span * (MIN_BIN_FRACTION + scale * p))
            .collect();
        if let Some(w) = widths.iter().find(|&&w| w < DEGENERATE_WIDTH) {
            return Err(Error::Parameterization(format!("degenerate bin width {w:e}")));
        }
        let unnorm: Vec<f64> = raw_heights.iter().map(|h| softplus(*h) + MIN_VERTEX).collect();
        let area: f64 = (0..k)
            .map(|j| 0.5 * (unnorm[j] + unnorm[j + 1]) * widths[j])
            .sum();
        let heights: Vec<f64> = unnorm.iter().map(|u| u * span / area).collect();

        let mut knots_x = Vec::with_capacity(k + 1);
        let mut knots_y = Vec::with_capacity(k + 1);
        knots_x.push(-bound);
        knots_y.push(-bound);
        for j in 0..k {
            knots_x.push(knots_x[j] + widths[j]);
            knots_y.push(knots_y[j] + 0.5 * (heights[j] + heights[j + 1]) * widths[j]);
        }
        knots_x[k] = bound;
        knots_y[k] = bound;
        Ok(Bins {
            bound,
            probs,
            unnorm,
            area,
            widths,
            heights,
            knots_x,
            knots_y,
        })
    }

    pub fn bins(&self) -> usize {
        self.widths.len()
    }

    fn locate(knots: &[f64], v: f64) -> usize {
        // knots[j] <= v < knots[j+1], clamped to the last bin at v == B
        let k = knots.len() - 1;
        let idx = knots.partition_point(|&kv| kv <= v);
        idx.saturating_sub(1).min(k - 1)
    }

    fn in_bound(&self, v: f64) -> bool {
        v >= -self.bound && v <= self.bound
    }

    /// Returns `(y, ln dy/dx, bin)`; `bin` is `None` outside the bound.
    pub fn forward(&self, x: f64) -> (f64, f64, Option<usize>) {
        if !self.in_bound(x) {
            return (x, 0.0, None);
        }
        let j = Self::locate(&self.knots_x, x);
        let (w, v0, v1) = (self.widths[j], self.heights[j], self.heights[j + 1]);
        let e = x - self.knots_x[j];
        let y = self.knots_y[j] + v0 * e + (v1 - v0) * e * e / (2.0 * w);
        let dens = v0 + (v1 - v0) * e / w;
        (y, dens.ln(), Some(j))
    }

    /// Inverse map; solves the bin-local quadratic with the cancellation-free root.
    pub fn inverse(&self, y: f64) -> f64 {
        if !self.in_bound(y) {
            return y;
        }
        let j = Self::locate(&self.knots_y, y);
        let (w, v0, v1) = (self.widths[j], self.heights[j], self.heights[j + 1]);
        let a = (v1 - v0) / (2.0 * w);
        let r = y - self.knots_y[j];
        let disc = (v0 * v0 + 4.0 * a * r).max(0.0);
        let e = 2.0 * r / (v0 + disc.sqrt());
        (self.knots_x[j] + e.clamp(0.0, w)).min(self.bound)
    }

    /// Vector-Jacobian product of `(y, ln dy/dx)` at `x`.
    ///
    /// Returns `(d/dx, d/draw_widths, d/draw_heights)` given upstream
    /// gradients `gy`, `gl`.
    pub fn backward(
        &self,
        x: f64,
        raw_heights: &[f64],
        gy: f64,
        gl: f64,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let k = self.bins();
        let mut g_raw_w = vec![0.0; k];
        let mut g_raw_h = vec![0.0; k + 1];
        if !self.in_bound(x) {
            return (gy, g_raw_w, g_raw_h);
        }
        let j = Self::locate(&self.knots_x, x);
        let w = self.widths[j];
        let (v0, v1) = (self.heights[j], self.heights[j + 1]);
        let e = x - self.knots_x[j];
        let dv = v1 - v0;
        let dens = v0 + dv * e / w;

        let gx = gy * dens + gl * dv / (w * dens);

        let mut g_w = vec![0.0; k];
        let mut g_v = vec![0.0; k + 1];
        for i in 0..j {
            // W_i shifts knot j and adds its own trapezoid to y_j
            g_w[i] += gy * (0.5 * (self.heights[i] + self.heights[i + 1]) - dens);
            g_w[i] += gl * (-dv / (w * dens));
            g_v[i] += gy * 0.5 * self.widths[i];
            g_v[i + 1] += gy * 0.5 * self.widths[i];
        }
        g_w[j] += gy * (-dv * e * e / (2.0 * w * w)) + gl * (-dv * e / (w * w * dens));
        g_v[j] += gy * (e - e * e / (2.0 * w)) + gl * (1.0 - e / w) / dens;
        g_v[j + 1] += gy * (e * e / (2.0 * w)) + gl * (e / w) / dens;

        // heights V = span * u / A,  A = Σ W_i (u_i + u_{i+1}) / 2
        let span = 2.0 * self.bound;
        let mut g_u = vec![0.0; k + 1];
        let mut g_area = 0.0;
        for i in 0..=k {
            g_u[i] += g_v[i] * span / self.area;
            g_area -= g_v[i] * self.heights[i] / self.area;
        }
        for i in 0..k {
            g_w[i] += g_area * 0.5 * (self.unnorm[i] + self.unnorm[i + 1]);
            g_u[i] += g_area * 0.5 * self.widths[i];
            g_u[i + 1] += g_area * 0.5 * self.widths[i];
        }
        for i in 0..=k {
            g_raw_h[i] = g_u[i] * sigmoid(raw_heights[i]);
        }
        // W = span (ε + (1 − Kε) p), p = softmax(raw_w)
        let scale = span * (1.0 - k as f64 * MIN_BIN_FRACTION);
        let g_p: Vec<f64> = g_w.iter().map(|g| g * scale).collect();
        let dot: f64 = g_p.iter().zip(&self.probs).map(|(g, p)| g * p).sum();
        for i in 0..k {
            g_raw_w[i] = self.probs[i] * (g_p[i] - dot);
        }
        (gx, g_raw_w, g_raw_h)
    }
}

/// Spline parameters for a set of elements, in raw (unconstrained) form.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineParams {
    pub bound: f64,
    pub bins: usize,
    /// `[n × K]`
    pub raw_widths: Vec<f64>,
    /// `[n × (K + 1)]`
    pub raw_heights: Vec<f64>,
}

impl SplineParams {
    pub fn new(bound: f64, bins: usize, raw_widths: Vec<f64>, raw_heights: Vec<f64>) -> Result<Self> {
        if bins == 0 || raw_widths.len() % bins != 0 {
            return Err(Error::Parameterization(format!(
                "{} raw widths do not split into {} bins",
                raw_widths.len(),
                bins
            )));
        }
        let n = raw_widths.len() / bins;
        if raw_heights.len() != n * (bins + 1) {
            return Err(Error::Parameterization(format!(
                "expected {} raw heights, got {}",
                n * (bins + 1),
                raw_heights.len()
            )));
        }
        let p = SplineParams {
            bound,
            bins,
            raw_widths,
            raw_heights,
        };
        for i in 0..n {
            p.element(i)?;
        }
        Ok(p)
    }

    /// Equal raw values everywhere: the identity map on `[-B, B]`.
    pub fn uniform(bound: f64, bins: usize, elements: usize) -> Result<Self> {
        Self::new(
            bound,
            bins,
            vec![0.0; elements * bins],
            vec![0.0; elements * (bins + 1)],
        )
    }

    pub fn elements(&self) -> usize {
        self.raw_widths.len() / self.bins
    }

    pub fn element(&self, i: usize) -> Result<Bins> {
        let k = self.bins;
        Bins::new(
            &self.raw_widths[i * k..(i + 1) * k],
            &self.raw_heights[i * (k + 1)..(i + 1) * (k + 1)],
            self.bound,
        )
    }

    fn element_index(&self, x: &Tensor, flat: usize) -> Result<usize> {
        let n = self.elements();
        if n == x.numel() {
            Ok(flat)
        } else if n == x.cols() {
            Ok(flat % n)
        } else {
            Err(Error::dim(
                "spline",
                format!("{} parameter sets for input of shape {:?}", n, x.shape()),
            ))
        }
    }

    /// Elementwise spline; parameters are per element or per column.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, f64)> {
        let bins = (0..self.elements())
            .map(|i| self.element(i))
            .collect::<Result<Vec<_>>>()?;
        let mut y = x.clone();
        let mut logdet = 0.0;
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            let b = &bins[self.element_index(x, i)?];
            let (out, ld, _) = b.forward(*v);
            *v = out;
            logdet += ld;
        }
        Ok((y, logdet))
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        if !y.is_finite() {
            return Err(Error::Numeric {
                op: "spline_inverse".into(),
            });
        }
        let bins = (0..self.elements())
            .map(|i| self.element(i))
            .collect::<Result<Vec<_>>>()?;
        let mut x = y.clone();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = bins[self.element_index(y, i)?].inverse(*v);
        }
        Ok(x)
    }
}

/// Tape operation: inputs `x: [R×D]` and raw parameters `[R × D(2K+1)]`
/// laid out per channel as `K` widths then `K + 1` heights. The output is
/// `[R × 2D]`: transformed values followed by per-element log-densities.
#[derive(Debug, Clone, Copy)]
pub struct SplineOp {
    pub bound: f64,
    pub bins: usize,
}

impl SplineOp {
    fn check(&self, x: &Tensor, p: &Tensor) -> Result<(usize, usize)> {
        let (r, d) = (x.rows(), x.cols());
        let per = raw_params_per_dim(self.bins);
        if p.rows() != r || p.cols() != d * per {
            return Err(Error::dim(
                "spline",
                format!("x {:?} needs params [{r}×{}], got {:?}", x.shape(), d * per, p.shape()),
            ));
        }
        Ok((r, d))
    }

    fn bins_at(&self, p: &Tensor, r: usize, c: usize) -> Result<Bins> {
        let per = raw_params_per_dim(self.bins);
        let row = p.row_slice(r);
        let chunk = &row[c * per..(c + 1) * per];
        Bins::new(&chunk[..self.bins], &chunk[self.bins..], self.bound)
    }
}

impl CustomOp for SplineOp {
    fn name(&self) -> &'static str {
        "spline"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (x, p) = (inputs[0], inputs[1]);
        let (r, d) = self.check(x, p)?;
        let mut out = vec![0.0; r * 2 * d];
        for i in 0..r {
            for c in 0..d {
                let b = self.bins_at(p, i, c)?;
                let (y, ld, _) = b.forward(x.get(i, c));
                out[i * 2 * d + c] = y;
                out[i * 2 * d + d + c] = ld;
            }
        }
        Tensor::matrix(r, 2 * d, out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>> {
        let (x, p) = (inputs[0], inputs[1]);
        let (r, d) = self.check(x, p)?;
        let per = raw_params_per_dim(self.bins);
        let k = self.bins;
        let mut gx = vec![0.0; r * d];
        let mut gp = vec![0.0; r * d * per];
        for i in 0..r {
            for c in 0..d {
                let b = self.bins_at(p, i, c)?;
                let gy = grad.get(i, c);
                let gl = grad.get(i, d + c);
                let raw_h = &p.row_slice(i)[c * per + k..(c + 1) * per];
                let (dx, dw, dh) = b.backward(x.get(i, c), raw_h, gy, gl);
                gx[i * d + c] = dx;
                let base = i * d * per + c * per;
                gp[base..base + k].copy_from_slice(&dw);
                gp[base + k..base + per].copy_from_slice(&dh);
            }
        }
        Ok(vec![
            Some(Tensor::matrix(r, d, gx)?),
            Some(Tensor::matrix(r, d * per, gp)?),
        ])
    }

    fn branch_signature(&self, inputs: &[&Tensor]) -> u64 {
        let (x, p) = (inputs[0], inputs[1]);
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for i in 0..x.rows() {
            for c in 0..x.cols() {
                let tag = match self.bins_at(p, i, c) {
                    Ok(b) => b.forward(x.get(i, c)).2.map_or(0, |j| j as u64 + 1),
                    Err(_) => u64::MAX,
                };
                h = (h ^ tag).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}

/// Inverse of [`SplineOp`]'s value map for the same parameter layout.
pub fn spline_inverse_rows(op: SplineOp, y: &Tensor, p: &Tensor) -> Result<Tensor> {
    let (r, d) = op.check(y, p)?;
    if !y.is_finite() {
        return Err(Error::Numeric {
            op: "spline_inverse".into(),
        });
    }
    let mut out = y.clone();
    for i in 0..r {
        for c in 0..d {
            out.data_mut()[i * d + c] = op.bins_at(p, i, c)?.inverse(y.get(i, c));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_parameters_give_identity() {
        let p = SplineParams::uniform(3.0, 24, 1).unwrap();
        for &x in &[-3.0, -2.2, -0.1, 0.0, 1.7, 2.999, 3.0] {
            let (y, ld) = p.forward(&Tensor::scalar(x)).unwrap();
            assert!((y.data()[0] - x).abs() < 1e-12, "{x}");
            assert!(ld.abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bound_passes_through() {
        let p = SplineParams::new(
            3.0,
            4,
            vec![0.3, -1.0, 2.0, 0.1],
            vec![1.0, -2.0, 0.5, 0.0, 3.0],
        )
        .unwrap();
        let (y, ld) = p.forward(&Tensor::scalar(5.0)).unwrap();
        assert_eq!(y.data()[0], 5.0);
        assert_eq!(ld, 0.0);
        assert_eq!(p.inverse(&Tensor::scalar(-7.5)).unwrap().data()[0], -7.5);
    }

    #[test]
    fn endpoints_are_fixed() {
        let b = Bins::new(&[0.5, -0.3, 1.2], &[2.0, -1.0, 0.0, 0.7], 6.0).unwrap();
        assert_eq!(b.forward(-6.0).0, -6.0);
        assert!((b.forward(6.0).0 - 6.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_is_continuous() {
        let b = Bins::new(&[0.5, -0.3, 1.2], &[2.0, -1.0, 0.0, 0.7], 3.0).unwrap();
        for eps in [1e-3, 1e-6, 1e-9] {
            let inside = b.forward(3.0 - eps).0;
            let outside = b.forward(3.0 + eps).0;
            assert!((inside - outside).abs() < 10.0 * eps);
        }
    }

    #[test]
    fn mismatched_parameter_counts_are_rejected() {
        assert!(SplineParams::new(3.0, 4, vec![0.0; 4], vec![0.0; 4]).is_err());
        assert!(SplineParams::new(0.0, 4, vec![0.0; 4], vec![0.0; 5]).is_err());
    }
}
