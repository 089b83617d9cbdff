//! Per-dimension 8-bit scalar quantization with density-adaptive percentile
//! ranges, plus the adapted graph construction parameters.

use crate::dataset::{Dataset, QuantizedSet};
use crate::density::DensityProfile;
use crate::{Error, Result};

pub const DEFAULT_P_MAX: f64 = 5.0;
/// Ranges narrower than this are treated as constant dimensions.
pub const RANGE_FLOOR: f64 = 1e-9;
pub const CODE_MAX: f64 = 255.0;

/// Trained quantizer state.
///
/// `enc_scales`, `recon_min` and `recon_step` are derived from the trained
/// fields and are rebuilt by [`QuantizationParams::from_parts`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationParams {
    pub d: usize,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub scales: Vec<f64>,
    pub s_dist: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub p_max: f64,
    pub epsilon: f64,
    enc_scales: Vec<f64>,
    recon_min: Vec<f32>,
    recon_step: Vec<f32>,
}

/// Percentile bounds on the `[0, 100]` scale for a heterogeneity `delta`.
pub fn percentile_bounds(delta: f64, p_max: f64) -> (f64, f64) {
    (delta * p_max, 100.0 - delta * p_max)
}

/// Linear-interpolation percentile of an unsorted column. Reorders `values`.
pub fn percentile(values: &mut [f64], p: f64) -> f64 {
    let n = values.len();
    assert!(n > 0, "percentile of an empty column");
    let h = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, &mut lo_val, right) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || right.is_empty() {
        return lo_val;
    }
    let hi_val = right.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

/// `sqrt(sum (max_j - min_j)^2 w_j / sum 255^2 w_j)`.
pub fn distance_scale(mins: &[f64], maxs: &[f64], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&lo, &hi), &w) in mins.iter().zip(maxs).zip(weights) {
        let r = hi - lo;
        num += r * r * w;
        den += CODE_MAX * CODE_MAX * w;
    }
    (num / den).sqrt()
}

impl QuantizationParams {
    /// Assembles params from their stored fields, validating shapes.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        mins: Vec<f64>,
        maxs: Vec<f64>,
        scales: Vec<f64>,
        s_dist: f64,
        p_low: f64,
        p_high: f64,
        p_max: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let d = mins.len();
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if maxs.len() != d || scales.len() != d {
            return Err(Error::LengthMismatch {
                left: d,
                right: maxs.len().min(scales.len()),
            });
        }
        let finite = mins.iter().chain(&maxs).chain(&scales).all(|v| v.is_finite());
        if !finite || mins.iter().zip(&maxs).any(|(lo, hi)| hi < lo) {
            return Err(Error::InvalidConfig("quantizer ranges must be finite with max >= min".into()));
        }
        if scales.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("quantizer scales must be positive".into()));
        }
        let enc_scales: Vec<f64> = mins
            .iter()
            .zip(&maxs)
            .zip(&scales)
            .map(|((lo, hi), &s)| if hi - lo < RANGE_FLOOR { 0.0 } else { s })
            .collect();
        let recon_min = mins.iter().map(|&m| m as f32).collect();
        let recon_step = scales.iter().map(|&s| (1.0 / s) as f32).collect();
        Ok(Self {
            d,
            mins,
            maxs,
            scales,
            s_dist,
            p_low,
            p_high,
            p_max,
            epsilon,
            enc_scales,
            recon_min,
            recon_step,
        })
    }

    /// Trains ranges at the given percentile bounds.
    pub fn train_with_bounds(
        dataset: &Dataset,
        p_low: f64,
        p_high: f64,
        weights: &[f64],
        p_max: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(0.0..=100.0).contains(&p_low) || !(p_low..=100.0).contains(&p_high) {
            return Err(Error::InvalidConfig(format!(
                "percentile bounds must satisfy 0 <= p_low <= p_high <= 100, got ({p_low}, {p_high})"
            )));
        }
        let d = dataset.dim();
        if weights.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: weights.len(),
            });
        }
        let n = dataset.len();
        let mut mins = Vec::with_capacity(d);
        let mut maxs = Vec::with_capacity(d);
        let mut column = vec![0.0f64; n];
        for j in 0..d {
            for (c, row) in column.iter_mut().zip(dataset.rows()) {
                *c = row[j] as f64;
            }
            let (lo, hi) = if p_low == 0.0 && p_high == 100.0 {
                column
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
            } else {
                let lo = percentile(&mut column, p_low);
                let hi = percentile(&mut column, p_high);
                (lo, hi.max(lo))
            };
            mins.push(lo);
            maxs.push(hi);
        }
        let scales = mins
            .iter()
            .zip(&maxs)
            .map(|(lo, hi)| {
                let r = hi - lo;
                if r < RANGE_FLOOR {
                    1.0
                } else {
                    CODE_MAX / (r + epsilon)
                }
            })
            .collect();
        let s_dist = distance_scale(&mins, &maxs, weights);
        Self::from_parts(mins, maxs, scales, s_dist, p_low, p_high, p_max, epsilon)
    }

    /// Density-adaptive training: percentile bounds from `profile.delta`,
    /// distance scale weighted by `profile.weights`.
    pub fn train(dataset: &Dataset, profile: &DensityProfile, p_max: f64) -> Result<Self> {
        if !(p_max > 0.0 && p_max < 50.0) {
            return Err(Error::InvalidConfig(format!("p_max must lie in (0, 50), got {p_max}")));
        }
        let (p_low, p_high) = percentile_bounds(profile.delta, p_max);
        Self::train_with_bounds(dataset, p_low, p_high, &profile.weights, p_max, profile.epsilon)
    }

    /// Plain min/max scalar quantization with uniform weights.
    pub fn train_full_range(dataset: &Dataset, epsilon: f64) -> Result<Self> {
        let w = vec![1.0; dataset.dim()];
        Self::train_with_bounds(dataset, 0.0, 100.0, &w, DEFAULT_P_MAX, epsilon)
    }

    pub fn is_degenerate(&self, j: usize) -> bool {
        self.enc_scales[j] == 0.0
    }

    /// Scale used by the encoder: `scales[j]`, or 0 for constant dimensions.
    pub fn encode_scales(&self) -> &[f64] {
        &self.enc_scales
    }

    /// Scalar reference encoder: shift, scale, clamp to `[0, 255]`, round
    /// half away from zero.
    pub fn encode_into(&self, x: &[f32], out: &mut [u8]) {
        assert_eq!(x.len(), self.d);
        assert_eq!(out.len(), self.d);
        for (((o, &v), &lo), &s) in out.iter_mut().zip(x).zip(&self.mins).zip(&self.enc_scales) {
            let t = (v as f64 - lo) * s;
            *o = t.clamp(0.0, CODE_MAX).round() as u8;
        }
    }

    pub fn encode(&self, x: &[f32]) -> Result<Vec<u8>> {
        self.check_dim(x.len())?;
        let mut out = vec![0u8; self.d];
        self.encode_into(x, &mut out);
        Ok(out)
    }

    /// `q_j / scale_j + min_j`, in `f64`.
    pub fn decode(&self, q: &[u8]) -> Result<Vec<f64>> {
        self.check_dim(q.len())?;
        Ok(q
            .iter()
            .zip(&self.scales)
            .zip(&self.mins)
            .map(|((&c, &s), &lo)| c as f64 / s + lo)
            .collect())
    }

    /// Single-precision reconstruction used by the search path.
    #[inline]
    pub fn decode_into_f32(&self, q: &[u8], out: &mut [f32]) {
        for (((o, &c), &step), &lo) in out.iter_mut().zip(q).zip(&self.recon_step).zip(&self.recon_min) {
            *o = c as f32 * step + lo;
        }
    }

    /// Encodes every row with the scalar reference path.
    pub fn encode_dataset(&self, dataset: &Dataset) -> Result<QuantizedSet> {
        self.check_dim(dataset.dim())?;
        let mut codes = vec![0u8; dataset.len() * self.d];
        for (row, out) in dataset.rows().zip(codes.chunks_exact_mut(self.d)) {
            self.encode_into(row, out);
        }
        QuantizedSet::new(self.d, codes)
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                found,
            });
        }
        Ok(())
    }
}

/// Base and adapted HNSW construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphParams {
    pub m: usize,
    pub ef_construction: usize,
    pub m0: usize,
    pub ef0: usize,
}

impl GraphParams {
    /// Unadapted parameters.
    pub fn base(m0: usize, ef0: usize) -> Self {
        Self {
            m: m0,
            ef_construction: ef0,
            m0,
            ef0,
        }
    }

    pub fn adapted(m0: usize, ef0: usize, delta: f64, eta: f64) -> Self {
        let m = adapt_connectivity(m0, delta, eta);
        Self {
            m,
            ef_construction: adapt_ef_construction(ef0, delta, eta, m),
            m0,
            ef0,
        }
    }
}

/// `floor(m0 * (1 + delta * (1 + eta)))`.
pub fn adapt_connectivity(m0: usize, delta: f64, eta: f64) -> usize {
    let m = (m0 as f64 * (1.0 + delta * (1.0 + eta))).floor() as usize;
    m.max(m0)
}

/// `round(ef0 / (1 + delta * eta))`, floored at `max(16, m)` but never
/// raised above `ef0`.
pub fn adapt_ef_construction(ef0: usize, delta: f64, eta: f64, m: usize) -> usize {
    let ef = (ef0 as f64 / (1.0 + delta * eta)).round() as usize;
    let floor = ef0.min(m.max(16));
    ef.max(floor).min(ef0)
}
