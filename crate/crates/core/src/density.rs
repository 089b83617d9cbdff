//! Local density estimation and the heterogeneity measures derived from it.
//!
//! The local density of a point is the reciprocal of its mean squared
//! distance to its `k` nearest neighbors (itself excluded), plus a small
//! stability constant. From the densities we derive a global heterogeneity
//! `delta` in `[0, 1)`, per-dimension density weights, and the coefficient
//! of variation of those weights (`eta`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_SAMPLE_THRESHOLD: usize = 10_000;
pub const DEFAULT_SAMPLE_CAP: usize = 5_000;

/// Lower bound applied to per-dimension weights before normalization.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// How per-dimension weights are derived from the densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// Density-weighted variance of each dimension, normalized to mean 1.
    #[default]
    DensityWeightedVariance,
    /// Every weight is the mean density. Makes `eta` identically zero.
    LiteralMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityConfig {
    pub k: usize,
    /// Sampling kicks in when `n` exceeds this.
    pub sample_threshold: usize,
    pub sample_cap: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub weight_mode: WeightMode,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            sample_threshold: DEFAULT_SAMPLE_THRESHOLD,
            sample_cap: DEFAULT_SAMPLE_CAP,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            weight_mode: WeightMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    /// One density per point; unsampled points carry `mean_rho`.
    pub rho: Vec<f64>,
    pub delta: f64,
    pub weights: Vec<f64>,
    pub eta: f64,
    pub sigma_w: f64,
    pub mean_w: f64,
    /// Number of points whose density was computed exactly.
    pub sample_size: usize,
    pub mean_rho: f64,
    pub k_density: usize,
    pub epsilon: f64,
    /// Sorted ids of the exactly computed points when sampling was used.
    pub sampled: Option<Vec<usize>>,
}

/// Squared Euclidean distance accumulated in `f64`.
#[inline]
pub(crate) fn sq_dist_f64(a: &[f32], b: &[f32]) -> f64 {
    sq_dist_f64_body(a, b)
}

/// Same lane-wise arithmetic as [`sq_dist_f64`], compiled for wider
/// registers; results are bit-identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn sq_dist_f64_avx512(a: &[f32], b: &[f32]) -> f64 {
    sq_dist_f64_body(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn sq_dist_f64_avx2(a: &[f32], b: &[f32]) -> f64 {
    sq_dist_f64_body(a, b)
}

type DistF64 = fn(&[f32], &[f32]) -> f64;

fn wide_sq_dist_f64() -> DistF64 {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") {
            // SAFETY: feature checked above.
            return |a, b| unsafe { sq_dist_f64_avx512(a, b) };
        }
        if is_x86_feature_detected!("avx2") {
            // SAFETY: feature checked above.
            return |a, b| unsafe { sq_dist_f64_avx2(a, b) };
        }
    }
    sq_dist_f64
}

#[inline(always)]
fn sq_dist_f64_body(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for l in 0..8 {
            let t = x[l] as f64 - y[l] as f64;
            acc[l] += t * t;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let t = *x as f64 - *y as f64;
        tail += t * t;
    }
    acc.iter().sum::<f64>() + tail
}

/// Mean of the `k` smallest squared distances from row `pos` to the other
/// rows.
fn knn_mean_sq(rows: &Dataset, pos: usize, k: usize, dist: DistF64, buf: &mut Vec<f64>) -> f64 {
    let x = rows.row(pos);
    buf.clear();
    for (j, other) in rows.rows().enumerate() {
        if j != pos {
            buf.push(dist(x, other));
        }
    }
    // The multiset of the k smallest values does not depend on how ties
    // are ordered, so an unstable selection is enough.
    buf.select_nth_unstable_by(k - 1, f64::total_cmp);
    buf[..k].iter().sum::<f64>() / k as f64
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("density k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::InsufficientPoints { n, k });
    }
    Ok(())
}

/// Density of one point against the whole dataset.
pub fn local_density(point: usize, dataset: &Dataset, k: usize, epsilon: f64) -> Result<f64> {
    check_k(dataset.len(), k)?;
    if point >= dataset.len() {
        return Err(Error::InvalidConfig(format!(
            "point {point} out of range for {} points",
            dataset.len()
        )));
    }
    let mut buf = Vec::with_capacity(dataset.len());
    Ok(1.0 / (knn_mean_sq(dataset, point, k, sq_dist_f64, &mut buf) + epsilon))
}

/// `(max - min) / (max + epsilon)` over the densities.
pub fn compute_delta(rho: &[f64], epsilon: f64) -> Result<f64> {
    if rho.is_empty() {
        return Err(Error::Empty("density list"));
    }
    let (lo, hi) = rho
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    Ok((hi - lo) / (hi + epsilon))
}

/// Per-dimension density weights.
pub fn compute_weights(dataset: &Dataset, rho: &[f64], mode: WeightMode) -> Result<Vec<f64>> {
    if rho.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            left: rho.len(),
            right: dataset.len(),
        });
    }
    let d = dataset.dim();
    let total: f64 = rho.iter().sum();
    if mode == WeightMode::LiteralMean {
        return Ok(vec![total / rho.len() as f64; d]);
    }

    let mut mean = vec![0.0f64; d];
    for (row, &r) in dataset.rows().zip(rho) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += r * x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);

    let mut var = vec![0.0f64; d];
    for (row, &r) in dataset.rows().zip(rho) {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(row) {
            let t = x as f64 - m;
            *v += r * t * t;
        }
    }
    var.iter_mut().for_each(|v| *v /= total);

    if var.iter().all(|&v| v == 0.0) {
        return Ok(vec![1.0; d]);
    }
    var.iter_mut().for_each(|v| *v = v.max(WEIGHT_FLOOR));
    let avg = var.iter().sum::<f64>() / d as f64;
    var.iter_mut().for_each(|v| *v /= avg);
    Ok(var)
}

/// Coefficient of variation of the weights, with population standard
/// deviation. Returns `(eta, sigma_w, mean_w)`.
pub fn compute_eta(weights: &[f64]) -> Result<(f64, f64, f64)> {
    if weights.is_empty() {
        return Err(Error::Empty("weight list"));
    }
    let d = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / d;
    if mean <= 0.0 || !mean.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "weights must have a positive mean, got {mean}"
        )));
    }
    let var = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / d;
    let sigma = var.sqrt();
    Ok((sigma / mean, sigma, mean))
}

/// Computes the full density profile of a dataset.
///
/// Datasets larger than `sample_threshold` get exact densities for a
/// uniform sample of `min(sample_cap, n)` points (neighbors searched within
/// the sample); every other point is assigned the sample mean.
pub fn build_profile(dataset: &Dataset, config: &DensityConfig) -> Result<DensityProfile> {
    let n = dataset.len();
    let k = config.k;
    check_k(n, k)?;

    let sampled = if n > config.sample_threshold {
        let n_s = config.sample_cap.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ids = rand::seq::index::sample(&mut rng, n, n_s).into_vec();
        ids.sort_unstable();
        Some(ids)
    } else {
        None
    };
    // sampled rows are gathered into one contiguous block
    let gathered;
    let members = match &sampled {
        Some(ids) => {
            gathered = dataset.select(ids)?;
            &gathered
        }
        None => dataset,
    };
    check_k(members.len(), k)?;

    let dist = wide_sq_dist_f64();
    let mut buf = Vec::with_capacity(members.len());
    let exact: Vec<f64> = (0..members.len())
        .map(|pos| 1.0 / (knn_mean_sq(members, pos, k, dist, &mut buf) + config.epsilon))
        .collect();
    let mean_rho = exact.iter().sum::<f64>() / exact.len() as f64;

    let rho = match &sampled {
        Some(ids) => {
            let mut rho = vec![mean_rho; n];
            for (&i, &r) in ids.iter().zip(&exact) {
                rho[i] = r;
            }
            rho
        }
        None => exact,
    };

    let delta = compute_delta(&rho, config.epsilon)?;
    let weights = compute_weights(dataset, &rho, config.weight_mode)?;
    let (eta, sigma_w, mean_w) = compute_eta(&weights)?;
    Ok(DensityProfile {
        rho,
        delta,
        weights,
        eta,
        sigma_w,
        mean_w,
        sample_size: members.len(),
        mean_rho,
        k_density: k,
        epsilon: config.epsilon,
        sampled,
    })
}
