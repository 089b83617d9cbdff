//! Distance and query-encoding kernels with per-architecture dispatch.
//!
//! Tiers, widest first:
//!
//! | tier              | x86_64           | aarch64 |
//! |-------------------|------------------|---------|
//! | `widest-vector`   | AVX-512 F+BW     | -       |
//! | `wide-vector`     | AVX2 + FMA       | -       |
//! | `baseline-vector` | SSE2             | NEON    |
//! | `scalar`          | portable         | portable|
//!
//! A [`KernelSet`] is resolved once and then called through plain function
//! pointers. The `AQR_FORCE_KERNEL` environment variable can force a lower
//! tier.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::quantizer::QuantizationParams;
use crate::{Error, Result};

#[cfg(target_arch = "aarch64")]
mod aarch64;
pub mod scalar;
#[cfg(target_arch = "x86_64")]
mod x86;

pub const FORCE_KERNEL_ENV: &str = "AQR_FORCE_KERNEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KernelTier {
    Scalar,
    BaselineVector,
    WideVector,
    WidestVector,
}

impl KernelTier {
    pub const ALL: [KernelTier; 4] = [
        KernelTier::Scalar,
        KernelTier::BaselineVector,
        KernelTier::WideVector,
        KernelTier::WidestVector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelTier::Scalar => "scalar",
            KernelTier::BaselineVector => "baseline-vector",
            KernelTier::WideVector => "wide-vector",
            KernelTier::WidestVector => "widest-vector",
        }
    }
}

impl fmt::Display for KernelTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelTier::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown kernel tier {s:?}")))
    }
}

type U8Fn = fn(&[u8], &[u8]) -> u64;
type F32Fn = fn(&[f32], &[f32]) -> f32;
type EncodeFn = fn(&[f32], &[f64], &[f64], &mut [u8]);

/// One resolved set of kernels.
#[derive(Clone, Copy)]
pub struct KernelSet {
    tier: KernelTier,
    sq_u8: U8Fn,
    sq_f32: F32Fn,
    encode: EncodeFn,
}

impl fmt::Debug for KernelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSet").field("tier", &self.tier).finish()
    }
}

impl PartialEq for KernelSet {
    fn eq(&self, other: &Self) -> bool {
        self.tier == other.tier
    }
}

impl KernelSet {
    pub fn scalar() -> Self {
        Self {
            tier: KernelTier::Scalar,
            sq_u8: scalar::sq_l2_u8,
            sq_f32: scalar::sq_l2_f32,
            encode: scalar::encode,
        }
    }

    /// The kernels for `tier`, if the host supports it.
    pub fn for_tier(tier: KernelTier) -> Option<Self> {
        match tier {
            KernelTier::Scalar => Some(Self::scalar()),
            _ => Self::vector_tier(tier),
        }
    }

    #[cfg(target_arch = "x86_64")]
    fn vector_tier(tier: KernelTier) -> Option<Self> {
        match tier {
            KernelTier::WidestVector
                if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("avx512bw") =>
            {
                Some(Self {
                    tier,
                    sq_u8: x86::sq_l2_u8_avx512,
                    sq_f32: x86::sq_l2_f32_avx512,
                    encode: x86::encode_avx512,
                })
            }
            KernelTier::WideVector if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") => {
                Some(Self {
                    tier,
                    sq_u8: x86::sq_l2_u8_avx2,
                    sq_f32: x86::sq_l2_f32_avx2,
                    encode: x86::encode_avx2,
                })
            }
            KernelTier::BaselineVector => Some(Self {
                tier,
                sq_u8: x86::sq_l2_u8_sse2,
                sq_f32: x86::sq_l2_f32_sse2,
                encode: x86::encode_sse2,
            }),
            _ => None,
        }
    }

    #[cfg(target_arch = "aarch64")]
    fn vector_tier(tier: KernelTier) -> Option<Self> {
        match tier {
            KernelTier::BaselineVector => Some(Self {
                tier,
                sq_u8: aarch64::sq_l2_u8_neon,
                sq_f32: aarch64::sq_l2_f32_neon,
                encode: aarch64::encode_neon,
            }),
            _ => None,
        }
    }

    #[cfg(not(any(target_arch = "x86_64", target_arch = "aarch64")))]
    fn vector_tier(_tier: KernelTier) -> Option<Self> {
        None
    }

    /// Every tier the host can run, scalar first.
    pub fn available_tiers() -> Vec<KernelTier> {
        KernelTier::ALL
            .into_iter()
            .filter(|&t| Self::for_tier(t).is_some())
            .collect()
    }

    /// The widest supported tier.
    pub fn detect() -> Self {
        KernelTier::ALL
            .into_iter()
            .rev()
            .find_map(Self::for_tier)
            .unwrap_or_else(Self::scalar)
    }

    /// Resolves an override string (`auto` or a tier name). A tier the host
    /// cannot run falls back to the widest supported one.
    pub fn select_with(force: Option<&str>) -> Result<Self> {
        match force.map(str::trim) {
            None | Some("") | Some("auto") => Ok(Self::detect()),
            Some(name) => {
                let tier: KernelTier = name.parse()?;
                Ok(Self::for_tier(tier).unwrap_or_else(Self::detect))
            }
        }
    }

    /// Detection honoring `AQR_FORCE_KERNEL`. An unparsable value is ignored.
    pub fn select() -> Self {
        let force = std::env::var(FORCE_KERNEL_ENV).ok();
        Self::select_with(force.as_deref()).unwrap_or_else(|_| Self::detect())
    }

    pub fn tier(&self) -> KernelTier {
        self.tier
    }

    /// Exact integer sum of squared code differences.
    #[inline]
    pub fn sq_l2_u8(&self, a: &[u8], b: &[u8]) -> u64 {
        (self.sq_u8)(a, b)
    }

    #[inline]
    pub fn sq_l2_f32(&self, a: &[f32], b: &[f32]) -> f32 {
        (self.sq_f32)(a, b)
    }

    #[inline]
    pub fn encode_into(&self, x: &[f32], params: &QuantizationParams, out: &mut [u8]) {
        (self.encode)(x, &params.mins, params.encode_scales(), out)
    }

    /// `s_dist * sum (q_j - x_j)^2` over codes.
    pub fn dist_quantized(&self, qhat: &[u8], xhat: &[u8], s_dist: f64) -> Result<f64> {
        check_len(qhat.len(), xhat.len())?;
        Ok(s_dist * self.sq_l2_u8(qhat, xhat) as f64)
    }

    /// Full-precision query against a reconstructed vector.
    pub fn dist_asym(&self, q: &[f32], xtilde: &[f32]) -> Result<f32> {
        check_len(q.len(), xtilde.len())?;
        Ok(self.sq_l2_f32(q, xtilde))
    }

    pub fn dist_exact(&self, q: &[f32], x: &[f32]) -> Result<f32> {
        check_len(q.len(), x.len())?;
        Ok(self.sq_l2_f32(q, x))
    }

    /// Vectorized equivalent of [`QuantizationParams::encode`].
    pub fn encode_query(&self, q: &[f32], params: &QuantizationParams) -> Result<Vec<u8>> {
        if q.len() != params.d {
            return Err(Error::DimensionMismatch {
                expected: params.d,
                found: q.len(),
            });
        }
        let mut out = vec![0u8; params.d];
        self.encode_into(q, params, &mut out);
        Ok(out)
    }
}

fn check_len(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

/// Process-wide kernels, resolved on first use.
pub fn active() -> &'static KernelSet {
    static ACTIVE: OnceLock<KernelSet> = OnceLock::new();
    ACTIVE.get_or_init(KernelSet::select)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_sets() -> Vec<KernelSet> {
        KernelSet::available_tiers()
            .into_iter()
            .filter_map(KernelSet::for_tier)
            .collect()
    }

    #[test]
    fn hand_values() {
        for k in all_sets() {
            assert_eq!(k.dist_quantized(&[7, 9], &[7, 9], 0.3).unwrap(), 0.0);
            assert_eq!(k.dist_quantized(&[0, 0], &[3, 4], 1.0).unwrap(), 25.0);
            assert!((k.dist_quantized(&[0, 0], &[3, 4], 0.2).unwrap() - 5.0).abs() < 1e-12);
            assert_eq!(k.dist_asym(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
            assert_eq!(k.dist_asym(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 5.0);
            assert_eq!(k.dist_exact(&[1.0, 2.0, 3.0], &[4.0, 6.0, 3.0]).unwrap(), 25.0);
            assert!(k.dist_exact(&[1.0], &[1.0, 2.0]).is_err());
            assert!(k.dist_quantized(&[1], &[], 1.0).is_err());
        }
    }

    #[test]
    fn integer_kernel_matches_wide_sum_across_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [1, 15, 16, 17, 63, 64, 65, 4095, 4096, 4097, 9000] {
            let a: Vec<u8> = (0..d).map(|_| rng.random()).collect();
            let b: Vec<u8> = (0..d).map(|_| rng.random()).collect();
            let expect: u128 = a.iter().zip(&b).map(|(&x, &y)| (x as i128 - y as i128).pow(2) as u128).sum();
            for k in all_sets() {
                assert_eq!(k.sq_l2_u8(&a, &b) as u128, expect, "tier {} d {d}", k.tier());
            }
        }
        // worst case: every difference 255
        let a = vec![0u8; 9000];
        let b = vec![255u8; 9000];
        for k in all_sets() {
            assert_eq!(k.sq_l2_u8(&a, &b), 9000 * 255 * 255);
        }
    }

    #[test]
    fn forced_scalar_and_parse() {
        assert_eq!(KernelSet::select_with(Some("scalar")).unwrap().tier(), KernelTier::Scalar);
        assert_eq!(KernelSet::select_with(Some("auto")).unwrap(), KernelSet::detect());
        assert!(KernelSet::select_with(Some("bogus")).is_err());
        let best = *KernelSet::available_tiers().last().unwrap();
        assert_eq!(KernelSet::detect().tier(), best);
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn widest_tier_on_avx512_hosts() {
        if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("avx512bw") {
            assert_eq!(KernelSet::detect().tier(), KernelTier::WidestVector);
        }
    }

    #[test]
    fn encoder_matches_scalar_on_boundaries() {
        let mins = vec![-1.0, 0.0, 2.0, 5.0, -3.0, 0.0, 1.0, 1.0, 0.0];
        let maxs = vec![1.0, 10.0, 2.0, 6.0, 3.0, 255.0, 2.0, 1.5, 1.0];
        let scales: Vec<f64> = mins
            .iter()
            .zip(&maxs)
            .map(|(lo, hi): (&f64, &f64)| if hi - lo < 1e-9 { 1.0 } else { 255.0 / (hi - lo + 1e-6) })
            .collect();
        let params =
            QuantizationParams::from_parts(mins.clone(), maxs.clone(), scales, 1.0, 0.0, 100.0, 5.0, 1e-6).unwrap();
        let at_min: Vec<f32> = mins.iter().map(|&v| v as f32).collect();
        let at_max: Vec<f32> = maxs.iter().map(|&v| v as f32).collect();
        let below: Vec<f32> = mins.iter().map(|&v| v as f32 - 100.0).collect();
        let above: Vec<f32> = maxs.iter().map(|&v| v as f32 + 100.0).collect();
        for k in all_sets() {
            for x in [&at_min, &at_max, &below, &above] {
                assert_eq!(k.encode_query(x, &params).unwrap(), params.encode(x).unwrap());
            }
            let lo = k.encode_query(&at_min, &params).unwrap();
            assert!(lo.iter().all(|&c| c == 0));
            let hi = k.encode_query(&at_max, &params).unwrap();
            for (j, &c) in hi.iter().enumerate() {
                assert_eq!(c, if params.is_degenerate(j) { 0 } else { 255 });
            }
        }
    }
}
