//! x86_64 vector tiers: AVX-512 (F+BW), AVX2+FMA, and SSE2.
//!
//! The integer kernel follows the same schedule in every tier: absolute
//! difference of unsigned bytes, widening to 16 bits, squaring and pairwise
//! adding into 32-bit lanes with `madd`, then a horizontal add per
//! [`U8_BLOCK`] into a 64-bit total.
//!
//! The `pub(super)` safe wrappers may only be handed out after the matching
//! CPU feature check in `kernels::KernelSet::for_tier`.

use std::arch::x86_64::*;

use super::scalar::{self, U8_BLOCK};

// 2^52: adding and subtracting it rounds a non-negative f64 below 2^52 to
// the nearest integer, ties to even.
const ROUND_MAGIC: f64 = 4_503_599_627_370_496.0;

pub(super) fn sq_l2_u8_avx512(a: &[u8], b: &[u8]) -> u64 {
    assert_eq!(a.len(), b.len());
    // SAFETY: only reachable after avx512f/avx512bw detection.
    unsafe { u8_avx512(a, b) }
}

pub(super) fn sq_l2_u8_avx2(a: &[u8], b: &[u8]) -> u64 {
    assert_eq!(a.len(), b.len());
    // SAFETY: only reachable after avx2 detection.
    unsafe { u8_avx2(a, b) }
}

pub(super) fn sq_l2_u8_sse2(a: &[u8], b: &[u8]) -> u64 {
    assert_eq!(a.len(), b.len());
    // SAFETY: sse2 is part of the x86_64 baseline.
    unsafe { u8_sse2(a, b) }
}

pub(super) fn sq_l2_f32_avx512(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    // SAFETY: only reachable after avx512f detection.
    unsafe { f32_avx512(a, b) }
}

pub(super) fn sq_l2_f32_avx2(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    // SAFETY: only reachable after avx2/fma detection.
    unsafe { f32_avx2(a, b) }
}

pub(super) fn sq_l2_f32_sse2(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    // SAFETY: sse2 is part of the x86_64 baseline.
    unsafe { f32_sse2(a, b) }
}

pub(super) fn encode_avx512(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    assert!(x.len() == mins.len() && x.len() == scales.len() && x.len() == out.len());
    // SAFETY: only reachable after avx512f detection.
    unsafe { enc_avx512(x, mins, scales, out) }
}

pub(super) fn encode_avx2(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    assert!(x.len() == mins.len() && x.len() == scales.len() && x.len() == out.len());
    // SAFETY: only reachable after avx2 detection.
    unsafe { enc_avx2(x, mins, scales, out) }
}

pub(super) fn encode_sse2(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    assert!(x.len() == mins.len() && x.len() == scales.len() && x.len() == out.len());
    // SAFETY: sse2 is part of the x86_64 baseline.
    unsafe { enc_sse2(x, mins, scales, out) }
}

#[target_feature(enable = "avx512f,avx512bw")]
unsafe fn u8_avx512(a: &[u8], b: &[u8]) -> u64 {
    let mut total = 0u64;
    for (ba, bb) in a.chunks(U8_BLOCK).zip(b.chunks(U8_BLOCK)) {
        let len = ba.len();
        let (pa, pb) = (ba.as_ptr(), bb.as_ptr());
        let zero = _mm512_setzero_si512();
        let mut acc = _mm512_setzero_si512();
        let mut i = 0;
        while i + 64 <= len {
            let va = _mm512_loadu_si512(pa.add(i) as *const _);
            let vb = _mm512_loadu_si512(pb.add(i) as *const _);
            let diff = _mm512_or_si512(_mm512_subs_epu8(va, vb), _mm512_subs_epu8(vb, va));
            let lo = _mm512_unpacklo_epi8(diff, zero);
            let hi = _mm512_unpackhi_epi8(diff, zero);
            acc = _mm512_add_epi32(acc, _mm512_madd_epi16(lo, lo));
            acc = _mm512_add_epi32(acc, _mm512_madd_epi16(hi, hi));
            i += 64;
        }
        total += _mm512_reduce_add_epi32(acc) as u32 as u64;
        total += scalar::sq_l2_u8_block(&ba[i..], &bb[i..]) as u64;
    }
    total
}

#[target_feature(enable = "avx2")]
unsafe fn u8_avx2(a: &[u8], b: &[u8]) -> u64 {
    let mut total = 0u64;
    for (ba, bb) in a.chunks(U8_BLOCK).zip(b.chunks(U8_BLOCK)) {
        let len = ba.len();
        let (pa, pb) = (ba.as_ptr(), bb.as_ptr());
        let zero = _mm256_setzero_si256();
        let mut acc = _mm256_setzero_si256();
        let mut i = 0;
        while i + 32 <= len {
            let va = _mm256_loadu_si256(pa.add(i) as *const __m256i);
            let vb = _mm256_loadu_si256(pb.add(i) as *const __m256i);
            let diff = _mm256_or_si256(_mm256_subs_epu8(va, vb), _mm256_subs_epu8(vb, va));
            let lo = _mm256_unpacklo_epi8(diff, zero);
            let hi = _mm256_unpackhi_epi8(diff, zero);
            acc = _mm256_add_epi32(acc, _mm256_madd_epi16(lo, lo));
            acc = _mm256_add_epi32(acc, _mm256_madd_epi16(hi, hi));
            i += 32;
        }
        let s = _mm_add_epi32(_mm256_castsi256_si128(acc), _mm256_extracti128_si256(acc, 1));
        total += hsum_epi32_sse2(s) as u64;
        total += scalar::sq_l2_u8_block(&ba[i..], &bb[i..]) as u64;
    }
    total
}

#[target_feature(enable = "sse2")]
unsafe fn u8_sse2(a: &[u8], b: &[u8]) -> u64 {
    let mut total = 0u64;
    for (ba, bb) in a.chunks(U8_BLOCK).zip(b.chunks(U8_BLOCK)) {
        let len = ba.len();
        let (pa, pb) = (ba.as_ptr(), bb.as_ptr());
        let zero = _mm_setzero_si128();
        let mut acc = _mm_setzero_si128();
        let mut i = 0;
        while i + 16 <= len {
            let va = _mm_loadu_si128(pa.add(i) as *const __m128i);
            let vb = _mm_loadu_si128(pb.add(i) as *const __m128i);
            let diff = _mm_or_si128(_mm_subs_epu8(va, vb), _mm_subs_epu8(vb, va));
            let lo = _mm_unpacklo_epi8(diff, zero);
            let hi = _mm_unpackhi_epi8(diff, zero);
            acc = _mm_add_epi32(acc, _mm_madd_epi16(lo, lo));
            acc = _mm_add_epi32(acc, _mm_madd_epi16(hi, hi));
            i += 16;
        }
        total += hsum_epi32_sse2(acc) as u64;
        total += scalar::sq_l2_u8_block(&ba[i..], &bb[i..]) as u64;
    }
    total
}

#[inline]
#[target_feature(enable = "sse2")]
unsafe fn hsum_epi32_sse2(v: __m128i) -> u32 {
    let s = _mm_add_epi32(v, _mm_shuffle_epi32(v, 0b01_00_11_10));
    let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b10_11_00_01));
    _mm_cvtsi128_si32(s) as u32
}

#[target_feature(enable = "avx512f")]
unsafe fn f32_avx512(a: &[f32], b: &[f32]) -> f32 {
    let len = a.len();
    let (pa, pb) = (a.as_ptr(), b.as_ptr());
    let mut acc0 = _mm512_setzero_ps();
    let mut acc1 = _mm512_setzero_ps();
    let mut i = 0;
    while i + 32 <= len {
        let d0 = _mm512_sub_ps(_mm512_loadu_ps(pa.add(i)), _mm512_loadu_ps(pb.add(i)));
        let d1 = _mm512_sub_ps(_mm512_loadu_ps(pa.add(i + 16)), _mm512_loadu_ps(pb.add(i + 16)));
        acc0 = _mm512_fmadd_ps(d0, d0, acc0);
        acc1 = _mm512_fmadd_ps(d1, d1, acc1);
        i += 32;
    }
    if i + 16 <= len {
        let d0 = _mm512_sub_ps(_mm512_loadu_ps(pa.add(i)), _mm512_loadu_ps(pb.add(i)));
        acc0 = _mm512_fmadd_ps(d0, d0, acc0);
        i += 16;
    }
    let head = _mm512_reduce_add_ps(_mm512_add_ps(acc0, acc1)) as f64;
    (head + scalar::sq_l2_f32_tail(&a[i..], &b[i..])) as f32
}

#[target_feature(enable = "avx2,fma")]
unsafe fn f32_avx2(a: &[f32], b: &[f32]) -> f32 {
    let len = a.len();
    let (pa, pb) = (a.as_ptr(), b.as_ptr());
    let mut acc0 = _mm256_setzero_ps();
    let mut acc1 = _mm256_setzero_ps();
    let mut i = 0;
    while i + 16 <= len {
        let d0 = _mm256_sub_ps(_mm256_loadu_ps(pa.add(i)), _mm256_loadu_ps(pb.add(i)));
        let d1 = _mm256_sub_ps(_mm256_loadu_ps(pa.add(i + 8)), _mm256_loadu_ps(pb.add(i + 8)));
        acc0 = _mm256_fmadd_ps(d0, d0, acc0);
        acc1 = _mm256_fmadd_ps(d1, d1, acc1);
        i += 16;
    }
    if i + 8 <= len {
        let d0 = _mm256_sub_ps(_mm256_loadu_ps(pa.add(i)), _mm256_loadu_ps(pb.add(i)));
        acc0 = _mm256_fmadd_ps(d0, d0, acc0);
        i += 8;
    }
    let acc = _mm256_add_ps(acc0, acc1);
    let s = _mm_add_ps(_mm256_castps256_ps128(acc), _mm256_extractf128_ps(acc, 1));
    let head = hsum_ps_sse2(s) as f64;
    (head + scalar::sq_l2_f32_tail(&a[i..], &b[i..])) as f32
}

#[target_feature(enable = "sse2")]
unsafe fn f32_sse2(a: &[f32], b: &[f32]) -> f32 {
    let len = a.len();
    let (pa, pb) = (a.as_ptr(), b.as_ptr());
    let mut acc0 = _mm_setzero_ps();
    let mut acc1 = _mm_setzero_ps();
    let mut i = 0;
    while i + 8 <= len {
        let d0 = _mm_sub_ps(_mm_loadu_ps(pa.add(i)), _mm_loadu_ps(pb.add(i)));
        let d1 = _mm_sub_ps(_mm_loadu_ps(pa.add(i + 4)), _mm_loadu_ps(pb.add(i + 4)));
        acc0 = _mm_add_ps(acc0, _mm_mul_ps(d0, d0));
        acc1 = _mm_add_ps(acc1, _mm_mul_ps(d1, d1));
        i += 8;
    }
    if i + 4 <= len {
        let d0 = _mm_sub_ps(_mm_loadu_ps(pa.add(i)), _mm_loadu_ps(pb.add(i)));
        acc0 = _mm_add_ps(acc0, _mm_mul_ps(d0, d0));
        i += 4;
    }
    let head = hsum_ps_sse2(_mm_add_ps(acc0, acc1)) as f64;
    (head + scalar::sq_l2_f32_tail(&a[i..], &b[i..])) as f32
}

#[inline]
#[target_feature(enable = "sse2")]
unsafe fn hsum_ps_sse2(v: __m128) -> f32 {
    let s = _mm_add_ps(v, _mm_movehl_ps(v, v));
    let s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 0b01));
    _mm_cvtss_f32(s)
}

#[target_feature(enable = "avx512f")]
unsafe fn enc_avx512(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    let len = x.len();
    let zero = _mm512_setzero_pd();
    let top = _mm512_set1_pd(255.0);
    let magic = _mm512_set1_pd(ROUND_MAGIC);
    let half = _mm512_set1_pd(0.5);
    let one = _mm512_set1_pd(1.0);
    let mut lanes = [0i32; 8];
    let mut i = 0;
    while i + 8 <= len {
        let v = _mm512_cvtps_pd(_mm256_loadu_ps(x.as_ptr().add(i)));
        let t = _mm512_mul_pd(
            _mm512_sub_pd(v, _mm512_loadu_pd(mins.as_ptr().add(i))),
            _mm512_loadu_pd(scales.as_ptr().add(i)),
        );
        let t = _mm512_min_pd(_mm512_max_pd(t, zero), top);
        let r = _mm512_sub_pd(_mm512_add_pd(t, magic), magic);
        // ties went to even; push exact halves up
        let tie = _mm512_cmp_pd_mask::<_CMP_EQ_OQ>(_mm512_sub_pd(t, r), half);
        let r = _mm512_mask_add_pd(r, tie, r, one);
        _mm256_storeu_si256(lanes.as_mut_ptr() as *mut __m256i, _mm512_cvttpd_epi32(r));
        for (o, &l) in out[i..i + 8].iter_mut().zip(&lanes) {
            *o = l as u8;
        }
        i += 8;
    }
    scalar::encode_tail(&x[i..], &mins[i..], &scales[i..], &mut out[i..]);
}

#[target_feature(enable = "avx2")]
unsafe fn enc_avx2(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    let len = x.len();
    let zero = _mm256_setzero_pd();
    let top = _mm256_set1_pd(255.0);
    let magic = _mm256_set1_pd(ROUND_MAGIC);
    let half = _mm256_set1_pd(0.5);
    let one = _mm256_set1_pd(1.0);
    let mut lanes = [0i32; 4];
    let mut i = 0;
    while i + 4 <= len {
        let v = _mm256_cvtps_pd(_mm_loadu_ps(x.as_ptr().add(i)));
        let t = _mm256_mul_pd(
            _mm256_sub_pd(v, _mm256_loadu_pd(mins.as_ptr().add(i))),
            _mm256_loadu_pd(scales.as_ptr().add(i)),
        );
        let t = _mm256_min_pd(_mm256_max_pd(t, zero), top);
        let r = _mm256_sub_pd(_mm256_add_pd(t, magic), magic);
        let tie = _mm256_cmp_pd::<_CMP_EQ_OQ>(_mm256_sub_pd(t, r), half);
        let r = _mm256_add_pd(r, _mm256_and_pd(tie, one));
        _mm_storeu_si128(lanes.as_mut_ptr() as *mut __m128i, _mm256_cvttpd_epi32(r));
        for (o, &l) in out[i..i + 4].iter_mut().zip(&lanes) {
            *o = l as u8;
        }
        i += 4;
    }
    scalar::encode_tail(&x[i..], &mins[i..], &scales[i..], &mut out[i..]);
}

#[target_feature(enable = "sse2")]
unsafe fn enc_sse2(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    let len = x.len();
    let zero = _mm_setzero_pd();
    let top = _mm_set1_pd(255.0);
    let magic = _mm_set1_pd(ROUND_MAGIC);
    let half = _mm_set1_pd(0.5);
    let one = _mm_set1_pd(1.0);
    let mut lanes = [0i32; 4];
    let mut i = 0;
    while i + 2 <= len {
        let v = _mm_cvtps_pd(_mm_set_ps(0.0, 0.0, x[i + 1], x[i]));
        let t = _mm_mul_pd(
            _mm_sub_pd(v, _mm_loadu_pd(mins.as_ptr().add(i))),
            _mm_loadu_pd(scales.as_ptr().add(i)),
        );
        let t = _mm_min_pd(_mm_max_pd(t, zero), top);
        let r = _mm_sub_pd(_mm_add_pd(t, magic), magic);
        let tie = _mm_cmpeq_pd(_mm_sub_pd(t, r), half);
        let r = _mm_add_pd(r, _mm_and_pd(tie, one));
        _mm_storeu_si128(lanes.as_mut_ptr() as *mut __m128i, _mm_cvttpd_epi32(r));
        out[i] = lanes[0] as u8;
        out[i + 1] = lanes[1] as u8;
        i += 2;
    }
    scalar::encode_tail(&x[i..], &mins[i..], &scales[i..], &mut out[i..]);
}
