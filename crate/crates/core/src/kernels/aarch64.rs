//! NEON tier for aarch64, where NEON is part of the baseline ISA.

use std::arch::aarch64::*;

use super::scalar::{self, U8_BLOCK};

pub(super) fn sq_l2_u8_neon(a: &[u8], b: &[u8]) -> u64 {
    assert_eq!(a.len(), b.len());
    // SAFETY: neon is mandatory on aarch64.
    unsafe { u8_neon(a, b) }
}

pub(super) fn sq_l2_f32_neon(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    // SAFETY: neon is mandatory on aarch64.
    unsafe { f32_neon(a, b) }
}

pub(super) fn encode_neon(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    assert!(x.len() == mins.len() && x.len() == scales.len() && x.len() == out.len());
    // SAFETY: neon is mandatory on aarch64.
    unsafe { enc_neon(x, mins, scales, out) }
}

#[target_feature(enable = "neon")]
unsafe fn u8_neon(a: &[u8], b: &[u8]) -> u64 {
    let mut total = 0u64;
    for (ba, bb) in a.chunks(U8_BLOCK).zip(b.chunks(U8_BLOCK)) {
        let len = ba.len();
        let (pa, pb) = (ba.as_ptr(), bb.as_ptr());
        let mut acc = vdupq_n_u32(0);
        let mut i = 0;
        while i + 16 <= len {
            let diff = vabdq_u8(vld1q_u8(pa.add(i)), vld1q_u8(pb.add(i)));
            // 255^2 fits in u16
            let lo = vmull_u8(vget_low_u8(diff), vget_low_u8(diff));
            let hi = vmull_high_u8(diff, diff);
            acc = vpadalq_u16(acc, lo);
            acc = vpadalq_u16(acc, hi);
            i += 16;
        }
        total += vaddvq_u32(acc) as u64;
        total += scalar::sq_l2_u8_block(&ba[i..], &bb[i..]) as u64;
    }
    total
}

#[target_feature(enable = "neon")]
unsafe fn f32_neon(a: &[f32], b: &[f32]) -> f32 {
    let len = a.len();
    let (pa, pb) = (a.as_ptr(), b.as_ptr());
    let mut acc0 = vdupq_n_f32(0.0);
    let mut acc1 = vdupq_n_f32(0.0);
    let mut i = 0;
    while i + 8 <= len {
        let d0 = vsubq_f32(vld1q_f32(pa.add(i)), vld1q_f32(pb.add(i)));
        let d1 = vsubq_f32(vld1q_f32(pa.add(i + 4)), vld1q_f32(pb.add(i + 4)));
        acc0 = vfmaq_f32(acc0, d0, d0);
        acc1 = vfmaq_f32(acc1, d1, d1);
        i += 8;
    }
    if i + 4 <= len {
        let d0 = vsubq_f32(vld1q_f32(pa.add(i)), vld1q_f32(pb.add(i)));
        acc0 = vfmaq_f32(acc0, d0, d0);
        i += 4;
    }
    let head = vaddvq_f32(vaddq_f32(acc0, acc1)) as f64;
    (head + scalar::sq_l2_f32_tail(&a[i..], &b[i..])) as f32
}

#[target_feature(enable = "neon")]
unsafe fn enc_neon(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    let len = x.len();
    let zero = vdupq_n_f64(0.0);
    let top = vdupq_n_f64(255.0);
    let half = vdupq_n_f64(0.5);
    let one = vdupq_n_f64(1.0);
    let mut i = 0;
    while i + 2 <= len {
        let v = vcvt_f64_f32(vld1_f32(x.as_ptr().add(i)));
        let t = vmulq_f64(vsubq_f64(v, vld1q_f64(mins.as_ptr().add(i))), vld1q_f64(scales.as_ptr().add(i)));
        let t = vminq_f64(vmaxq_f64(t, zero), top);
        let r = vrndnq_f64(t);
        let tie = vceqq_f64(vsubq_f64(t, r), half);
        let r = vaddq_f64(r, vreinterpretq_f64_u64(vandq_u64(tie, vreinterpretq_u64_f64(one))));
        let q = vcvtq_u64_f64(r);
        out[i] = vgetq_lane_u64::<0>(q) as u8;
        out[i + 1] = vgetq_lane_u64::<1>(q) as u8;
        i += 2;
    }
    scalar::encode_tail(&x[i..], &mins[i..], &scales[i..], &mut out[i..]);
}
