//! Portable reference kernels. Every vector tier must reproduce these:
//! bit-exactly for the integer kernel and the encoder, within summation
//! reordering for the float kernel.

/// Dimensions per 32-bit accumulation block of the integer kernel.
/// `255^2 * 4096` fits comfortably in `u32`.
pub const U8_BLOCK: usize = 4096;

pub fn sq_l2_u8(a: &[u8], b: &[u8]) -> u64 {
    assert_eq!(a.len(), b.len());
    let mut total = 0u64;
    for (ba, bb) in a.chunks(U8_BLOCK).zip(b.chunks(U8_BLOCK)) {
        total += sq_l2_u8_block(ba, bb) as u64;
    }
    total
}

#[inline]
pub(crate) fn sq_l2_u8_block(a: &[u8], b: &[u8]) -> u32 {
    let mut sum = 0u32;
    for (&x, &y) in a.iter().zip(b) {
        let t = x.abs_diff(y) as u32;
        sum += t * t;
    }
    sum
}

/// Each term is formed in `f32`; terms are accumulated in `f64`.
pub fn sq_l2_f32(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    sq_l2_f32_tail(a, b) as f32
}

#[inline]
pub(crate) fn sq_l2_f32_tail(a: &[f32], b: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let t = x - y;
        sum += (t * t) as f64;
    }
    sum
}

/// `round_half_away(clamp((x - min) * scale, 0, 255))` with `f64`
/// arithmetic. A zero scale encodes the whole dimension to 0.
pub fn encode(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    assert!(x.len() == mins.len() && x.len() == scales.len() && x.len() == out.len());
    encode_tail(x, mins, scales, out);
}

#[inline]
pub(crate) fn encode_tail(x: &[f32], mins: &[f64], scales: &[f64], out: &mut [u8]) {
    for (((o, &v), &lo), &s) in out.iter_mut().zip(x).zip(mins).zip(scales) {
        let t = (v as f64 - lo) * s;
        *o = t.clamp(0.0, 255.0).round() as u8;
    }
}
